#pragma once

#include <vector>

#include "sigctrl/errors.hpp"

namespace sigctrl {

// Spearman rank correlation with average-rank tie handling.
double spearman(const std::vector<double>& a, const std::vector<double>& b);

double median(std::vector<double> v);

}  // namespace sigctrl
