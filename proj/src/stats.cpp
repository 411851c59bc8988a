#include "sigctrl/stats.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace sigctrl {

namespace {

std::vector<double> average_ranks(const std::vector<double>& v) {
  const int n = static_cast<int>(v.size());
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) { return v[a] < v[b]; });
  std::vector<double> ranks(n);
  int i = 0;
  while (i < n) {
    int j = i;
    while (j + 1 < n && v[order[j + 1]] == v[order[i]]) ++j;
    double r = 0.5 * (i + j) + 1.0;  // average of 1-based ranks i+1..j+1
    for (int k = i; k <= j; ++k) ranks[order[k]] = r;
    i = j + 1;
  }
  return ranks;
}

}  // namespace

double spearman(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw LengthMismatch("spearman inputs differ in length");
  const int n = static_cast<int>(a.size());
  if (n < 2) throw LengthMismatch("spearman needs at least 2 points");
  if (std::equal(a.begin() + 1, a.end(), a.begin()) || std::equal(b.begin() + 1, b.end(), b.begin()))
    throw DegenerateConstantInput("spearman undefined for constant input");

  std::vector<double> ra = average_ranks(a), rb = average_ranks(b);
  double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / n;
  double mb = std::accumulate(rb.begin(), rb.end(), 0.0) / n;
  double num = 0, va = 0, vb = 0;
  for (int i = 0; i < n; ++i) {
    num += (ra[i] - ma) * (rb[i] - mb);
    va += (ra[i] - ma) * (ra[i] - ma);
    vb += (rb[i] - mb) * (rb[i] - mb);
  }
  return num / std::sqrt(va * vb);
}

double median(std::vector<double> v) {
  if (v.empty()) throw EmptySample("median of empty list");
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace sigctrl
