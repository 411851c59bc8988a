#pragma once

#include <stdexcept>
#include <string>

namespace sigctrl {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

#define SIGCTRL_DEFINE_ERROR(Name) \
  struct Name : Error {            \
    using Error::Error;            \
  }

// path-core
SIGCTRL_DEFINE_ERROR(NonMonotoneTimes);
SIGCTRL_DEFINE_ERROR(NonFiniteValue);
SIGCTRL_DEFINE_ERROR(LengthMismatch);
SIGCTRL_DEFINE_ERROR(TooFewPointsRemain);
SIGCTRL_DEFINE_ERROR(OutOfRange);
SIGCTRL_DEFINE_ERROR(ZeroVariance);
SIGCTRL_DEFINE_ERROR(DegenerateBounds);
SIGCTRL_DEFINE_ERROR(NonPositiveForLog);

// sde-engine / models
SIGCTRL_DEFINE_ERROR(NonFiniteState);
SIGCTRL_DEFINE_ERROR(NonFiniteGradient);
SIGCTRL_DEFINE_ERROR(DivergedTraining);
SIGCTRL_DEFINE_ERROR(DivergedOptimization);
SIGCTRL_DEFINE_ERROR(IntegrationDiverged);

// kernels / statistics
SIGCTRL_DEFINE_ERROR(EmptyPath);
SIGCTRL_DEFINE_ERROR(EmptySample);
SIGCTRL_DEFINE_ERROR(SampleTooSmall);
SIGCTRL_DEFINE_ERROR(SingularSystem);
SIGCTRL_DEFINE_ERROR(SizeMismatch);
SIGCTRL_DEFINE_ERROR(ShapeMismatch);
SIGCTRL_DEFINE_ERROR(HorizonMismatch);
SIGCTRL_DEFINE_ERROR(DegenerateConstantInput);

// cli
SIGCTRL_DEFINE_ERROR(MissingArtifact);
SIGCTRL_DEFINE_ERROR(ConfigInvalid);

#undef SIGCTRL_DEFINE_ERROR

}  // namespace sigctrl
