#pragma once

#include <stdexcept>
#include <string>

namespace skinret {

// Base of every error thrown by the library. Callers that do not care about
// the category can catch this one.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define SKINRET_DEFINE_ERROR(Name) \
  class Name : public Error {      \
   public:                         \
    using Error::Error;            \
  }

SKINRET_DEFINE_ERROR(DimensionError);
SKINRET_DEFINE_ERROR(InvalidQuaternion);
SKINRET_DEFINE_ERROR(InvalidSkeleton);
SKINRET_DEFINE_ERROR(InvalidRig);
SKINRET_DEFINE_ERROR(LabelingError);
SKINRET_DEFINE_ERROR(NonWatertight);
SKINRET_DEFINE_ERROR(UndefinedMean);
SKINRET_DEFINE_ERROR(TapeError);
SKINRET_DEFINE_ERROR(ShapeError);
SKINRET_DEFINE_ERROR(ConfigError);
SKINRET_DEFINE_ERROR(ParseError);
SKINRET_DEFINE_ERROR(ValidationError);
SKINRET_DEFINE_ERROR(DivergenceError);

#undef SKINRET_DEFINE_ERROR

}  // namespace skinret
