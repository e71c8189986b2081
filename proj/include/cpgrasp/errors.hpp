#pragma once

#include <stdexcept>
#include <string>

namespace cpgrasp {

// Base for every error raised by the library. Each subtype maps to one
// failure mode of a public operation so callers can catch narrowly.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define CPGRASP_DEFINE_ERROR(Name)                                 \
  class Name : public Error {                                      \
   public:                                                         \
    explicit Name(const std::string& what) : Error(#Name ": " + what) {} \
  }

CPGRASP_DEFINE_ERROR(DegeneratePair);
CPGRASP_DEFINE_ERROR(ParallelApproach);
CPGRASP_DEFINE_ERROR(BehindCamera);
CPGRASP_DEFINE_ERROR(DimensionMismatch);
CPGRASP_DEFINE_ERROR(OutOfBounds);
CPGRASP_DEFINE_ERROR(EmptyVolume);
CPGRASP_DEFINE_ERROR(NonUnitInput);
CPGRASP_DEFINE_ERROR(DegenerateGraspVector);
CPGRASP_DEFINE_ERROR(MissingShapeLabels);
CPGRASP_DEFINE_ERROR(InvalidArgument);
CPGRASP_DEFINE_ERROR(IoError);

#undef CPGRASP_DEFINE_ERROR

}  // namespace cpgrasp
