#pragma once

#include <stdexcept>
#include <string>

namespace milforge {

// Base for every library error. `is_data_error()` drives the CLI exit-code
// split between bad inputs (2) and bugs or contract violations (3).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual bool is_data_error() const { return false; }
};

#define MILFORGE_DEFINE_ERROR(Name, Base, data)          \
  class Name : public Base {                             \
   public:                                               \
    using Base::Base;                                    \
    bool is_data_error() const override { return data; } \
  };

MILFORGE_DEFINE_ERROR(ShapeError, Error, false)
MILFORGE_DEFINE_ERROR(ParameterError, Error, false)
MILFORGE_DEFINE_ERROR(ContractError, Error, false)
MILFORGE_DEFINE_ERROR(EmptyBagError, Error, true)
MILFORGE_DEFINE_ERROR(ConfigError, Error, true)
MILFORGE_DEFINE_ERROR(BoundsError, Error, false)
MILFORGE_DEFINE_ERROR(AlignmentError, Error, false)
MILFORGE_DEFINE_ERROR(IoError, Error, true)
MILFORGE_DEFINE_ERROR(FormatError, IoError, true)
MILFORGE_DEFINE_ERROR(ChecksumError, FormatError, true)
MILFORGE_DEFINE_ERROR(TruncatedError, FormatError, true)
MILFORGE_DEFINE_ERROR(DimensionError, Error, true)
MILFORGE_DEFINE_ERROR(StratificationError, Error, true)
MILFORGE_DEFINE_ERROR(MetricError, Error, true)
MILFORGE_DEFINE_ERROR(AggregationError, Error, true)
MILFORGE_DEFINE_ERROR(DataError, Error, true)

#undef MILFORGE_DEFINE_ERROR

}  // namespace milforge
