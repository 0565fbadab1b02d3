#pragma once

#include <stdexcept>
#include <string>

namespace longfpca {

// Base of every error thrown by the library. Callers that only care whether
// something went wrong catch this; tests check the concrete type.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

#define LONGFPCA_DEFINE_ERROR(Name)              \
    class Name : public Error {                  \
    public:                                      \
        using Error::Error;                      \
    }

// data_model
LONGFPCA_DEFINE_ERROR(SchemaError);
LONGFPCA_DEFINE_ERROR(ParseError);
LONGFPCA_DEFINE_ERROR(DuplicateObservationError);
LONGFPCA_DEFINE_ERROR(SizeError);
LONGFPCA_DEFINE_ERROR(ParameterError);
LONGFPCA_DEFINE_ERROR(InvariantError);
LONGFPCA_DEFINE_ERROR(IoError);

// kernel_smoothing
LONGFPCA_DEFINE_ERROR(BandwidthTooSmallError);
LONGFPCA_DEFINE_ERROR(NoValidBandwidthError);

// fpca_engine
LONGFPCA_DEFINE_ERROR(CovarianceUnidentifiableError);
LONGFPCA_DEFINE_ERROR(DegenerateModelError);
LONGFPCA_DEFINE_ERROR(ContractViolation);
LONGFPCA_DEFINE_ERROR(ExtrapolationError);

// spline_basis
LONGFPCA_DEFINE_ERROR(DegenerateKnotsError);
LONGFPCA_DEFINE_ERROR(SpecError);

// lmm_engine
LONGFPCA_DEFINE_ERROR(IdentifiabilityError);

// simulation
LONGFPCA_DEFINE_ERROR(CalibrationError);

// evaluation
LONGFPCA_DEFINE_ERROR(NoDataError);
LONGFPCA_DEFINE_ERROR(DegenerateReferenceError);

// cli
LONGFPCA_DEFINE_ERROR(ConfigError);

// model files
LONGFPCA_DEFINE_ERROR(FormatError);

#undef LONGFPCA_DEFINE_ERROR

}  // namespace longfpca
