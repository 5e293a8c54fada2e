#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace selffed {

// Base class for every error thrown by this library.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

#define SELFFED_DEFINE_ERROR(NAME) \
    struct NAME : Error {          \
        using Error::Error;        \
    }

// tensor / autodiff
SELFFED_DEFINE_ERROR(ShapeMismatch);
SELFFED_DEFINE_ERROR(NonFinite);
SELFFED_DEFINE_ERROR(NotScalarLoss);
SELFFED_DEFINE_ERROR(GraphNotEvaluated);
SELFFED_DEFINE_ERROR(MissingGradient);
SELFFED_DEFINE_ERROR(NormalizationError);

// patching / augmentation
SELFFED_DEFINE_ERROR(IndivisibleImage);
SELFFED_DEFINE_ERROR(CropTooLarge);
SELFFED_DEFINE_ERROR(CountMismatch);

// losses / queue
SELFFED_DEFINE_ERROR(EmptyMaskSet);
SELFFED_DEFINE_ERROR(EmptyQueue);
SELFFED_DEFINE_ERROR(ZeroTemperature);
SELFFED_DEFINE_ERROR(NonUnitNorm);
SELFFED_DEFINE_ERROR(LabelOutOfRange);

// federation
SELFFED_DEFINE_ERROR(EmptyUpdateSet);
SELFFED_DEFINE_ERROR(BetaOutOfRange);
SELFFED_DEFINE_ERROR(EmptyShard);
SELFFED_DEFINE_ERROR(EmptyLabeledShard);
SELFFED_DEFINE_ERROR(EmptyBatch);

// data
SELFFED_DEFINE_ERROR(TooFewSamples);
SELFFED_DEFINE_ERROR(FractionOutOfRange);
SELFFED_DEFINE_ERROR(UnreadableImage);
SELFFED_DEFINE_ERROR(SizeMismatch);
SELFFED_DEFINE_ERROR(UnknownLabel);

// config / harness
SELFFED_DEFINE_ERROR(ParseError);
SELFFED_DEFINE_ERROR(ValidationError);
SELFFED_DEFINE_ERROR(IncompatibleRuns);
SELFFED_DEFINE_ERROR(IoError);

#undef SELFFED_DEFINE_ERROR

}  // namespace selffed
