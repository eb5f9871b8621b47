#pragma once

#include <stdexcept>
#include <string>

namespace stroke {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Corpus root is missing one of the class subdirectories.
struct CorpusLayoutError : Error { using Error::Error; };
// A class has zero images (or a zero count where a positive one is required).
struct EmptyClassError : Error { using Error::Error; };
// A class is too small to stratify.
struct StratificationError : Error { using Error::Error; };
struct ImageDecodeError : Error { using Error::Error; };
// Pipeline stages invoked in the wrong order (e.g. augment after normalize).
struct OrderingError : Error { using Error::Error; };

/// Tensor arguments whose shapes cannot be combined.
struct ShapeError : Error { using Error::Error; };
struct ConfigError : Error { using Error::Error; };
struct IoError : Error { using Error::Error; };
// Synthetic data offered for a class the augmentation policy excludes.
struct PolicyViolationError : Error { using Error::Error; };
// A pipeline stage was invoked before the artifacts it needs exist.
struct DependencyError : Error { using Error::Error; };
struct NumericError : Error { using Error::Error; };
// XAI probe requested on a layer that has no spatial interpretation.
struct ProbeError : Error { using Error::Error; };
// Parameter archive does not match the expected schema.
struct SchemaError : Error { using Error::Error; };

}  // namespace stroke
