#pragma once

#include <stdexcept>
#include <string>

namespace stereopose {

// Error taxonomy maps onto CLI exit codes: usage = 1, data = 2, numeric = 3.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct NonPositiveDisparity : NumericError {
  explicit NonPositiveDisparity(int joint)
      : NumericError("NonPositiveDisparity: joint " + std::to_string(joint)),
        joint(joint) {}
  int joint;
};

struct NonPositiveDepth : NumericError {
  explicit NonPositiveDepth(int joint)
      : NumericError("NonPositiveDepth: joint " + std::to_string(joint)),
        joint(joint) {}
  int joint;
};

struct DegenerateBox : NumericError {
  DegenerateBox() : NumericError("DegenerateBox: coincident joints with zero margin") {}
};

struct ShapeMismatch : NumericError {
  explicit ShapeMismatch(const std::string& what) : NumericError("ShapeMismatch: " + what) {}
};

struct InvalidConfig : UsageError {
  explicit InvalidConfig(const std::string& what) : UsageError("InvalidConfig: " + what) {}
};

struct CorruptCheckpoint : DataError {
  explicit CorruptCheckpoint(const std::string& what)
      : DataError("CorruptCheckpoint: " + what) {}
};

struct CorruptDataset : DataError {
  explicit CorruptDataset(const std::string& what) : DataError("CorruptDataset: " + what) {}
};

struct EmptyHeatmap : NumericError {
  explicit EmptyHeatmap(int joint)
      : NumericError("EmptyHeatmap: joint " + std::to_string(joint) +
                     " too far outside the grid"),
        joint(joint) {}
  int joint;
};

struct UnnormalizedTarget : NumericError {
  explicit UnnormalizedTarget(int joint, double sum)
      : NumericError("UnnormalizedTarget: joint " + std::to_string(joint) + " sums to " +
                     std::to_string(sum)),
        joint(joint) {}
  int joint;
};

struct HandOutOfFrustum : NumericError {
  explicit HandOutOfFrustum(int joint)
      : NumericError("HandOutOfFrustum: joint " + std::to_string(joint) +
                     " projects outside an image"),
        joint(joint) {}
  int joint;
};

struct IllegalAugmentation : UsageError {
  explicit IllegalAugmentation(const std::string& what)
      : UsageError("IllegalAugmentation: " + what) {}
};

struct FrozenViolation : NumericError {
  explicit FrozenViolation(const std::string& name)
      : NumericError("FrozenViolation: parameter " + name + " changed while frozen") {}
};

}  // namespace stereopose
