#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "synct/error.hpp"

namespace synct {

using SymbolId = std::int32_t;
using LabelSequence = std::vector<SymbolId>;

// Raw input frames x_{1:T}: a T×dim row-major matrix.
template <class T>
class FeatureSequence {
 public:
  FeatureSequence() = default;
  explicit FeatureSequence(std::size_t dim) : dim_(dim) {}
  FeatureSequence(std::size_t frames, std::size_t dim, std::vector<T> values,
                  double frame_shift_ms = 10.0)
      : dim_(dim), values_(std::move(values)), frame_shift_ms_(frame_shift_ms) {
    if (values_.size() != frames * dim) {
      fail(ErrorCode::kShape, "feature data length " +
                                  std::to_string(values_.size()) +
                                  " does not match " + std::to_string(frames) +
                                  "x" + std::to_string(dim));
    }
  }

  std::size_t frames() const { return dim_ == 0 ? 0 : values_.size() / dim_; }
  std::size_t dim() const { return dim_; }
  double frame_shift_ms() const { return frame_shift_ms_; }
  bool empty() const { return values_.empty(); }

  std::span<const T> values() const { return values_; }
  std::span<T> mutable_values() { return values_; }
  std::span<const T> row(std::size_t t) const {
    return std::span<const T>(values_).subspan(t * dim_, dim_);
  }

  void append(const FeatureSequence& other) {
    if (other.empty()) return;
    if (dim_ == 0 && values_.empty()) dim_ = other.dim_;
    if (other.dim_ != dim_) {
      fail(ErrorCode::kShape, "feature dimension mismatch: " +
                                  std::to_string(other.dim_) + " vs " +
                                  std::to_string(dim_));
    }
    values_.insert(values_.end(), other.values_.begin(), other.values_.end());
  }

  FeatureSequence slice(std::size_t begin, std::size_t end) const {
    if (begin > end || end > frames()) {
      fail(ErrorCode::kShape, "feature slice out of range");
    }
    return FeatureSequence(end - begin, dim_,
                           std::vector<T>(values_.begin() + begin * dim_,
                                          values_.begin() + end * dim_),
                           frame_shift_ms_);
  }

  template <class U>
  FeatureSequence<U> cast() const {
    return FeatureSequence<U>(frames(), dim_,
                              std::vector<U>(values_.begin(), values_.end()),
                              frame_shift_ms_);
  }

 private:
  std::size_t dim_ = 0;
  std::vector<T> values_;
  double frame_shift_ms_ = 10.0;
};

}  // namespace synct
