#pragma once

#include <cstdint>
#include <vector>

#include "mmfn/model.hpp"

namespace mmfn {

using Mask = std::vector<std::uint8_t>;

// Rectangular lattice of points j * step(axis) for integer j in
// [lo_index, lo_index + count). Flat indices are row-major with the last axis
// fastest.
class Lattice {
 public:
  Lattice() = default;
  Lattice(std::vector<int> lo_index, std::vector<int> count, Vec step);

  int dim() const { return static_cast<int>(count_.size()); }
  std::size_t size() const { return size_; }
  int count(int axis) const { return count_[axis]; }
  int lo_index(int axis) const { return lo_[axis]; }
  double step(int axis) const { return step_(axis); }
  const Vec& steps() const { return step_; }
  std::size_t stride(int axis) const { return stride_[axis]; }

  double coord(int axis, int i) const { return (lo_[axis] + i) * step_(axis); }
  int axis_index(std::size_t flat, int axis) const {
    return static_cast<int>((flat / stride_[axis]) % static_cast<std::size_t>(count_[axis]));
  }
  Vec point(std::size_t flat) const;
  std::size_t flatten(const std::vector<int>& idx) const;
  // Local index of the origin along an axis.
  int zero_index(int axis) const { return -lo_[axis]; }

  // The lattice with one axis removed, and the matching index map.
  Lattice drop_axis(int k) const;
  std::size_t project(std::size_t flat, int k) const {
    const std::size_t block = stride_[k] * static_cast<std::size_t>(count_[k]);
    return (flat / block) * stride_[k] + flat % stride_[k];
  }

 private:
  std::vector<int> lo_, count_;
  Vec step_;
  std::vector<std::size_t> stride_;
  std::size_t size_ = 0;
};

// In-place closure under coordinatewise decrease.
void down_close(const Lattice& lat, Mask& mask);
bool is_down_set(const Lattice& lat, const Mask& mask);

}  // namespace mmfn
