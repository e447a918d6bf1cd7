#include "mmfn/lattice.hpp"

#include "mmfn/error.hpp"

namespace mmfn {

Lattice::Lattice(std::vector<int> lo_index, std::vector<int> count, Vec step)
    : lo_(std::move(lo_index)), count_(std::move(count)), step_(std::move(step)) {
  const int d = static_cast<int>(count_.size());
  if (static_cast<int>(lo_.size()) != d || step_.size() != d)
    throw StructuralError("lattice dimensions disagree");
  stride_.assign(d, 1);
  for (int a = d - 2; a >= 0; --a) stride_[a] = stride_[a + 1] * count_[a + 1];
  size_ = d == 0 ? 1 : stride_[0] * count_[0];
}

Vec Lattice::point(std::size_t flat) const {
  Vec p(dim());
  for (int a = 0; a < dim(); ++a) p(a) = coord(a, axis_index(flat, a));
  return p;
}

std::size_t Lattice::flatten(const std::vector<int>& idx) const {
  std::size_t f = 0;
  for (int a = 0; a < dim(); ++a) f += stride_[a] * idx[a];
  return f;
}

Lattice Lattice::drop_axis(int k) const {
  std::vector<int> lo, cnt;
  Vec st(dim() - 1);
  for (int a = 0, b = 0; a < dim(); ++a) {
    if (a == k) continue;
    lo.push_back(lo_[a]);
    cnt.push_back(count_[a]);
    st(b++) = step_(a);
  }
  return Lattice(std::move(lo), std::move(cnt), std::move(st));
}

void down_close(const Lattice& lat, Mask& mask) {
  for (int a = 0; a < lat.dim(); ++a) {
    const std::size_t s = lat.stride(a);
    const int n = lat.count(a);
    // Sweep from the top index down so membership propagates in one pass.
    for (std::size_t f = lat.size(); f-- > 0;) {
      if (lat.axis_index(f, a) + 1 < n && mask[f + s]) mask[f] = 1;
    }
  }
}

bool is_down_set(const Lattice& lat, const Mask& mask) {
  for (std::size_t f = 0; f < lat.size(); ++f) {
    if (!mask[f]) continue;
    for (int a = 0; a < lat.dim(); ++a)
      if (lat.axis_index(f, a) > 0 && !mask[f - lat.stride(a)]) return false;
  }
  return true;
}

}  // namespace mmfn
