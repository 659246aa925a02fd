#include "dan/common.hpp"

#include <sstream>

namespace dan {

std::string shape_string(const Tensor& t) {
  std::ostringstream out;
  out << '[';
  for (int64_t i = 0; i < t.dim(); ++i) {
    if (i) out << ", ";
    out << t.size(i);
  }
  out << ']';
  return out.str();
}

void require_image(const Tensor& t, int64_t channels, const char* what) {
  if (!t.defined()) throw DimensionError(std::string(what) + ": undefined tensor");
  if (t.dim() != 4 || (channels >= 0 && t.size(1) != channels)) {
    throw DimensionError(std::string(what) + ": expected [N, " +
                         (channels >= 0 ? std::to_string(channels) : std::string("C")) +
                         ", H, W], got " + shape_string(t));
  }
}

void require_same_grid(const Tensor& a, const Tensor& b, const char* what) {
  if (a.dim() != 4 || b.dim() != 4 || a.size(0) != b.size(0) || a.size(2) != b.size(2) ||
      a.size(3) != b.size(3)) {
    throw DimensionError(std::string(what) + ": size mismatch " + shape_string(a) + " vs " +
                         shape_string(b));
  }
}

}  // namespace dan
