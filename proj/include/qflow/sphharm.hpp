#pragma once

#include <span>

#include "qflow/types.hpp"

namespace qflow::sh {

/// Highest supported even truncation order.
inline constexpr int kMaxOrder = 16;

/// One term of the real, antipodally symmetric harmonic basis (even l only).
struct ShIndex {
  int l = 0;
  int m = 0;
  friend bool operator==(const ShIndex&, const ShIndex&) = default;
};

/// Number of terms for even truncation order L: (L+1)(L+2)/2.
int sh_count(int L);

/// 0-based linear index of (l, m). Degrees are stored in ascending order,
/// orders ascending from -l to l within a degree.
constexpr int linear_index(int l, int m) noexcept { return l * (l + 1) / 2 + m; }

/// Inverse of linear_index.
ShIndex index_of(int j);

/// First linear index of degree l.
constexpr int degree_offset(int l) noexcept { return l * (l - 1) / 2; }

/// Evaluate Y_j(u). Throws Domain if u is not unit length within 1e-10.
double sh_eval(ShIndex j, const Vec3& u);

/// Evaluate all sh_count(L) harmonics at u into out. u is assumed unit length;
/// this is the unchecked batch path used by the basis and rotation code.
void sh_eval_all(int L, const Vec3& u, std::span<double> out);

}  // namespace qflow::sh
