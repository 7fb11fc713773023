#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <string>

namespace mabr {

// Dense storage for everything numeric. All floating-point state is 64-bit;
// integer matrices carry token ids and labels.
template <class Scalar>
using MatX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <class Scalar>
using VecX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

using Matrix = MatX<double>;
using Vector = VecX<double>;
using IntMatrix = MatX<int>;
using BoolMatrix = MatX<bool>;
using Index = Eigen::Index;

inline std::string shape_str(Index rows, Index cols) {
  return std::to_string(rows) + "x" + std::to_string(cols);
}

inline std::string shape_str(const Matrix& m) { return shape_str(m.rows(), m.cols()); }

// SplitMix64; used to derive independent stream seeds from one run seed.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (salt + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace mabr
