#pragma once

#include <cstddef>
#include <vector>

#include "apa/error.hpp"

namespace apa {

/// Minimal dense row-major matrix for the small normal-equation systems
/// used by the GLM solver (P columns, P <= a few dozen).
struct Mat {
  std::size_t rows = 0, cols = 0;
  std::vector<double> v;

  Mat() = default;
  Mat(std::size_t r, std::size_t c) : rows(r), cols(c), v(r * c, 0.0) {}

  double& operator()(std::size_t i, std::size_t j) { return v[i * cols + j]; }
  double operator()(std::size_t i, std::size_t j) const { return v[i * cols + j]; }
};

Mat matmul(const Mat& a, const Mat& b);
Mat transpose(const Mat& a);

/// In-place lower Cholesky of a symmetric positive-definite matrix.
/// Returns the index of the first non-positive pivot, or rows on success.
std::size_t cholesky_factor(Mat& a);

/// Solves L L^T x = b given the lower factor from cholesky_factor.
std::vector<double> cholesky_solve(const Mat& lower, const std::vector<double>& b);

}  // namespace apa
