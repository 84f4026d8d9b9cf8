#pragma once

#include <cstddef>
#include <vector>

#include "wep/matrix.hpp"
#include "wep/rng.hpp"

// Small dense linear algebra for the identifiability lab. Sizes are tiny
// (tens of rows), so everything is straightforward O(n^3).

namespace wep::linalg {

Matrix identity(std::size_t n);
Matrix transpose(const Matrix& a);
Matrix multiply(const Matrix& a, const Matrix& b);

/// LU factorization with partial pivoting: P*A = L*U, packed in `lu`.
struct LuFactors {
  Matrix lu;
  std::vector<std::size_t> perm;
  int sign = 1;
  bool singular = false;
};

/// Pivots with magnitude <= tolerance are treated as zero (marks `singular`).
LuFactors lu_factor(const Matrix& a, double tolerance = 0.0);

double determinant(const Matrix& a);

/// Throws RankDeficiencyError when the matrix is singular.
Matrix inverse(const Matrix& a);

/// Rank by Gaussian elimination with partial pivoting; a pivot counts as zero
/// when its magnitude is <= relative_tolerance * max|a_ij|.
std::size_t rank(const Matrix& a, double relative_tolerance);

/// Lower-triangular Cholesky factor of a symmetric positive-definite matrix.
/// Throws RankDeficiencyError if a pivot falls below
/// relative_tolerance * max diagonal entry.
Matrix cholesky(const Matrix& spd, double relative_tolerance = 1e-12);

/// Solves (L L^T) X = B given the Cholesky factor L.
Matrix cholesky_solve(const Matrix& lower, const Matrix& rhs);

/// Haar-ish random orthogonal matrix from Gram-Schmidt on Gaussian columns.
Matrix random_orthogonal(std::size_t n, Rng& rng);

}  // namespace wep::linalg
