#include "wep/linalg.hpp"

#include <cmath>
#include <numeric>
#include <string>
#include <utility>

#include "wep/error.hpp"

namespace wep::linalg {

Matrix identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

Matrix transpose(const Matrix& a) {
  Matrix t(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
  return t;
}

Matrix multiply(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) throw DomainError("multiply: inner dimensions differ");
  Matrix c(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      for (std::size_t j = 0; j < b.cols(); ++j) c(i, j) += aik * b(k, j);
    }
  return c;
}

LuFactors lu_factor(const Matrix& a, double tolerance) {
  if (a.rows() != a.cols()) throw DomainError("lu_factor: matrix is not square");
  const std::size_t n = a.rows();
  LuFactors f{a, std::vector<std::size_t>(n), 1, false};
  std::iota(f.perm.begin(), f.perm.end(), std::size_t{0});
  Matrix& lu = f.lu;
  for (std::size_t k = 0; k < n; ++k) {
    std::size_t pivot = k;
    for (std::size_t i = k + 1; i < n; ++i)
      if (std::abs(lu(i, k)) > std::abs(lu(pivot, k))) pivot = i;
    if (std::abs(lu(pivot, k)) <= tolerance) {
      f.singular = true;
      continue;
    }
    if (pivot != k) {
      for (std::size_t j = 0; j < n; ++j) std::swap(lu(k, j), lu(pivot, j));
      std::swap(f.perm[k], f.perm[pivot]);
      f.sign = -f.sign;
    }
    for (std::size_t i = k + 1; i < n; ++i) {
      lu(i, k) /= lu(k, k);
      const double m = lu(i, k);
      for (std::size_t j = k + 1; j < n; ++j) lu(i, j) -= m * lu(k, j);
    }
  }
  return f;
}

double determinant(const Matrix& a) {
  const LuFactors f = lu_factor(a);
  if (f.singular) return 0.0;
  double det = f.sign;
  for (std::size_t i = 0; i < a.rows(); ++i) det *= f.lu(i, i);
  return det;
}

Matrix inverse(const Matrix& a) {
  const LuFactors f = lu_factor(a);
  if (f.singular) throw RankDeficiencyError("inverse: matrix is singular");
  const std::size_t n = a.rows();
  Matrix inv(n, n);
  for (std::size_t col = 0; col < n; ++col) {
    Vector x(n);
    for (std::size_t i = 0; i < n; ++i) x[i] = f.perm[i] == col ? 1.0 : 0.0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t k = 0; k < i; ++k) x[i] -= f.lu(i, k) * x[k];
    for (std::size_t i = n; i-- > 0;) {
      for (std::size_t k = i + 1; k < n; ++k) x[i] -= f.lu(i, k) * x[k];
      x[i] /= f.lu(i, i);
    }
    for (std::size_t i = 0; i < n; ++i) inv(i, col) = x[i];
  }
  return inv;
}

std::size_t rank(const Matrix& a, double relative_tolerance) {
  Matrix m = a;
  double scale = 0.0;
  for (double v : m.values()) scale = std::max(scale, std::abs(v));
  if (scale == 0.0) return 0;
  const double tol = relative_tolerance * scale;
  std::size_t r = 0;
  for (std::size_t col = 0; col < m.cols() && r < m.rows(); ++col) {
    std::size_t pivot = r;
    for (std::size_t i = r + 1; i < m.rows(); ++i)
      if (std::abs(m(i, col)) > std::abs(m(pivot, col))) pivot = i;
    if (std::abs(m(pivot, col)) <= tol) continue;
    for (std::size_t j = 0; j < m.cols(); ++j) std::swap(m(r, j), m(pivot, j));
    for (std::size_t i = r + 1; i < m.rows(); ++i) {
      const double factor = m(i, col) / m(r, col);
      for (std::size_t j = col; j < m.cols(); ++j) m(i, j) -= factor * m(r, j);
    }
    ++r;
  }
  return r;
}

Matrix cholesky(const Matrix& spd, double relative_tolerance) {
  if (spd.rows() != spd.cols()) throw DomainError("cholesky: matrix is not square");
  const std::size_t n = spd.rows();
  double max_diag = 0.0;
  for (std::size_t i = 0; i < n; ++i) max_diag = std::max(max_diag, std::abs(spd(i, i)));
  const double tol = relative_tolerance * max_diag;
  Matrix l(n, n);
  for (std::size_t j = 0; j < n; ++j) {
    double d = spd(j, j);
    for (std::size_t k = 0; k < j; ++k) d -= l(j, k) * l(j, k);
    if (!(d > tol)) {
      throw RankDeficiencyError("cholesky: pivot " + std::to_string(j) +
                                " is not positive (rank deficient)");
    }
    l(j, j) = std::sqrt(d);
    for (std::size_t i = j + 1; i < n; ++i) {
      double s = spd(i, j);
      for (std::size_t k = 0; k < j; ++k) s -= l(i, k) * l(j, k);
      l(i, j) = s / l(j, j);
    }
  }
  return l;
}

Matrix cholesky_solve(const Matrix& lower, const Matrix& rhs) {
  const std::size_t n = lower.rows();
  if (rhs.rows() != n) throw DomainError("cholesky_solve: dimension mismatch");
  Matrix x = rhs;
  for (std::size_t c = 0; c < x.cols(); ++c) {
    for (std::size_t i = 0; i < n; ++i) {
      double s = x(i, c);
      for (std::size_t k = 0; k < i; ++k) s -= lower(i, k) * x(k, c);
      x(i, c) = s / lower(i, i);
    }
    for (std::size_t i = n; i-- > 0;) {
      double s = x(i, c);
      for (std::size_t k = i + 1; k < n; ++k) s -= lower(k, i) * x(k, c);
      x(i, c) = s / lower(i, i);
    }
  }
  return x;
}

Matrix random_orthogonal(std::size_t n, Rng& rng) {
  Matrix q(n, n);
  for (std::size_t col = 0; col < n; ++col) {
    for (;;) {
      Vector v(n);
      for (double& x : v) x = rng.normal();
      for (std::size_t prev = 0; prev < col; ++prev) {
        double proj = 0.0;
        for (std::size_t i = 0; i < n; ++i) proj += v[i] * q(i, prev);
        for (std::size_t i = 0; i < n; ++i) v[i] -= proj * q(i, prev);
      }
      double norm = 0.0;
      for (double x : v) norm += x * x;
      norm = std::sqrt(norm);
      if (norm < 1e-6) continue;
      for (std::size_t i = 0; i < n; ++i) q(i, col) = v[i] / norm;
      break;
    }
  }
  return q;
}

}  // namespace wep::linalg
