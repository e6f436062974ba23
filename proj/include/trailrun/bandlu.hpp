#pragma once

/**
 * @file bandlu.hpp
 * @brief LU factorization of banded matrices with partial pivoting
 *        (LAPACK-style band storage), plus solves against the factors.
 */

#include <algorithm>
#include <cmath>
#include <vector>

#include "trailrun/common.hpp"

namespace trailrun {

/**
 * Banded n x n matrix with kl sub- and ku superdiagonals, stored column-major
 * with kl extra rows of fill space for pivoting. Entry (i, j) is valid for
 * j - ku <= i <= j + kl and lives at ab[j * lda + kl + ku + i - j].
 */
class BandMatrix {
 public:
  BandMatrix() = default;
  BandMatrix(int n, int kl, int ku)
      : n_(n), kl_(kl), ku_(ku), lda_(2 * kl + ku + 1), ab_(std::size_t(lda_) * n, 0.0) {}

  int size() const { return n_; }
  int kl() const { return kl_; }
  int ku() const { return ku_; }

  void zero() { std::fill(ab_.begin(), ab_.end(), 0.0); }

  bool in_band(int i, int j) const { return i - j <= kl_ && j - i <= ku_; }

  double& at(int i, int j) { return ab_[std::size_t(j) * lda_ + kl_ + ku_ + i - j]; }
  double at(int i, int j) const { return ab_[std::size_t(j) * lda_ + kl_ + ku_ + i - j]; }

  void add(int i, int j, double v) {
    if (!in_band(i, j))
      throw NumericError("BandMatrix: entry outside declared band");
    at(i, j) += v;
  }

  /// y = A x using the stored band (only valid before factorization).
  void multiply(const std::vector<double>& x, std::vector<double>& y) const {
    y.assign(n_, 0.0);
    for (int j = 0; j < n_; ++j) {
      const int ilo = std::max(0, j - ku_), ihi = std::min(n_ - 1, j + kl_);
      for (int i = ilo; i <= ihi; ++i) y[i] += at(i, j) * x[j];
    }
  }

  /**
   * In-place LU with partial pivoting. Returns false if a pivot collapses
   * below tiny (matrix numerically singular); factorization still completes
   * with the pivot bumped so a solve stays finite.
   */
  bool factor() {
    piv_.resize(n_);
    bool ok = true;
    const int kv = kl_ + ku_;  // superdiagonals incl. fill
    for (int j = 0; j < n_; ++j) {
      const int ip_hi = std::min(n_ - 1, j + kl_);
      int piv = j;
      double pmax = std::abs(at(j, j));
      for (int i = j + 1; i <= ip_hi; ++i)
        if (std::abs(at(i, j)) > pmax) { pmax = std::abs(at(i, j)); piv = i; }
      piv_[j] = piv;
      const int jc_hi = std::min(n_ - 1, j + kv);
      if (piv != j)
        for (int c = j; c <= jc_hi; ++c) std::swap(at(j, c), at(piv, c));
      double d = at(j, j);
      if (std::abs(d) < 1e-140) {
        ok = false;
        d = at(j, j) = (d < 0 ? -1e-140 : 1e-140);
      }
      for (int i = j + 1; i <= ip_hi; ++i) {
        const double mlt = at(i, j) / d;
        at(i, j) = mlt;
        if (mlt != 0.0)
          for (int c = j + 1; c <= jc_hi; ++c) at(i, c) -= mlt * at(j, c);
      }
    }
    factored_ = true;
    return ok;
  }

  /// Solves A x = b in place using the factors.
  void solve(std::vector<double>& b) const {
    if (!factored_) throw NumericError("BandMatrix::solve before factor");
    const int kv = kl_ + ku_;
    for (int j = 0; j < n_; ++j) {
      if (piv_[j] != j) std::swap(b[j], b[piv_[j]]);
      const int ihi = std::min(n_ - 1, j + kl_);
      for (int i = j + 1; i <= ihi; ++i) b[i] -= at(i, j) * b[j];
    }
    for (int j = n_ - 1; j >= 0; --j) {
      b[j] /= at(j, j);
      const int ilo = std::max(0, j - kv);
      for (int i = ilo; i < j; ++i) b[i] -= at(i, j) * b[j];
    }
  }

 private:
  int n_ = 0, kl_ = 0, ku_ = 0, lda_ = 1;
  std::vector<double> ab_;
  std::vector<int> piv_;
  bool factored_ = false;
};

}  // namespace trailrun
