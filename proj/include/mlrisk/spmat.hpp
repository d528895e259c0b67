#pragma once

// Compressed-sparse-column real matrix used to hold the supra adjacency and
// supra transition operators.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdio>
#include <ostream>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mlrisk/error.hpp"

namespace mlrisk {

namespace detail {
struct ColumnNormalizer;
}

struct Triplet {
  std::size_t row = 0;
  std::size_t col = 0;
  double value = 0.0;
};

/// Immutable CSC matrix. Row indices are strictly increasing inside each
/// column, every stored value is finite and nonzero.
class SparseMatrix {
 public:
  SparseMatrix() : col_ptr_(1, 0) {}

  /// Duplicates are summed; entries that sum to exactly zero are dropped.
  static SparseMatrix from_triplets(std::size_t n_rows, std::size_t n_cols,
                                    std::span<const Triplet> triplets) {
    for (const auto& t : triplets) {
      if (t.row >= n_rows || t.col >= n_cols) {
        throw ValidationError("triplet index (" + std::to_string(t.row) + ", " +
                              std::to_string(t.col) + ") out of range for " +
                              std::to_string(n_rows) + "x" +
                              std::to_string(n_cols) + " matrix");
      }
      if (!std::isfinite(t.value)) {
        throw ValidationError("non-finite triplet value at (" +
                              std::to_string(t.row) + ", " +
                              std::to_string(t.col) + ")");
      }
    }

    // Counting sort by column, then sort rows within each column. The
    // stable order keeps duplicate summation in input order.
    std::vector<std::size_t> counts(n_cols + 1, 0);
    for (const auto& t : triplets) ++counts[t.col + 1];
    for (std::size_t c = 0; c < n_cols; ++c) counts[c + 1] += counts[c];

    std::vector<std::pair<std::size_t, double>> bucket(triplets.size());
    std::vector<std::size_t> next(counts.begin(), counts.end() - 1);
    for (const auto& t : triplets) bucket[next[t.col]++] = {t.row, t.value};

    SparseMatrix m;
    m.n_rows_ = n_rows;
    m.n_cols_ = n_cols;
    m.col_ptr_.assign(n_cols + 1, 0);
    m.row_idx_.reserve(triplets.size());
    m.values_.reserve(triplets.size());

    for (std::size_t c = 0; c < n_cols; ++c) {
      auto first = bucket.begin() + static_cast<std::ptrdiff_t>(counts[c]);
      auto last = bucket.begin() + static_cast<std::ptrdiff_t>(counts[c + 1]);
      std::stable_sort(first, last, [](const auto& a, const auto& b) {
        return a.first < b.first;
      });
      for (auto it = first; it != last;) {
        const std::size_t row = it->first;
        double sum = 0.0;
        for (; it != last && it->first == row; ++it) sum += it->second;
        if (!std::isfinite(sum)) {
          throw ValidationError("triplet accumulation overflowed at (" +
                                std::to_string(row) + ", " +
                                std::to_string(c) + ")");
        }
        if (sum != 0.0) {
          m.row_idx_.push_back(row);
          m.values_.push_back(sum);
        }
      }
      m.col_ptr_[c + 1] = m.row_idx_.size();
    }
    return m;
  }

  std::size_t n_rows() const noexcept { return n_rows_; }
  std::size_t n_cols() const noexcept { return n_cols_; }
  std::size_t nnz() const noexcept { return values_.size(); }

  std::span<const std::size_t> col_ptr() const noexcept { return col_ptr_; }
  std::span<const std::size_t> row_indices() const noexcept { return row_idx_; }
  std::span<const double> values() const noexcept { return values_; }

  std::span<const std::size_t> column_rows(std::size_t c) const {
    return std::span(row_idx_).subspan(col_ptr_[c], col_ptr_[c + 1] - col_ptr_[c]);
  }
  std::span<const double> column_values(std::size_t c) const {
    return std::span(values_).subspan(col_ptr_[c], col_ptr_[c + 1] - col_ptr_[c]);
  }

  /// Stored value at (row, col), zero when absent.
  double at(std::size_t row, std::size_t col) const {
    if (row >= n_rows_ || col >= n_cols_) {
      throw ValidationError("index out of range in SparseMatrix::at");
    }
    auto rows = column_rows(col);
    auto it = std::lower_bound(rows.begin(), rows.end(), row);
    if (it == rows.end() || *it != row) return 0.0;
    return values_[col_ptr_[col] + static_cast<std::size_t>(it - rows.begin())];
  }

  double column_sum(std::size_t c) const {
    double s = 0.0;
    for (double v : column_values(c)) s += v;
    return s;
  }

  /// y = A x, written into `out` (resized to n_rows).
  void multiply(std::span<const double> x, std::vector<double>& out) const {
    if (x.size() != n_cols_) {
      throw ValidationError("matvec dimension mismatch: vector of length " +
                            std::to_string(x.size()) + " for " +
                            std::to_string(n_cols_) + " columns");
    }
    out.assign(n_rows_, 0.0);
    for (std::size_t c = 0; c < n_cols_; ++c) {
      const double xc = x[c];
      if (xc == 0.0) continue;
      for (std::size_t k = col_ptr_[c]; k < col_ptr_[c + 1]; ++k) {
        out[row_idx_[k]] += values_[k] * xc;
      }
    }
  }

  /// Row-major dense copy, n_rows * n_cols values.
  std::vector<double> to_dense() const {
    std::vector<double> d(n_rows_ * n_cols_, 0.0);
    for (std::size_t c = 0; c < n_cols_; ++c) {
      for (std::size_t k = col_ptr_[c]; k < col_ptr_[c + 1]; ++k) {
        d[row_idx_[k] * n_cols_ + c] = values_[k];
      }
    }
    return d;
  }

  bool is_symmetric() const {
    if (n_rows_ != n_cols_) return false;
    for (std::size_t c = 0; c < n_cols_; ++c) {
      auto rows = column_rows(c);
      auto vals = column_values(c);
      for (std::size_t k = 0; k < rows.size(); ++k) {
        if (at(c, rows[k]) != vals[k]) return false;
      }
    }
    return true;
  }

  /// Copy with every value multiplied by `factor` (> 0).
  SparseMatrix scaled(double factor) const {
    if (!(factor > 0.0) || !std::isfinite(factor)) {
      throw ValidationError("scale factor must be positive and finite");
    }
    SparseMatrix m = *this;
    for (double& v : m.values_) v *= factor;
    return m;
  }

 private:
  friend struct detail::ColumnNormalizer;

  std::size_t n_rows_ = 0;
  std::size_t n_cols_ = 0;
  std::vector<std::size_t> col_ptr_;
  std::vector<std::size_t> row_idx_;
  std::vector<double> values_;
};

inline std::vector<double> matvec(const SparseMatrix& m, std::span<const double> v) {
  std::vector<double> out;
  m.multiply(v, out);
  return out;
}

/// How the solver treats columns that had no mass to normalize.
enum class DanglingPolicy {
  zero_column,           // left as zeros; mass leaks out of the walk
  uniform_restart_flag,  // solver redistributes their mass to the restart vector
};

struct NormalizedMatrix {
  SparseMatrix matrix;
  std::vector<bool> dangling;  // one flag per column
  DanglingPolicy policy = DanglingPolicy::uniform_restart_flag;

  std::size_t dangling_count() const {
    return static_cast<std::size_t>(std::count(dangling.begin(), dangling.end(), true));
  }
};

namespace detail {

struct ColumnNormalizer {
  static NormalizedMatrix run(const SparseMatrix& m, DanglingPolicy policy) {
    NormalizedMatrix out;
    out.policy = policy;
    out.matrix = m;
    out.dangling.assign(m.n_cols(), false);
    auto& vals = out.matrix.values_;
    for (std::size_t c = 0; c < m.n_cols(); ++c) {
      double sum = 0.0;
      for (std::size_t k = m.col_ptr_[c]; k < m.col_ptr_[c + 1]; ++k) {
        if (vals[k] < 0.0) {
          throw ValidationError("negative entry at (" +
                                std::to_string(m.row_idx_[k]) + ", " +
                                std::to_string(c) +
                                ") cannot be column-normalized");
        }
        sum += vals[k];
      }
      if (sum == 0.0) {
        out.dangling[c] = true;
        continue;
      }
      for (std::size_t k = m.col_ptr_[c]; k < m.col_ptr_[c + 1]; ++k) vals[k] /= sum;
    }
    return out;
  }
};

}  // namespace detail

/// Divides each column by its sum. Zero-sum columns stay zero and are
/// flagged in the returned mask.
inline NormalizedMatrix column_normalize(
    const SparseMatrix& m,
    DanglingPolicy policy = DanglingPolicy::uniform_restart_flag) {
  return detail::ColumnNormalizer::run(m, policy);
}

/// MatrixMarket coordinate dump (1-based indices) for external tools.
inline void write_matrix_market(std::ostream& os, const SparseMatrix& m) {
  os << "%%MatrixMarket matrix coordinate real general\n";
  os << m.n_rows() << ' ' << m.n_cols() << ' ' << m.nnz() << '\n';
  char buf[64];
  for (std::size_t c = 0; c < m.n_cols(); ++c) {
    auto rows = m.column_rows(c);
    auto vals = m.column_values(c);
    for (std::size_t k = 0; k < rows.size(); ++k) {
      std::snprintf(buf, sizeof buf, "%.17g", vals[k]);
      os << rows[k] + 1 << ' ' << c + 1 << ' ' << buf << '\n';
    }
  }
}

}  // namespace mlrisk
