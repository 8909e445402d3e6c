#include "mufasa/tensor.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "mufasa/error.hpp"

namespace mufasa {

std::string_view error_category(ErrorCode code) {
  switch (code) {
    case ErrorCode::kDimension: return "dimension";
    case ErrorCode::kRank: return "rank";
    case ErrorCode::kDegenerateRow: return "degenerate-row";
    case ErrorCode::kZeroNorm: return "zero-norm";
    case ErrorCode::kUnpopulatedGradient: return "unpopulated-gradient";
    case ErrorCode::kStaleGradient: return "stale-gradient";
    case ErrorCode::kInsufficientNegatives: return "insufficient-negatives";
    case ErrorCode::kEmptySample: return "empty-sample";
    case ErrorCode::kEmptyBlock: return "empty-block";
    case ErrorCode::kEmptySelection: return "empty-selection";
    case ErrorCode::kNonFinite: return "non-finite";
    case ErrorCode::kConfig: return "config";
    case ErrorCode::kParse: return "parse";
    case ErrorCode::kFileNotFound: return "file-not-found";
    case ErrorCode::kIo: return "io";
  }
  return "unknown";
}

int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::kConfig: return 2;
    case ErrorCode::kFileNotFound:
    case ErrorCode::kIo: return 3;
    case ErrorCode::kParse: return 4;
    case ErrorCode::kNonFinite: return 5;
    default: return 1;
  }
}

std::string shape_string(std::size_t rows, std::size_t cols) {
  return fmt::format("[{}x{}]", rows, cols);
}

Tensor::Tensor(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Tensor::Tensor(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows_ * cols_) {
    fail(ErrorCode::kDimension,
         fmt::format("tensor shape {} needs {} values, got {}", mufasa::shape_string(rows_, cols_),
                     rows_ * cols_, data_.size()));
  }
}

Tensor Tensor::row(std::span<const double> values) {
  return Tensor(1, values.size(), std::vector<double>(values.begin(), values.end()));
}

Tensor Tensor::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r == 0 ? 0 : rows.begin()->size();
  std::vector<double> data;
  data.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) fail(ErrorCode::kDimension, "ragged row in tensor literal");
    data.insert(data.end(), row.begin(), row.end());
  }
  return Tensor(r, c, std::move(data));
}

Tensor Tensor::identity(std::size_t n) {
  Tensor t(n, n);
  for (std::size_t i = 0; i < n; ++i) t(i, i) = 1.0;
  return t;
}

double Tensor::item() const {
  if (rows_ != 1 || cols_ != 1) {
    fail(ErrorCode::kRank, fmt::format("item() needs a scalar, got {}", shape_string()));
  }
  return data_[0];
}

bool Tensor::all_finite() const noexcept {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

std::string Tensor::shape_string() const { return mufasa::shape_string(rows_, cols_); }

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.rows()) {
    fail(ErrorCode::kDimension,
         fmt::format("matmul shape mismatch: {} x {}", a.shape_string(), b.shape_string()));
  }
  Tensor out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      for (std::size_t j = 0; j < b.cols(); ++j) out(i, j) += aik * b(k, j);
    }
  }
  return out;
}

Tensor transpose(const Tensor& a) {
  Tensor out(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) out(j, i) = a(i, j);
  return out;
}

double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    fail(ErrorCode::kDimension, fmt::format("dot length mismatch: {} vs {}", a.size(), b.size()));
  }
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double l2_norm(std::span<const double> a) { return std::sqrt(dot(a, a)); }

double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) {
    fail(ErrorCode::kDimension,
         fmt::format("max_abs_diff shape mismatch: {} vs {}", a.shape_string(), b.shape_string()));
  }
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

double cosine_sim(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    fail(ErrorCode::kDimension,
         fmt::format("cosine_sim length mismatch: {} vs {}", a.size(), b.size()));
  }
  const double na = l2_norm(a);
  const double nb = l2_norm(b);
  if (na == 0.0 || nb == 0.0) fail(ErrorCode::kZeroNorm, "cosine_sim of a zero-norm vector");
  return std::clamp(dot(a, b) / (na * nb), -1.0, 1.0);
}

}  // namespace mufasa
