#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace nca_arc {

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Channel-major activations for a stack of equally sized images.
///
/// Layout is [channels][batch][rows][cols], so the buffer viewed as a
/// row-major `channels x (batch*rows*cols)` matrix has one column per cell.
/// Every per-cell operation in the step network is then a column operation and
/// every dense layer a single GEMM. A plain single-grid tensor has batch 1.
template <typename T>
class Tensor3 {
 public:
  using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using MatrixMap = Eigen::Map<Matrix>;
  using ConstMatrixMap = Eigen::Map<const Matrix>;

  Tensor3() = default;
  Tensor3(std::size_t channels, std::size_t rows, std::size_t cols, std::size_t batch = 1)
      : channels_(channels), batch_(batch), rows_(rows), cols_(cols),
        data_(channels * batch * rows * cols, T(0)) {}

  std::size_t channels() const { return channels_; }
  std::size_t batch() const { return batch_; }
  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  /// Cells per image.
  std::size_t plane() const { return rows_ * cols_; }
  /// Cells across the whole batch: the column count of `matrix()`.
  std::size_t cells() const { return batch_ * rows_ * cols_; }
  std::size_t size() const { return data_.size(); }

  T& operator()(std::size_t c, std::size_t r, std::size_t x, std::size_t b = 0) {
    return data_[((c * batch_ + b) * rows_ + r) * cols_ + x];
  }
  T operator()(std::size_t c, std::size_t r, std::size_t x, std::size_t b = 0) const {
    return data_[((c * batch_ + b) * rows_ + r) * cols_ + x];
  }

  std::span<T> data() { return data_; }
  std::span<const T> data() const { return data_; }
  T* channel(std::size_t c) { return data_.data() + c * cells(); }
  const T* channel(std::size_t c) const { return data_.data() + c * cells(); }

  MatrixMap matrix() {
    return MatrixMap(data_.data(), Eigen::Index(channels_), Eigen::Index(cells()));
  }
  ConstMatrixMap matrix() const {
    return ConstMatrixMap(data_.data(), Eigen::Index(channels_), Eigen::Index(cells()));
  }
  /// Rows [first, first + count) of the matrix view.
  MatrixMap channel_block(std::size_t first, std::size_t count) {
    return MatrixMap(channel(first), Eigen::Index(count), Eigen::Index(cells()));
  }
  ConstMatrixMap channel_block(std::size_t first, std::size_t count) const {
    return ConstMatrixMap(channel(first), Eigen::Index(count), Eigen::Index(cells()));
  }

  bool same_shape(const Tensor3& o) const {
    return channels_ == o.channels_ && batch_ == o.batch_ && rows_ == o.rows_ &&
           cols_ == o.cols_;
  }
  bool same_geometry(const Tensor3& o) const {
    return batch_ == o.batch_ && rows_ == o.rows_ && cols_ == o.cols_;
  }
  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  std::string shape_string() const {
    return "[" + std::to_string(channels_) + "," + std::to_string(batch_) + "," +
           std::to_string(rows_) + "," + std::to_string(cols_) + "]";
  }

  friend bool operator==(const Tensor3&, const Tensor3&) = default;

 private:
  std::size_t channels_ = 0;
  std::size_t batch_ = 0;
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<T> data_;
};

}  // namespace nca_arc
