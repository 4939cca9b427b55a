#include "evgraph/tensor.hpp"

#include <Eigen/Core>
#include <functional>
#include <numeric>
#include <sstream>

#include "evgraph/binary_io.hpp"
#include "evgraph/errors.hpp"

namespace evg::ad {

std::size_t element_count(const Tensor::Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Tensor::Shape& shape) {
  std::ostringstream ss;
  ss << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) ss << (i ? ", " : "") << shape[i];
  ss << ']';
  return ss.str();
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)), data_(element_count(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (data_.size() != element_count(shape_)) {
    throw ShapeError("tensor data length " + std::to_string(data_.size()) + " does not match shape " +
                     shape_string(shape_));
  }
}

double Tensor::item() const {
  if (data_.size() != 1) throw ShapeError("item() on tensor of shape " + shape_string(shape_));
  return data_[0];
}

Tensor Tensor::reshaped(Shape shape) const {
  if (element_count(shape) != data_.size()) {
    throw ShapeError("cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
  }
  return Tensor(std::move(shape), data_);
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

namespace {
constexpr char kTensorMagic[9] = "EVGTENS1";
}

void dump_tensor(const Tensor& t, std::ostream& out) {
  out.write(kTensorMagic, 8);
  io::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
  for (auto d : t.shape()) io::write_le<std::uint64_t>(out, d);
  for (double v : t.data()) io::write_le(out, v);
}

Tensor load_tensor(std::istream& in) {
  io::expect_magic(in, kTensorMagic);
  const auto rank = io::read_le<std::uint32_t>(in);
  if (rank > 8) throw ParseError("tensor rank " + std::to_string(rank) + " too large");
  Tensor::Shape shape(rank);
  for (auto& d : shape) d = io::read_le<std::uint64_t>(in);
  if (element_count(shape) > (1ULL << 32)) throw ParseError("tensor too large");
  std::vector<double> data(element_count(shape));
  for (auto& v : data) v = io::read_f64(in);
  return Tensor(std::move(shape), std::move(data));
}

void gemm(const double* a, std::size_t a_rows, std::size_t a_cols, bool trans_a, const double* b, std::size_t b_rows,
          std::size_t b_cols, bool trans_b, double* c, bool accumulate) {
  using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  const auto ar = static_cast<Eigen::Index>(a_rows);
  const auto ac = static_cast<Eigen::Index>(a_cols);
  const auto br = static_cast<Eigen::Index>(b_rows);
  const auto bc = static_cast<Eigen::Index>(b_cols);
  Eigen::Map<const RowMat> A(a, ar, ac);
  Eigen::Map<const RowMat> B(b, br, bc);
  const Eigen::Index m = trans_a ? ac : ar;
  const Eigen::Index n = trans_b ? br : bc;
  Eigen::Map<RowMat> C(c, m, n);
  if (!accumulate) C.setZero();
  if (m == 0 || n == 0) return;
  if (trans_a && trans_b) {
    C.noalias() += A.transpose() * B.transpose();
  } else if (trans_a) {
    C.noalias() += A.transpose() * B;
  } else if (trans_b) {
    C.noalias() += A * B.transpose();
  } else {
    C.noalias() += A * B;
  }
}

}  // namespace evg::ad
