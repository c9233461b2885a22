#include "robarch/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace robarch {

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ")";
  return os.str();
}

std::size_t shape_volume(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

Tensor::Tensor(Shape shape, double fill)
    : shape_(std::move(shape)), data_(shape_volume(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> values)
    : shape_(std::move(shape)), data_(std::move(values)) {
  if (data_.size() != shape_volume(shape_)) {
    throw ShapeError("tensor: " + std::to_string(data_.size()) + " values do not fit shape " +
                     shape_string(shape_));
  }
}

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= shape_.size()) {
    throw ShapeError("tensor: axis " + std::to_string(axis) + " out of range for " +
                     shape_string(shape_));
  }
  return shape_[axis];
}

double& Tensor::at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) {
  return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
}

double Tensor::at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
  return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
}

Tensor Tensor::reshaped(Shape shape) const& {
  Tensor copy = *this;
  return std::move(copy).reshaped(std::move(shape));
}

Tensor Tensor::reshaped(Shape shape) && {
  if (shape_volume(shape) != data_.size()) {
    throw ShapeError("reshape: " + shape_string(shape_) + " -> " + shape_string(shape));
  }
  shape_ = std::move(shape);
  return std::move(*this);
}

std::size_t Tensor::row_size() const {
  if (shape_.empty() || shape_[0] == 0) return 0;
  return data_.size() / shape_[0];
}

Tensor Tensor::slice(std::size_t begin, std::size_t end) const {
  if (begin > end || end > dim(0)) throw ShapeError("slice: bad row range");
  Shape s = shape_;
  s[0] = end - begin;
  const std::size_t rs = row_size();
  return Tensor(std::move(s), std::vector<double>(data_.begin() + static_cast<std::ptrdiff_t>(begin * rs),
                                                  data_.begin() + static_cast<std::ptrdiff_t>(end * rs)));
}

Tensor Tensor::gather(std::span<const std::size_t> rows) const {
  Shape s = shape_;
  s[0] = rows.size();
  Tensor out(std::move(s));
  const std::size_t rs = row_size();
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= shape_[0]) throw ShapeError("gather: row out of range");
    std::copy_n(data_.begin() + static_cast<std::ptrdiff_t>(rows[i] * rs), rs,
                out.data_.begin() + static_cast<std::ptrdiff_t>(i * rs));
  }
  return out;
}

void Tensor::scatter(std::span<const std::size_t> rows, const Tensor& src) {
  const std::size_t rs = row_size();
  if (src.rank() == 0 || src.dim(0) != rows.size() || src.row_size() != rs) {
    throw ShapeError("scatter: source " + shape_string(src.shape()) + " does not match " +
                     shape_string(shape_));
  }
  for (std::size_t i = 0; i < rows.size(); ++i) {
    std::copy_n(src.data_.begin() + static_cast<std::ptrdiff_t>(i * rs), rs,
                data_.begin() + static_cast<std::ptrdiff_t>(rows[i] * rs));
  }
}

void Tensor::fill(double value) { std::fill(data_.begin(), data_.end(), value); }

Tensor& Tensor::operator+=(const Tensor& other) {
  require_same_shape(*this, other, "add");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
  return *this;
}

Tensor& Tensor::operator-=(const Tensor& other) {
  require_same_shape(*this, other, "sub");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= other.data_[i];
  return *this;
}

Tensor& Tensor::operator*=(double s) {
  for (double& v : data_) v *= s;
  return *this;
}

Tensor operator+(Tensor a, const Tensor& b) { return a += b; }
Tensor operator-(Tensor a, const Tensor& b) { return a -= b; }
Tensor operator*(Tensor a, double s) { return a *= s; }

Tensor stack(std::span<const Tensor> items) {
  if (items.empty()) throw ShapeError("stack: no items");
  Shape s{items.size()};
  for (std::size_t d : items[0].shape()) s.push_back(d);
  Tensor out(std::move(s));
  const std::size_t rs = items[0].size();
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (items[i].shape() != items[0].shape()) throw ShapeError("stack: mismatched shapes");
    std::copy(items[i].storage().begin(), items[i].storage().end(), out.data() + i * rs);
  }
  return out;
}

Tensor concat_rows(const Tensor& a, const Tensor& b) {
  if (a.empty()) return b;
  if (b.empty()) return a;
  if (a.row_size() != b.row_size()) throw ShapeError("concat_rows: row size mismatch");
  Shape s = a.shape();
  s[0] += b.dim(0);
  std::vector<double> v = a.storage();
  v.insert(v.end(), b.storage().begin(), b.storage().end());
  return Tensor(std::move(s), std::move(v));
}

double max_abs(std::span<const double> v) {
  double m = 0.0;
  for (double x : v) m = std::max(m, std::abs(x));
  return m;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "max_abs_diff");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

double l2_norm(std::span<const double> v) { return std::sqrt(dot(v, v)); }

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(what) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                     shape_string(b.shape()));
  }
}

}  // namespace robarch
