#include "irnet/tensor.hpp"

#include <cmath>
#include <sstream>

namespace irnet {

std::int64_t shape_numel(const std::vector<std::int64_t>& shape) {
    std::int64_t n = 1;
    for (const auto d : shape) {
        if (d < 0) throw ShapeError("negative extent in shape " + shape_to_string(shape));
        n *= d;
    }
    return n;
}

std::string shape_to_string(const std::vector<std::int64_t>& shape) {
    std::ostringstream os;
    os << '(';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    os << ')';
    return os.str();
}

void Tensor::alloc() {
    numel_ = shape_numel(shape_);
    if (dtype_ == Dtype::F32) {
        f32_.assign(static_cast<std::size_t>(numel_), 0.0f);
        f64_.clear();
    } else {
        f64_.assign(static_cast<std::size_t>(numel_), 0.0);
        f32_.clear();
    }
}

Tensor Tensor::zeros(std::vector<std::int64_t> shape, Dtype dt) {
    Tensor t;
    t.shape_ = std::move(shape);
    t.dtype_ = dt;
    t.alloc();
    return t;
}

Tensor Tensor::full(std::vector<std::int64_t> shape, double value, Dtype dt) {
    Tensor t = zeros(std::move(shape), dt);
    t.fill(value);
    return t;
}

Tensor Tensor::from(std::vector<std::int64_t> shape, const std::vector<double>& values, Dtype dt) {
    Tensor t = zeros(std::move(shape), dt);
    if (static_cast<std::int64_t>(values.size()) != t.numel_)
        throw ShapeError("value count " + std::to_string(values.size()) + " does not fill shape " +
                         t.shape_str());
    for (std::int64_t i = 0; i < t.numel_; ++i) t.set(i, values[static_cast<std::size_t>(i)]);
    return t;
}

Tensor Tensor::rand_uniform(std::vector<std::int64_t> shape, Rng& rng, double lo, double hi,
                            Dtype dt) {
    Tensor t = zeros(std::move(shape), dt);
    for (std::int64_t i = 0; i < t.numel_; ++i) t.set(i, rng.uniform(lo, hi));
    return t;
}

Tensor Tensor::rand_normal(std::vector<std::int64_t> shape, Rng& rng, double mean, double stddev,
                           Dtype dt) {
    Tensor t = zeros(std::move(shape), dt);
    for (std::int64_t i = 0; i < t.numel_; ++i) t.set(i, rng.normal(mean, stddev));
    return t;
}

Tensor::Tensor(const Tensor& other)
    : shape_(other.shape_),
      numel_(other.numel_),
      dtype_(other.dtype_),
      f32_(other.f32_),
      f64_(other.f64_),
      grad_(other.grad_ ? std::make_unique<Tensor>(*other.grad_) : nullptr) {}

Tensor& Tensor::operator=(const Tensor& other) {
    if (this == &other) return *this;
    shape_ = other.shape_;
    numel_ = other.numel_;
    dtype_ = other.dtype_;
    f32_ = other.f32_;
    f64_ = other.f64_;
    grad_ = other.grad_ ? std::make_unique<Tensor>(*other.grad_) : nullptr;
    return *this;
}

double Tensor::at(std::int64_t i) const {
    return dtype_ == Dtype::F32 ? static_cast<double>(f32_[static_cast<std::size_t>(i)])
                                : f64_[static_cast<std::size_t>(i)];
}

void Tensor::set(std::int64_t i, double v) {
    if (dtype_ == Dtype::F32)
        f32_[static_cast<std::size_t>(i)] = static_cast<float>(v);
    else
        f64_[static_cast<std::size_t>(i)] = v;
}

Tensor Tensor::to(Dtype dt) const {
    if (dt == dtype_) return *this;
    Tensor t = zeros(shape_, dt);
    for (std::int64_t i = 0; i < numel_; ++i) t.set(i, at(i));
    if (grad_) t.grad_ = std::make_unique<Tensor>(grad_->to(dt));
    return t;
}

Tensor Tensor::reshaped(std::vector<std::int64_t> new_shape) const {
    if (shape_numel(new_shape) != numel_)
        throw ShapeError("cannot reshape " + shape_str() + " to " + shape_to_string(new_shape) +
                         " (element counts differ)");
    Tensor t = *this;
    t.drop_grad();
    t.shape_ = std::move(new_shape);
    return t;
}

void Tensor::fill(double v) {
    if (dtype_ == Dtype::F32)
        f32_.assign(f32_.size(), static_cast<float>(v));
    else
        f64_.assign(f64_.size(), v);
}

std::string Tensor::shape_str() const { return shape_to_string(shape_); }

bool Tensor::all_finite() const {
    if (dtype_ == Dtype::F32) {
        for (const float v : f32_)
            if (!std::isfinite(v)) return false;
    } else {
        for (const double v : f64_)
            if (!std::isfinite(v)) return false;
    }
    return true;
}

Tensor& Tensor::grad() {
    if (!grad_) grad_ = std::make_unique<Tensor>(zeros(shape_, dtype_));
    return *grad_;
}

const Tensor& Tensor::grad() const {
    if (!grad_) throw ShapeError("tensor has no gradient");
    return *grad_;
}

void Tensor::zero_grad() {
    if (grad_) grad_->fill(0.0);
}

} // namespace irnet
