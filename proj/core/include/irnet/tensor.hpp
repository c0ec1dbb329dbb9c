#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "irnet/errors.hpp"
#include "irnet/rng.hpp"

namespace irnet {

enum class Dtype { F32, F64 };

inline const char* dtype_name(Dtype dt) { return dt == Dtype::F32 ? "f32" : "f64"; }

/// Dense row-major array with an optional gradient slot of the same shape.
/// Precision (f32/f64) is a run-time property: training runs in f32, gradient
/// checks and oracles in f64. Forward ops never mutate their inputs.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(std::vector<std::int64_t> shape, Dtype dt = Dtype::F32);
    static Tensor full(std::vector<std::int64_t> shape, double value, Dtype dt = Dtype::F32);
    static Tensor from(std::vector<std::int64_t> shape, const std::vector<double>& values,
                       Dtype dt = Dtype::F64);
    static Tensor rand_uniform(std::vector<std::int64_t> shape, Rng& rng, double lo, double hi,
                               Dtype dt = Dtype::F64);
    static Tensor rand_normal(std::vector<std::int64_t> shape, Rng& rng, double mean,
                              double stddev, Dtype dt = Dtype::F64);

    Tensor(const Tensor& other);
    Tensor& operator=(const Tensor& other);
    Tensor(Tensor&&) noexcept = default;
    Tensor& operator=(Tensor&&) noexcept = default;
    ~Tensor() = default;

    const std::vector<std::int64_t>& shape() const { return shape_; }
    std::int64_t dim(std::size_t i) const { return shape_.at(i); }
    std::size_t rank() const { return shape_.size(); }
    std::int64_t numel() const { return numel_; }
    bool empty() const { return numel_ == 0; }
    Dtype dtype() const { return dtype_; }

    template <class T> T* data();
    template <class T> const T* data() const;

    // converting element access; slower than typed pointers, fine off hot paths
    double at(std::int64_t i) const;
    void set(std::int64_t i, double v);

    Tensor to(Dtype dt) const;
    void fill(double v);

    // same data viewed under a new shape (row-major); numel must match
    Tensor reshaped(std::vector<std::int64_t> new_shape) const;

    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
    std::string shape_str() const;
    bool all_finite() const;

    // gradient slot (same shape and dtype, allocated on demand)
    bool has_grad() const { return grad_ != nullptr; }
    Tensor& grad();
    const Tensor& grad() const;
    void zero_grad();
    void drop_grad() { grad_.reset(); }

private:
    std::vector<std::int64_t> shape_;
    std::int64_t numel_ = 0;
    Dtype dtype_ = Dtype::F32;
    std::vector<float> f32_;
    std::vector<double> f64_;
    std::unique_ptr<Tensor> grad_;

    void alloc();
};

template <> inline float* Tensor::data<float>() {
    if (dtype_ != Dtype::F32) throw ShapeError("tensor is not f32");
    return f32_.data();
}
template <> inline double* Tensor::data<double>() {
    if (dtype_ != Dtype::F64) throw ShapeError("tensor is not f64");
    return f64_.data();
}
template <> inline const float* Tensor::data<float>() const {
    if (dtype_ != Dtype::F32) throw ShapeError("tensor is not f32");
    return f32_.data();
}
template <> inline const double* Tensor::data<double>() const {
    if (dtype_ != Dtype::F64) throw ShapeError("tensor is not f64");
    return f64_.data();
}

std::int64_t shape_numel(const std::vector<std::int64_t>& shape);
std::string shape_to_string(const std::vector<std::int64_t>& shape);

} // namespace irnet
