#include "irnet/optimizer.hpp"

#include <cmath>

#include "irnet/errors.hpp"

namespace irnet {

void Adam::step(const std::vector<ParamRef>& params) {
    ++t_;
    const double b1 = cfg_.beta1, b2 = cfg_.beta2;
    const double bc1 = 1.0 - std::pow(b1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(b2, static_cast<double>(t_));
    for (const ParamRef& p : params) {
        Tensor& w = *p.tensor;
        if (!w.has_grad()) continue;
        const Tensor& g = w.grad();
        Slot& s = state_[p.name];
        if (s.m.numel() == 0) {
            s.m = Tensor::zeros(w.shape(), w.dtype());
            s.v = Tensor::zeros(w.shape(), w.dtype());
        } else if (!s.m.same_shape(w)) {
            throw ShapeError("adam state for '" + p.name + "' has shape " + s.m.shape_str() +
                             ", parameter is " + w.shape_str());
        }
        const std::int64_t n = w.numel();
        for (std::int64_t i = 0; i < n; ++i) {
            const double gi = g.at(i);
            const double m = b1 * s.m.at(i) + (1 - b1) * gi;
            const double v = b2 * s.v.at(i) + (1 - b2) * gi * gi;
            s.m.set(i, m);
            s.v.set(i, v);
            const double update = cfg_.lr * (m / bc1) / (std::sqrt(v / bc2) + cfg_.eps);
            w.set(i, w.at(i) - update);
        }
    }
}

void Adam::restore(std::uint64_t t, std::map<std::string, Slot> state) {
    t_ = t;
    state_ = std::move(state);
}

} // namespace irnet
