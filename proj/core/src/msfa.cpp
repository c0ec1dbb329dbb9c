#include "irnet/msfa.hpp"

#include "irnet/errors.hpp"

namespace irnet {

MsfaBlock::MsfaBlock(std::int64_t in_channels, std::int64_t mid_channels,
                     std::int64_t out_channels, std::vector<int> dilations, Dtype dtype, Rng& rng)
    : in_ch_(in_channels), mid_ch_(mid_channels), out_ch_(out_channels),
      dilations_(std::move(dilations)) {
    if (dilations_.empty()) throw ShapeError("msfa block requires at least one dilation rate");
    for (int d : dilations_) {
        branch.emplace_back(in_ch_, mid_ch_, 3, 1, /*padding=*/d, /*dilation=*/d,
                            /*act=*/true, dtype, rng);
        point.emplace_back(mid_ch_, out_ch_, 1, 1, 0, 1, /*act=*/false, dtype, rng);
    }
}

Tensor MsfaBlock::forward(const Tensor& input, bool train) {
    if (input.rank() != 4 || input.dim(1) != in_ch_)
        throw ShapeError("msfa input " + input.shape_str() + " must have " +
                         std::to_string(in_ch_) + " channels");
    Tensor sum;
    for (std::size_t i = 0; i < branch.size(); ++i) {
        Tensor t = point[i].forward(branch[i].forward(input, train), train);
        if (i == 0)
            sum = std::move(t);
        else
            add_inplace(sum, t);
    }
    return sum;
}

Tensor MsfaBlock::forward(const Tensor& input) const {
    if (input.rank() != 4 || input.dim(1) != in_ch_)
        throw ShapeError("msfa input " + input.shape_str() + " must have " +
                         std::to_string(in_ch_) + " channels");
    Tensor sum;
    for (std::size_t i = 0; i < branch.size(); ++i) {
        Tensor t = point[i].forward(branch[i].forward(input));
        if (i == 0)
            sum = std::move(t);
        else
            add_inplace(sum, t);
    }
    return sum;
}

Tensor MsfaBlock::backward(const Tensor& grad_out) {
    Tensor grad_in;
    for (std::size_t i = 0; i < branch.size(); ++i) {
        Tensor g = branch[i].backward(point[i].backward(grad_out));
        if (i == 0)
            grad_in = std::move(g);
        else
            add_inplace(grad_in, g);
    }
    return grad_in;
}

void MsfaBlock::collect(const std::string& prefix, std::vector<ParamRef>& out) {
    for (std::size_t i = 0; i < branch.size(); ++i) {
        branch[i].collect(prefix + ".branch" + std::to_string(i), out);
        point[i].collect(prefix + ".point" + std::to_string(i), out);
    }
}

} // namespace irnet
