#pragma once

#include "irnet/loss.hpp"
#include "irnet/model.hpp"
#include "irnet/optimizer.hpp"

namespace irnet {

struct TrainStepResult {
    LossResult loss;
    bool stepped = false; // false when the step was aborted (non-finite loss)
    std::string note;
};

/// One optimization step: forward, loss, backward, Adam update. A non-finite
/// loss aborts the step with parameters and optimizer state untouched.
TrainStepResult train_step(Model& model, Adam& adam, const Tensor& batch,
                           const std::vector<ImageTargets>& targets);

} // namespace irnet
