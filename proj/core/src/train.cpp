#include "irnet/train.hpp"

#include <cmath>

namespace irnet {

TrainStepResult train_step(Model& model, Adam& adam, const Tensor& batch,
                           const std::vector<ImageTargets>& targets) {
    TrainStepResult r;
    std::vector<Tensor> preds = model.forward(batch, /*train=*/true);
    r.loss = compute_loss(preds, targets, model.config(), batch.dim(2), batch.dim(3));
    if (!std::isfinite(r.loss.total)) {
        r.note = "non-finite loss; step aborted, parameters unchanged";
        return r;
    }
    for (const Tensor& g : r.loss.grads)
        if (!g.all_finite()) {
            r.note = "non-finite loss gradient; step aborted, parameters unchanged";
            return r;
        }
    model.zero_grads();
    model.backward(r.loss.grads);
    adam.step(model.parameters());
    r.stepped = true;
    return r;
}

} // namespace irnet
