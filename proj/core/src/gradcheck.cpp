#include "irnet/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "irnet/rng.hpp"

namespace irnet {

namespace {

double dot_with(const Tensor& out, const Tensor& cot) {
    double acc = 0.0;
    for (std::int64_t i = 0; i < out.numel(); ++i) acc += out.at(i) * cot.at(i);
    return acc;
}

std::vector<std::int64_t> pick_entries(std::int64_t n, std::int64_t cap, Rng& rng) {
    std::vector<std::int64_t> idx(static_cast<std::size_t>(n));
    std::iota(idx.begin(), idx.end(), 0);
    if (cap > 0 && n > cap) {
        rng.shuffle(idx.begin(), idx.end());
        idx.resize(static_cast<std::size_t>(cap));
        std::sort(idx.begin(), idx.end());
    }
    return idx;
}

} // namespace

GradCheckReport gradcheck(const std::string& op_name,
                          const std::vector<std::pair<std::string, Tensor*>>& groups,
                          const std::function<Tensor()>& forward,
                          const std::function<std::vector<Tensor>(const Tensor&)>& backward,
                          const GradCheckOptions& opts) {
    GradCheckReport report;
    report.op_name = op_name;
    report.tolerance = opts.tolerance;
    report.pass = true;

    for (const auto& [name, t] : groups) {
        if (t->dtype() != Dtype::F64)
            throw ShapeError("gradcheck group '" + name + "' must be f64");
    }

    Rng rng(opts.seed ^ 0x9e3779b97f4a7c15ULL);
    Tensor out0 = forward();
    GradCheckReport::Group* fail_early = nullptr;
    if (!out0.all_finite()) {
        GradCheckReport::Group g;
        g.name = "(forward)";
        g.pass = false;
        g.note = "non-finite forward output";
        for (std::int64_t i = 0; i < out0.numel(); ++i)
            if (!std::isfinite(out0.at(i))) {
                g.note += " at index " + std::to_string(i);
                break;
            }
        report.groups.push_back(g);
        report.pass = false;
        fail_early = &report.groups.back();
    }
    if (fail_early) return report;

    Tensor cot = Tensor::rand_uniform(out0.shape(), rng, -1.0, 1.0, Dtype::F64);
    const std::vector<Tensor> analytic = backward(cot);
    if (analytic.size() != groups.size())
        throw ShapeError("gradcheck backward returned " + std::to_string(analytic.size()) +
                         " gradients for " + std::to_string(groups.size()) + " groups");

    const double h = opts.step;
    for (std::size_t gi = 0; gi < groups.size(); ++gi) {
        const auto& [name, tensor] = groups[gi];
        GradCheckReport::Group grp;
        grp.name = name;
        grp.pass = true;
        if (!analytic[gi].same_shape(*tensor))
            throw ShapeError("gradcheck gradient shape " + analytic[gi].shape_str() +
                             " does not match group '" + name + "' " + tensor->shape_str());
        const auto entries = pick_entries(tensor->numel(), opts.max_entries_per_group, rng);
        for (const auto i : entries) {
            const double saved = tensor->at(i);
            tensor->set(i, saved + h);
            const double lp = dot_with(forward(), cot);
            tensor->set(i, saved - h);
            const double lm = dot_with(forward(), cot);
            tensor->set(i, saved);
            if (!std::isfinite(lp) || !std::isfinite(lm)) {
                grp.pass = false;
                grp.note = "non-finite forward at entry " + std::to_string(i);
                break;
            }
            const double numeric = (lp - lm) / (2.0 * h);
            const double a = analytic[gi].at(i);
            const double denom = std::max({1.0, std::abs(a), std::abs(numeric)});
            grp.max_rel_err = std::max(grp.max_rel_err, std::abs(a - numeric) / denom);
        }
        grp.entries_checked = static_cast<std::int64_t>(entries.size());
        if (grp.max_rel_err >= opts.tolerance) grp.pass = false;
        report.pass = report.pass && grp.pass;
        report.groups.push_back(std::move(grp));
    }
    return report;
}

std::string GradCheckReport::to_string() const {
    std::ostringstream os;
    os << "gradcheck " << op_name << " (tol " << tolerance << ")\n";
    for (const auto& g : groups) {
        os << "  " << g.name << ": max_rel_err=" << g.max_rel_err << " entries="
           << g.entries_checked << (g.pass ? " pass" : " FAIL");
        if (!g.note.empty()) os << " [" << g.note << "]";
        os << "\n";
    }
    os << (pass ? "PASS" : "FAIL") << "\n";
    return os.str();
}

} // namespace irnet
