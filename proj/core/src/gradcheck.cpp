#include "cacvit/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "cacvit/rng.hpp"

namespace cacvit {

namespace {

double rel_err(double a, double b) {
    const double diff = std::abs(a - b);
    return diff / std::max({1.0, std::abs(a), std::abs(b)});
}

} // namespace

GradCheckReport grad_check(const ScalarFn& f, const std::vector<Tensor>& inputs,
                           const GradCheckOptions& opt) {
    GradCheckReport report;

    // Analytic pass: fresh tape, leaf copies of the inputs.
    Tape tape;
    std::vector<Tensor> leaves;
    leaves.reserve(inputs.size());
    for (const Tensor& in : inputs) {
        Tensor leaf = in.detached();
        leaf.set_requires_grad(&tape);
        leaves.push_back(leaf);
    }
    std::vector<std::vector<double>> analytic;
    try {
        Tensor loss = f(leaves);
        tape.backward(loss);
    } catch (const NumericalError& e) {
        report.failures.push_back(std::string("analytic pass: ") + e.what());
        return report;
    }
    for (const Tensor& leaf : leaves) analytic.push_back(*leaf.grad);

    // Numeric pass operates on detached copies sharing one mutable buffer set.
    std::vector<Tensor> probe;
    probe.reserve(inputs.size());
    for (const Tensor& in : inputs) probe.push_back(in.detached());
    auto eval = [&]() -> double {
        Tensor v = f(probe);
        if (v.numel() != 1) throw DimensionError("grad_check: f must return a scalar");
        return (*v.data)[0];
    };

    std::vector<std::pair<std::size_t, std::size_t>> coords;
    for (std::size_t i = 0; i < inputs.size(); ++i)
        for (std::size_t c = 0; c < inputs[i].numel(); ++c)
            if (!opt.exclude.count({i, c})) coords.emplace_back(i, c);
    if (opt.sample > 0 && opt.sample < coords.size()) {
        Rng rng(opt.seed);
        rng.shuffle(coords);
        coords.resize(opt.sample);
    }

    for (const auto& [i, c] : coords) {
        double& x = (*probe[i].data)[c];
        const double saved = x;
        double fp = 0.0, fm = 0.0;
        try {
            x = saved + opt.h;
            fp = eval();
            x = saved - opt.h;
            fm = eval();
        } catch (const NumericalError& e) {
            report.failures.push_back("input " + std::to_string(i) + " coord " +
                                      std::to_string(c) + ": " + e.what());
            x = saved;
            continue;
        }
        x = saved;
        const double fd = (fp - fm) / (2.0 * opt.h);
        if (!std::isfinite(fd)) {
            report.failures.push_back("input " + std::to_string(i) + " coord " +
                                      std::to_string(c) + ": non-finite difference");
            continue;
        }
        const double err = rel_err(analytic[i][c], fd);
        ++report.checked;
        if (err > report.max_rel_err) {
            report.max_rel_err = err;
            report.worst_input = i;
            report.worst_coord = c;
        }
    }
    return report;
}

} // namespace cacvit
