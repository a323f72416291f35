#pragma once

#include <cstdint>
#include <functional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "cacvit/tensor.hpp"

namespace cacvit {

// Scalar-valued function built from tape ops; receives the tensors it should
// differentiate and must return a shape-{1} tensor.
using ScalarFn = std::function<Tensor(std::vector<Tensor>&)>;

struct GradCheckOptions {
    double h = 1e-5;
    // 0 = check every coordinate; otherwise check `sample` coordinates drawn
    // without replacement across all inputs.
    std::size_t sample = 0;
    std::uint64_t seed = 0;
    // (input index, flat coordinate) pairs skipped, e.g. kinks of relu.
    std::set<std::pair<std::size_t, std::size_t>> exclude;
};

struct GradCheckReport {
    double max_rel_err = 0.0;
    std::size_t worst_input = 0;
    std::size_t worst_coord = 0;
    std::size_t checked = 0;
    std::vector<std::string> failures; // non-finite evaluations etc.

    bool ok(double tol) const { return failures.empty() && max_rel_err < tol; }
};

// Compares tape gradients of f against central finite differences
// (f(x+h)-f(x-h))/2h, coordinate by coordinate.
GradCheckReport grad_check(const ScalarFn& f, const std::vector<Tensor>& inputs,
                           const GradCheckOptions& opt = {});

} // namespace cacvit
