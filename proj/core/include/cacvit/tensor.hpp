#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <utility>
#include <vector>

#include "cacvit/errors.hpp"
#include "cacvit/rng.hpp"

namespace cacvit {

class Tape;

// Dense row-major tensor of 64-bit floats. Copies are shallow: data and grad
// buffers are shared, so a Tensor behaves as a lightweight handle. Values are
// immutable after an op produces them; only grad buffers (and parameters,
// between optimizer steps) are mutated in place.
struct Tensor {
    std::vector<std::size_t> shape;
    std::shared_ptr<std::vector<double>> data;
    std::shared_ptr<std::vector<double>> grad; // present iff requires_grad
    bool requires_grad = false;
    Tape* tape = nullptr;

    Tensor() = default;

    std::size_t rank() const { return shape.size(); }
    std::size_t numel() const;
    std::size_t dim(std::size_t i) const { return shape[i]; }

    double& operator()(std::size_t i) { return (*data)[i]; }
    double operator()(std::size_t i) const { return (*data)[i]; }
    double& operator()(std::size_t i, std::size_t j) { return (*data)[i * shape[1] + j]; }
    double operator()(std::size_t i, std::size_t j) const { return (*data)[i * shape[1] + j]; }

    static Tensor zeros(std::vector<std::size_t> shape);
    static Tensor full(std::vector<std::size_t> shape, double value);
    static Tensor from_vector(std::vector<std::size_t> shape, std::vector<double> values);
    static Tensor scalar(double value) { return from_vector({1}, {value}); }

    // Zero-mean normal(0, stddev) entries from the given generator.
    static Tensor randn(std::vector<std::size_t> shape, Rng& rng, double stddev);

    // Deep copy with no tape participation.
    Tensor detached() const;

    // Mark as a differentiable leaf on the given tape and allocate a grad buffer.
    void set_requires_grad(Tape* tape);

    void zero_grad();
};

// Ordered log of backward rules for one forward pass. Reverse iteration is
// reverse topological order because every op output is a fresh tensor.
class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    void record(std::function<void()> backward_fn) { ops_.push_back(std::move(backward_fn)); }

    // Seeds d(loss)/d(loss) = 1 and runs all recorded rules in reverse.
    // Calling twice without reset() is an error.
    void backward(const Tensor& scalar_loss);

    void reset() {
        ops_.clear();
        used_ = false;
    }

    std::size_t size() const { return ops_.size(); }

private:
    std::vector<std::function<void()>> ops_;
    bool used_ = false;
};

// Throws NumericalError if any entry is NaN/Inf.
void check_finite(const Tensor& t, const char* op);

// --- core ops -------------------------------------------------------------
// All ops are pure: they allocate a fresh output and, when any input requires
// grad, record a backward rule on that input's tape. Gradients accumulate
// with +=; callers reset grads between steps.

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& x); // 2-D
Tensor reshape(const Tensor& x, std::vector<std::size_t> shape);
Tensor slice(const Tensor& x, const std::vector<std::pair<std::size_t, std::size_t>>& ranges);
Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double s);
Tensor add_rowvec(const Tensor& x, const Tensor& v); // x: n×d, v: d

Tensor relu(const Tensor& x); // subgradient 0 at 0
Tensor gelu(const Tensor& x); // tanh approximation
Tensor softmax_rows(const Tensor& x);
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps);

Tensor sum(const Tensor& x);  // scalar, shape {1}
Tensor mean(const Tensor& x); // scalar, shape {1}

// x: [Cin,H,W], w: [Cout,Cin,kh,kw], b: [Cout]; stride 1, zero padding.
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, std::size_t pad);

// x: [C,H,W] -> [C,2H,2W], bilinear with half-pixel centers.
Tensor upsample2x(const Tensor& x);

} // namespace cacvit
