#include "cacvit/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <string>

namespace cacvit {

namespace {

std::size_t product(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    return n;
}

std::string shape_str(const std::vector<std::size_t>& shape) {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += "x";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

// Returns the tape shared by all grad-requiring inputs, or nullptr.
Tape* grad_tape(std::initializer_list<const Tensor*> inputs) {
    Tape* tape = nullptr;
    for (const Tensor* in : inputs) {
        if (!in->requires_grad) continue;
        if (!in->tape) throw Error("tensor requires grad but has no tape");
        if (tape && tape != in->tape) throw Error("inputs live on different tapes");
        tape = in->tape;
    }
    return tape;
}

Tensor make_output(std::vector<std::size_t> shape, Tape* tape) {
    Tensor out = Tensor::zeros(std::move(shape));
    if (tape) {
        out.requires_grad = true;
        out.tape = tape;
        out.grad = std::make_shared<std::vector<double>>(out.numel(), 0.0);
    }
    return out;
}

// C (+)= op(A)·op(B), with op(X) m×k / k×n after the optional transposes.
void mm(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
        std::size_t n, bool ta, bool tb, bool accumulate) {
#pragma omp parallel for schedule(static)
    for (long long ii = 0; ii < static_cast<long long>(m); ++ii) {
        const auto i = static_cast<std::size_t>(ii);
        for (std::size_t j = 0; j < n; ++j) {
            double acc = 0.0;
            for (std::size_t p = 0; p < k; ++p) {
                const double av = ta ? a[p * m + i] : a[i * k + p];
                const double bv = tb ? b[j * k + p] : b[p * n + j];
                acc += av * bv;
            }
            if (accumulate)
                c[i * n + j] += acc;
            else
                c[i * n + j] = acc;
        }
    }
}

void require_2d(const Tensor& t, const char* op) {
    if (t.rank() != 2)
        throw DimensionError(std::string(op) + ": expected 2-D tensor, got " + shape_str(t.shape));
}

} // namespace

std::size_t Tensor::numel() const { return product(shape); }

Tensor Tensor::zeros(std::vector<std::size_t> shape) {
    Tensor t;
    t.data = std::make_shared<std::vector<double>>(product(shape), 0.0);
    t.shape = std::move(shape);
    return t;
}

Tensor Tensor::full(std::vector<std::size_t> shape, double value) {
    Tensor t = zeros(std::move(shape));
    std::fill(t.data->begin(), t.data->end(), value);
    return t;
}

Tensor Tensor::from_vector(std::vector<std::size_t> shape, std::vector<double> values) {
    if (product(shape) != values.size())
        throw DimensionError("from_vector: shape " + shape_str(shape) + " does not match " +
                             std::to_string(values.size()) + " values");
    Tensor t;
    t.shape = std::move(shape);
    t.data = std::make_shared<std::vector<double>>(std::move(values));
    return t;
}

Tensor Tensor::randn(std::vector<std::size_t> shape, Rng& rng, double stddev) {
    Tensor t = zeros(std::move(shape));
    for (double& v : *t.data) v = rng.normal(0.0, stddev);
    return t;
}

Tensor Tensor::detached() const {
    Tensor t;
    t.shape = shape;
    t.data = std::make_shared<std::vector<double>>(*data);
    return t;
}

void Tensor::set_requires_grad(Tape* t) {
    requires_grad = true;
    tape = t;
    if (!grad || grad->size() != numel())
        grad = std::make_shared<std::vector<double>>(numel(), 0.0);
}

void Tensor::zero_grad() {
    if (grad) std::fill(grad->begin(), grad->end(), 0.0);
}

void Tape::backward(const Tensor& scalar_loss) {
    if (used_) throw Error("Tape::backward called twice without reset");
    if (scalar_loss.numel() != 1) throw DimensionError("backward: loss must be scalar");
    if (!scalar_loss.requires_grad || scalar_loss.tape != this)
        throw Error("backward: loss is not recorded on this tape");
    used_ = true;
    (*scalar_loss.grad)[0] += 1.0;
    for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) (*it)();
}

void check_finite(const Tensor& t, const char* op) {
    for (const double v : *t.data)
        if (!std::isfinite(v))
            throw NumericalError(std::string(op) + ": non-finite value in output");
}

// --- structural ops -------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
    require_2d(a, "matmul");
    require_2d(b, "matmul");
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    if (b.dim(0) != k)
        throw DimensionError("matmul: inner dims disagree, " + shape_str(a.shape) + " vs " +
                             shape_str(b.shape));
    Tape* tape = grad_tape({&a, &b});
    Tensor out = make_output({m, n}, tape);
    mm(a.data->data(), b.data->data(), out.data->data(), m, k, n, false, false, false);
    check_finite(out, "matmul");
    if (tape) {
        tape->record([a, b, out, m, k, n]() {
            const double* go = out.grad->data();
            if (a.requires_grad) // dA += dC·Bᵀ
                mm(go, b.data->data(), a.grad->data(), m, n, k, false, true, true);
            if (b.requires_grad) // dB += Aᵀ·dC
                mm(a.data->data(), go, b.grad->data(), k, m, n, true, false, true);
        });
    }
    return out;
}

Tensor transpose(const Tensor& x) {
    require_2d(x, "transpose");
    const std::size_t r = x.dim(0), c = x.dim(1);
    Tape* tape = grad_tape({&x});
    Tensor out = make_output({c, r}, tape);
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) (*out.data)[j * r + i] = (*x.data)[i * c + j];
    if (tape) {
        tape->record([x, out, r, c]() {
            if (!x.requires_grad) return;
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < c; ++j)
                    (*x.grad)[i * c + j] += (*out.grad)[j * r + i];
        });
    }
    return out;
}

Tensor reshape(const Tensor& x, std::vector<std::size_t> shape) {
    if (product(shape) != x.numel())
        throw DimensionError("reshape: " + shape_str(x.shape) + " -> " + shape_str(shape) +
                             " changes element count");
    Tape* tape = grad_tape({&x});
    Tensor out = make_output(std::move(shape), tape);
    *out.data = *x.data;
    if (tape) {
        tape->record([x, out]() {
            if (!x.requires_grad) return;
            for (std::size_t i = 0; i < x.numel(); ++i) (*x.grad)[i] += (*out.grad)[i];
        });
    }
    return out;
}

namespace {

std::vector<std::size_t> strides_of(const std::vector<std::size_t>& shape) {
    std::vector<std::size_t> s(shape.size(), 1);
    for (std::size_t i = shape.size(); i-- > 1;) s[i - 1] = s[i] * shape[i];
    return s;
}

// Visits every flat source index of an N-D sub-box, in output order.
template <typename Fn>
void for_each_in_box(const std::vector<std::size_t>& src_shape,
                     const std::vector<std::size_t>& begin,
                     const std::vector<std::size_t>& extent, Fn&& fn) {
    const auto strides = strides_of(src_shape);
    const std::size_t nd = src_shape.size();
    std::vector<std::size_t> idx(nd, 0);
    const std::size_t total = product(extent);
    for (std::size_t flat = 0; flat < total; ++flat) {
        std::size_t src = 0;
        for (std::size_t d = 0; d < nd; ++d) src += (begin[d] + idx[d]) * strides[d];
        fn(flat, src);
        for (std::size_t d = nd; d-- > 0;) {
            if (++idx[d] < extent[d]) break;
            idx[d] = 0;
        }
    }
}

} // namespace

Tensor slice(const Tensor& x, const std::vector<std::pair<std::size_t, std::size_t>>& ranges) {
    if (ranges.size() != x.rank()) throw DimensionError("slice: one range per dimension required");
    std::vector<std::size_t> begin(x.rank()), extent(x.rank());
    for (std::size_t d = 0; d < x.rank(); ++d) {
        const auto [b, e] = ranges[d];
        if (b > e || e > x.dim(d))
            throw DimensionError("slice: range out of bounds on dim " + std::to_string(d));
        begin[d] = b;
        extent[d] = e - b;
    }
    Tape* tape = grad_tape({&x});
    Tensor out = make_output(extent, tape);
    for_each_in_box(x.shape, begin, extent,
                    [&](std::size_t dst, std::size_t src) { (*out.data)[dst] = (*x.data)[src]; });
    if (tape) {
        auto xshape = x.shape;
        tape->record([x, out, xshape, begin, extent]() {
            if (!x.requires_grad) return;
            for_each_in_box(xshape, begin, extent, [&](std::size_t dst, std::size_t src) {
                (*x.grad)[src] += (*out.grad)[dst];
            });
        });
    }
    return out;
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
    if (parts.empty()) throw DimensionError("concat: no inputs");
    const std::size_t nd = parts[0].rank();
    if (axis >= nd) throw DimensionError("concat: axis out of range");
    std::vector<std::size_t> shape = parts[0].shape;
    std::size_t axis_total = 0;
    for (const Tensor& p : parts) {
        if (p.rank() != nd) throw DimensionError("concat: rank mismatch");
        for (std::size_t d = 0; d < nd; ++d)
            if (d != axis && p.dim(d) != shape[d])
                throw DimensionError("concat: shape mismatch off the concat axis");
        axis_total += p.dim(axis);
    }
    shape[axis] = axis_total;

    std::vector<const Tensor*> ins;
    for (const Tensor& p : parts) ins.push_back(&p);
    Tape* tape = nullptr;
    for (const Tensor* p : ins) {
        Tape* t = grad_tape({p});
        if (t) {
            if (tape && tape != t) throw Error("concat: inputs on different tapes");
            tape = t;
        }
    }
    Tensor out = make_output(shape, tape);

    // outer: dims before axis; inner: dims after axis.
    std::size_t outer = 1, inner = 1;
    for (std::size_t d = 0; d < axis; ++d) outer *= shape[d];
    for (std::size_t d = axis + 1; d < nd; ++d) inner *= shape[d];

    std::size_t axis_off = 0;
    for (const Tensor& p : parts) {
        const std::size_t pa = p.dim(axis);
        for (std::size_t o = 0; o < outer; ++o)
            std::memcpy(out.data->data() + (o * axis_total + axis_off) * inner,
                        p.data->data() + o * pa * inner, pa * inner * sizeof(double));
        axis_off += pa;
    }
    if (tape) {
        auto parts_copy = parts;
        tape->record([parts_copy, out, outer, inner, axis_total, axis]() {
            std::size_t off = 0;
            for (const Tensor& p : parts_copy) {
                const std::size_t pa = p.dim(axis);
                if (p.requires_grad) {
                    for (std::size_t o = 0; o < outer; ++o)
                        for (std::size_t i = 0; i < pa * inner; ++i)
                            (*p.grad)[o * pa * inner + i] +=
                                (*out.grad)[(o * axis_total + off) * inner + i];
                }
                off += pa;
            }
        });
    }
    return out;
}

// --- elementwise ops ------------------------------------------------------

namespace {

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape != b.shape)
        throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape) + " vs " +
                             shape_str(b.shape));
}

} // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "add");
    Tape* tape = grad_tape({&a, &b});
    Tensor out = make_output(a.shape, tape);
    for (std::size_t i = 0; i < out.numel(); ++i) (*out.data)[i] = (*a.data)[i] + (*b.data)[i];
    check_finite(out, "add");
    if (tape) {
        tape->record([a, b, out]() {
            for (std::size_t i = 0; i < out.numel(); ++i) {
                const double g = (*out.grad)[i];
                if (a.requires_grad) (*a.grad)[i] += g;
                if (b.requires_grad) (*b.grad)[i] += g;
            }
        });
    }
    return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "sub");
    Tape* tape = grad_tape({&a, &b});
    Tensor out = make_output(a.shape, tape);
    for (std::size_t i = 0; i < out.numel(); ++i) (*out.data)[i] = (*a.data)[i] - (*b.data)[i];
    check_finite(out, "sub");
    if (tape) {
        tape->record([a, b, out]() {
            for (std::size_t i = 0; i < out.numel(); ++i) {
                const double g = (*out.grad)[i];
                if (a.requires_grad) (*a.grad)[i] += g;
                if (b.requires_grad) (*b.grad)[i] -= g;
            }
        });
    }
    return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "mul");
    Tape* tape = grad_tape({&a, &b});
    Tensor out = make_output(a.shape, tape);
    for (std::size_t i = 0; i < out.numel(); ++i) (*out.data)[i] = (*a.data)[i] * (*b.data)[i];
    check_finite(out, "mul");
    if (tape) {
        tape->record([a, b, out]() {
            for (std::size_t i = 0; i < out.numel(); ++i) {
                const double g = (*out.grad)[i];
                if (a.requires_grad) (*a.grad)[i] += g * (*b.data)[i];
                if (b.requires_grad) (*b.grad)[i] += g * (*a.data)[i];
            }
        });
    }
    return out;
}

Tensor scale(const Tensor& x, double s) {
    Tape* tape = grad_tape({&x});
    Tensor out = make_output(x.shape, tape);
    for (std::size_t i = 0; i < out.numel(); ++i) (*out.data)[i] = (*x.data)[i] * s;
    check_finite(out, "scale");
    if (tape) {
        tape->record([x, out, s]() {
            if (!x.requires_grad) return;
            for (std::size_t i = 0; i < out.numel(); ++i) (*x.grad)[i] += (*out.grad)[i] * s;
        });
    }
    return out;
}

Tensor add_rowvec(const Tensor& x, const Tensor& v) {
    require_2d(x, "add_rowvec");
    if (v.rank() != 1 || v.dim(0) != x.dim(1))
        throw DimensionError("add_rowvec: vector length must equal column count");
    Tape* tape = grad_tape({&x, &v});
    Tensor out = make_output(x.shape, tape);
    const std::size_t r = x.dim(0), c = x.dim(1);
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j)
            (*out.data)[i * c + j] = (*x.data)[i * c + j] + (*v.data)[j];
    check_finite(out, "add_rowvec");
    if (tape) {
        tape->record([x, v, out, r, c]() {
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < c; ++j) {
                    const double g = (*out.grad)[i * c + j];
                    if (x.requires_grad) (*x.grad)[i * c + j] += g;
                    if (v.requires_grad) (*v.grad)[j] += g;
                }
        });
    }
    return out;
}

Tensor relu(const Tensor& x) {
    Tape* tape = grad_tape({&x});
    Tensor out = make_output(x.shape, tape);
    for (std::size_t i = 0; i < out.numel(); ++i) {
        const double v = (*x.data)[i];
        (*out.data)[i] = v > 0.0 ? v : 0.0;
    }
    if (tape) {
        tape->record([x, out]() {
            if (!x.requires_grad) return;
            for (std::size_t i = 0; i < out.numel(); ++i)
                if ((*x.data)[i] > 0.0) (*x.grad)[i] += (*out.grad)[i];
        });
    }
    return out;
}

namespace {
constexpr double kGeluC = 0.7978845608028654; // sqrt(2/pi)
constexpr double kGeluA = 0.044715;
} // namespace

Tensor gelu(const Tensor& x) {
    Tape* tape = grad_tape({&x});
    Tensor out = make_output(x.shape, tape);
    for (std::size_t i = 0; i < out.numel(); ++i) {
        const double v = (*x.data)[i];
        const double t = std::tanh(kGeluC * (v + kGeluA * v * v * v));
        (*out.data)[i] = 0.5 * v * (1.0 + t);
    }
    check_finite(out, "gelu");
    if (tape) {
        tape->record([x, out]() {
            if (!x.requires_grad) return;
            for (std::size_t i = 0; i < out.numel(); ++i) {
                const double v = (*x.data)[i];
                const double t = std::tanh(kGeluC * (v + kGeluA * v * v * v));
                const double du = kGeluC * (1.0 + 3.0 * kGeluA * v * v);
                const double dydx = 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * du;
                (*x.grad)[i] += (*out.grad)[i] * dydx;
            }
        });
    }
    return out;
}

Tensor softmax_rows(const Tensor& x) {
    require_2d(x, "softmax_rows");
    check_finite(x, "softmax_rows(input)");
    Tape* tape = grad_tape({&x});
    Tensor out = make_output(x.shape, tape);
    const std::size_t r = x.dim(0), c = x.dim(1);
    for (std::size_t i = 0; i < r; ++i) {
        const double* row = x.data->data() + i * c;
        double mx = row[0];
        for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, row[j]);
        double denom = 0.0;
        double* orow = out.data->data() + i * c;
        for (std::size_t j = 0; j < c; ++j) {
            orow[j] = std::exp(row[j] - mx);
            denom += orow[j];
        }
        for (std::size_t j = 0; j < c; ++j) orow[j] /= denom;
    }
    if (tape) {
        tape->record([x, out, r, c]() {
            if (!x.requires_grad) return;
            for (std::size_t i = 0; i < r; ++i) {
                const double* y = out.data->data() + i * c;
                const double* gy = out.grad->data() + i * c;
                double dot = 0.0;
                for (std::size_t j = 0; j < c; ++j) dot += y[j] * gy[j];
                for (std::size_t j = 0; j < c; ++j) (*x.grad)[i * c + j] += y[j] * (gy[j] - dot);
            }
        });
    }
    return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
    require_2d(x, "layer_norm");
    const std::size_t r = x.dim(0), c = x.dim(1);
    if (gain.rank() != 1 || gain.dim(0) != c || bias.rank() != 1 || bias.dim(0) != c)
        throw DimensionError("layer_norm: gain/bias must be vectors of the feature dim");
    Tape* tape = grad_tape({&x, &gain, &bias});
    Tensor out = make_output(x.shape, tape);
    // per-row mean / population variance, cached for backward
    auto mu = std::make_shared<std::vector<double>>(r);
    auto inv_sd = std::make_shared<std::vector<double>>(r);
    for (std::size_t i = 0; i < r; ++i) {
        const double* row = x.data->data() + i * c;
        double m = 0.0;
        for (std::size_t j = 0; j < c; ++j) m += row[j];
        m /= static_cast<double>(c);
        double var = 0.0;
        for (std::size_t j = 0; j < c; ++j) var += (row[j] - m) * (row[j] - m);
        var /= static_cast<double>(c);
        const double inv = 1.0 / std::sqrt(var + eps);
        (*mu)[i] = m;
        (*inv_sd)[i] = inv;
        for (std::size_t j = 0; j < c; ++j)
            (*out.data)[i * c + j] = (*gain.data)[j] * (row[j] - m) * inv + (*bias.data)[j];
    }
    check_finite(out, "layer_norm");
    if (tape) {
        tape->record([x, gain, bias, out, mu, inv_sd, r, c]() {
            for (std::size_t i = 0; i < r; ++i) {
                const double* row = x.data->data() + i * c;
                const double* gy = out.grad->data() + i * c;
                const double m = (*mu)[i], inv = (*inv_sd)[i];
                double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
                for (std::size_t j = 0; j < c; ++j) {
                    const double xhat = (row[j] - m) * inv;
                    const double dxhat = gy[j] * (*gain.data)[j];
                    sum_dxhat += dxhat;
                    sum_dxhat_xhat += dxhat * xhat;
                    if (gain.requires_grad) (*gain.grad)[j] += gy[j] * xhat;
                    if (bias.requires_grad) (*bias.grad)[j] += gy[j];
                }
                if (x.requires_grad) {
                    const double n = static_cast<double>(c);
                    for (std::size_t j = 0; j < c; ++j) {
                        const double xhat = (row[j] - m) * inv;
                        const double dxhat = gy[j] * (*gain.data)[j];
                        (*x.grad)[i * c + j] +=
                            inv * (dxhat - sum_dxhat / n - xhat * sum_dxhat_xhat / n);
                    }
                }
            }
        });
    }
    return out;
}

Tensor sum(const Tensor& x) {
    Tape* tape = grad_tape({&x});
    Tensor out = make_output({1}, tape);
    double acc = 0.0;
    for (const double v : *x.data) acc += v;
    (*out.data)[0] = acc;
    check_finite(out, "sum");
    if (tape) {
        tape->record([x, out]() {
            if (!x.requires_grad) return;
            const double g = (*out.grad)[0];
            for (std::size_t i = 0; i < x.numel(); ++i) (*x.grad)[i] += g;
        });
    }
    return out;
}

Tensor mean(const Tensor& x) {
    if (x.numel() == 0) throw DimensionError("mean: empty tensor");
    return scale(sum(x), 1.0 / static_cast<double>(x.numel()));
}

// --- spatial ops ----------------------------------------------------------

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, std::size_t pad) {
    if (x.rank() != 3 || w.rank() != 4 || b.rank() != 1)
        throw DimensionError("conv2d: expected x[C,H,W], w[Co,Ci,kh,kw], b[Co]");
    const std::size_t ci = x.dim(0), h = x.dim(1), wd = x.dim(2);
    const std::size_t co = w.dim(0), kh = w.dim(2), kw = w.dim(3);
    if (w.dim(1) != ci || b.dim(0) != co) throw DimensionError("conv2d: channel mismatch");
    if (h + 2 * pad < kh || wd + 2 * pad < kw) throw DimensionError("conv2d: kernel larger than input");
    const std::size_t oh = h + 2 * pad - kh + 1, ow = wd + 2 * pad - kw + 1;

    Tape* tape = grad_tape({&x, &w, &b});
    Tensor out = make_output({co, oh, ow}, tape);
    const double* xd = x.data->data();
    const double* wd_ = w.data->data();
    double* od = out.data->data();
#pragma omp parallel for schedule(static)
    for (long long occ = 0; occ < static_cast<long long>(co); ++occ) {
        const auto oc = static_cast<std::size_t>(occ);
        for (std::size_t oy = 0; oy < oh; ++oy)
            for (std::size_t ox = 0; ox < ow; ++ox) {
                double acc = (*b.data)[oc];
                for (std::size_t ic = 0; ic < ci; ++ic)
                    for (std::size_t ky = 0; ky < kh; ++ky) {
                        const long long iy = static_cast<long long>(oy + ky) - static_cast<long long>(pad);
                        if (iy < 0 || iy >= static_cast<long long>(h)) continue;
                        for (std::size_t kx = 0; kx < kw; ++kx) {
                            const long long ix = static_cast<long long>(ox + kx) - static_cast<long long>(pad);
                            if (ix < 0 || ix >= static_cast<long long>(wd)) continue;
                            acc += xd[(ic * h + iy) * wd + ix] *
                                   wd_[((oc * ci + ic) * kh + ky) * kw + kx];
                        }
                    }
                od[(oc * oh + oy) * ow + ox] = acc;
            }
    }
    check_finite(out, "conv2d");
    if (tape) {
        tape->record([x, w, b, out, ci, h, wd, co, kh, kw, oh, ow, pad]() {
            const double* go = out.grad->data();
            if (x.requires_grad) {
#pragma omp parallel for schedule(static)
                for (long long icc = 0; icc < static_cast<long long>(ci); ++icc) {
                    const auto ic = static_cast<std::size_t>(icc);
                    for (std::size_t iy = 0; iy < h; ++iy)
                        for (std::size_t ix = 0; ix < wd; ++ix) {
                            double acc = 0.0;
                            for (std::size_t oc = 0; oc < co; ++oc)
                                for (std::size_t ky = 0; ky < kh; ++ky) {
                                    const long long oy = static_cast<long long>(iy + pad) - static_cast<long long>(ky);
                                    if (oy < 0 || oy >= static_cast<long long>(oh)) continue;
                                    for (std::size_t kx = 0; kx < kw; ++kx) {
                                        const long long ox = static_cast<long long>(ix + pad) - static_cast<long long>(kx);
                                        if (ox < 0 || ox >= static_cast<long long>(ow)) continue;
                                        acc += go[(oc * oh + oy) * ow + ox] *
                                               (*w.data)[((oc * ci + ic) * kh + ky) * kw + kx];
                                    }
                                }
                            (*x.grad)[(ic * h + iy) * wd + ix] += acc;
                        }
                }
            }
            if (w.requires_grad) {
#pragma omp parallel for schedule(static)
                for (long long fcc = 0; fcc < static_cast<long long>(co * ci); ++fcc) {
                    const auto oc = static_cast<std::size_t>(fcc) / ci;
                    const auto ic = static_cast<std::size_t>(fcc) % ci;
                    for (std::size_t ky = 0; ky < kh; ++ky)
                        for (std::size_t kx = 0; kx < kw; ++kx) {
                            double acc = 0.0;
                            for (std::size_t oy = 0; oy < oh; ++oy) {
                                const long long iy = static_cast<long long>(oy + ky) - static_cast<long long>(pad);
                                if (iy < 0 || iy >= static_cast<long long>(h)) continue;
                                for (std::size_t ox = 0; ox < ow; ++ox) {
                                    const long long ix = static_cast<long long>(ox + kx) - static_cast<long long>(pad);
                                    if (ix < 0 || ix >= static_cast<long long>(wd)) continue;
                                    acc += go[(oc * oh + oy) * ow + ox] *
                                           (*x.data)[(ic * h + iy) * wd + ix];
                                }
                            }
                            (*w.grad)[((oc * ci + ic) * kh + ky) * kw + kx] += acc;
                        }
                }
            }
            if (b.requires_grad) {
                for (std::size_t oc = 0; oc < co; ++oc) {
                    double acc = 0.0;
                    for (std::size_t i = 0; i < oh * ow; ++i) acc += go[oc * oh * ow + i];
                    (*b.grad)[oc] += acc;
                }
            }
        });
    }
    return out;
}

namespace {

// Half-pixel-center source taps for a 2x upsample along one axis.
struct AxisTaps {
    std::vector<std::size_t> i0, i1;
    std::vector<double> w1; // weight of i1; i0 gets (1-w1)
};

AxisTaps upsample_taps(std::size_t in_n) {
    AxisTaps t;
    const std::size_t out_n = in_n * 2;
    t.i0.resize(out_n);
    t.i1.resize(out_n);
    t.w1.resize(out_n);
    for (std::size_t o = 0; o < out_n; ++o) {
        double s = (static_cast<double>(o) + 0.5) / 2.0 - 0.5;
        s = std::clamp(s, 0.0, static_cast<double>(in_n - 1));
        const auto i0 = static_cast<std::size_t>(s);
        t.i0[o] = i0;
        t.i1[o] = std::min(i0 + 1, in_n - 1);
        t.w1[o] = s - static_cast<double>(i0);
    }
    return t;
}

} // namespace

Tensor upsample2x(const Tensor& x) {
    if (x.rank() != 3) throw DimensionError("upsample2x: expected [C,H,W]");
    const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
    const std::size_t oh = 2 * h, ow = 2 * w;
    Tape* tape = grad_tape({&x});
    Tensor out = make_output({c, oh, ow}, tape);
    const auto ty = std::make_shared<AxisTaps>(upsample_taps(h));
    const auto tx = std::make_shared<AxisTaps>(upsample_taps(w));
#pragma omp parallel for schedule(static)
    for (long long cc = 0; cc < static_cast<long long>(c); ++cc) {
        const auto ch = static_cast<std::size_t>(cc);
        const double* xc = x.data->data() + ch * h * w;
        double* oc = out.data->data() + ch * oh * ow;
        for (std::size_t oy = 0; oy < oh; ++oy)
            for (std::size_t ox = 0; ox < ow; ++ox) {
                const double wy = ty->w1[oy], wx = tx->w1[ox];
                const double v00 = xc[ty->i0[oy] * w + tx->i0[ox]];
                const double v01 = xc[ty->i0[oy] * w + tx->i1[ox]];
                const double v10 = xc[ty->i1[oy] * w + tx->i0[ox]];
                const double v11 = xc[ty->i1[oy] * w + tx->i1[ox]];
                oc[oy * ow + ox] = (1 - wy) * ((1 - wx) * v00 + wx * v01) +
                                   wy * ((1 - wx) * v10 + wx * v11);
            }
    }
    if (tape) {
        tape->record([x, out, ty, tx, c, h, w, oh, ow]() {
            if (!x.requires_grad) return;
#pragma omp parallel for schedule(static)
            for (long long cc = 0; cc < static_cast<long long>(c); ++cc) {
                const auto ch = static_cast<std::size_t>(cc);
                const double* go = out.grad->data() + ch * oh * ow;
                double* gx = x.grad->data() + ch * h * w;
                for (std::size_t oy = 0; oy < oh; ++oy)
                    for (std::size_t ox = 0; ox < ow; ++ox) {
                        const double g = go[oy * ow + ox];
                        const double wy = ty->w1[oy], wx = tx->w1[ox];
                        gx[ty->i0[oy] * w + tx->i0[ox]] += (1 - wy) * (1 - wx) * g;
                        gx[ty->i0[oy] * w + tx->i1[ox]] += (1 - wy) * wx * g;
                        gx[ty->i1[oy] * w + tx->i0[ox]] += wy * (1 - wx) * g;
                        gx[ty->i1[oy] * w + tx->i1[ox]] += wy * wx * g;
                    }
            }
        });
    }
    return out;
}

} // namespace cacvit
