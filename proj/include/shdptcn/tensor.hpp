#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace shdptcn {

/// Dense row-major tensor of doubles with a gradient buffer of the same
/// length. Shapes are fixed at construction; data is mutable only through
/// the tape machinery (or directly for leaf/parameter tensors).
class Tensor {
public:
    Tensor(std::vector<std::size_t> shape)
        : shape_(std::move(shape)),
          data_(numel_of(shape_), 0.0),
          grad_(data_.size(), 0.0) {}

    Tensor(std::vector<std::size_t> shape, std::vector<double> values)
        : shape_(std::move(shape)), data_(std::move(values)), grad_(data_.size(), 0.0) {
        if (data_.size() != numel_of(shape_))
            throw std::invalid_argument("Tensor: data length " + std::to_string(data_.size()) +
                                        " does not match shape " + shape_string(shape_));
    }

    const std::vector<std::size_t>& shape() const { return shape_; }
    std::size_t numel() const { return data_.size(); }
    std::size_t ndim() const { return shape_.size(); }

    std::size_t rows() const { return shape_.at(0); }
    std::size_t cols() const { return shape_.at(1); }

    std::vector<double>& data() { return data_; }
    const std::vector<double>& data() const { return data_; }
    std::vector<double>& grad() { return grad_; }
    const std::vector<double>& grad() const { return grad_; }

    double& at(std::size_t i) { return data_[i]; }
    double at(std::size_t i) const { return data_[i]; }

    void zero_grad() { std::fill(grad_.begin(), grad_.end(), 0.0); }

    bool all_finite() const {
        for (double v : data_)
            if (!std::isfinite(v)) return false;
        return true;
    }

    static std::size_t numel_of(const std::vector<std::size_t>& shape) {
        std::size_t n = 1;
        for (std::size_t e : shape) {
            if (e == 0) throw std::invalid_argument("Tensor: zero extent in shape");
            n *= e;
        }
        return n;
    }

    static std::string shape_string(const std::vector<std::size_t>& shape) {
        std::ostringstream os;
        os << "[";
        for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
        os << "]";
        return os.str();
    }

private:
    std::vector<std::size_t> shape_;
    std::vector<double> data_;
    std::vector<double> grad_;
};

using Value = std::shared_ptr<Tensor>;

inline Value make_value(std::vector<std::size_t> shape) {
    return std::make_shared<Tensor>(std::move(shape));
}
inline Value make_value(std::vector<std::size_t> shape, std::vector<double> values) {
    return std::make_shared<Tensor>(std::move(shape), std::move(values));
}
inline Value make_scalar(double v) { return make_value({1}, {v}); }

inline void require_same_shape(const Value& a, const Value& b, const char* op) {
    if (a->shape() != b->shape())
        throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                                    Tensor::shape_string(a->shape()) + " vs " +
                                    Tensor::shape_string(b->shape()));
}

/// Records the forward computation as an ordered list of backward rules.
/// Node order is the forward (topological) order; backward() replays the
/// rules in reverse, accumulating into grad buffers. Intermediate (op
/// output) grads are reset at the start of each backward pass so leaf
/// gradients accumulate exactly once per call.
class Tape {
public:
    Value leaf(std::vector<std::size_t> shape, std::vector<double> values) {
        return make_value(std::move(shape), std::move(values));
    }

    void record(Value output, std::function<void()> backward_rule) {
        nodes_.push_back({std::move(output), std::move(backward_rule)});
    }

    void backward(const Value& loss) {
        if (loss->numel() != 1)
            throw std::invalid_argument("backward: loss must be scalar, got shape " +
                                        Tensor::shape_string(loss->shape()));
        for (auto& n : nodes_) n.output->zero_grad();
        loss->grad()[0] = 1.0;
        for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) it->backward();
    }

    std::size_t size() const { return nodes_.size(); }

private:
    struct Node {
        Value output;
        std::function<void()> backward;
    };
    std::vector<Node> nodes_;
};

// ---------------------------------------------------------------------
// Differentiable operations. Each returns a fresh output tensor and
// records its backward rule on the tape.
// ---------------------------------------------------------------------

inline Value matmul(Tape& tape, const Value& a, const Value& b) {
    if (a->ndim() != 2 || b->ndim() != 2 || a->cols() != b->rows())
        throw std::invalid_argument("matmul: incompatible shapes " +
                                    Tensor::shape_string(a->shape()) + " · " +
                                    Tensor::shape_string(b->shape()));
    const std::size_t m = a->rows(), k = a->cols(), n = b->cols();
    Value out = make_value({m, n});
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
            const double av = a->at(i * k + p);
            for (std::size_t j = 0; j < n; ++j)
                out->at(i * n + j) += av * b->at(p * n + j);
        }
    tape.record(out, [a, b, out, m, k, n] {
        // dA = dOut · Bᵀ ; dB = Aᵀ · dOut
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) {
                const double go = out->grad()[i * n + j];
                if (go == 0.0) continue;
                for (std::size_t p = 0; p < k; ++p) {
                    a->grad()[i * k + p] += go * b->at(p * n + j);
                    b->grad()[p * n + j] += go * a->at(i * k + p);
                }
            }
    });
    return out;
}

inline Value transpose(Tape& tape, const Value& a) {
    if (a->ndim() != 2) throw std::invalid_argument("transpose: expects a matrix");
    const std::size_t m = a->rows(), n = a->cols();
    Value out = make_value({n, m});
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out->at(j * m + i) = a->at(i * n + j);
    tape.record(out, [a, out, m, n] {
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) a->grad()[i * n + j] += out->grad()[j * m + i];
    });
    return out;
}

inline Value add(Tape& tape, const Value& a, const Value& b) {
    require_same_shape(a, b, "add");
    Value out = make_value(a->shape());
    for (std::size_t i = 0; i < a->numel(); ++i) out->at(i) = a->at(i) + b->at(i);
    tape.record(out, [a, b, out] {
        for (std::size_t i = 0; i < out->numel(); ++i) {
            a->grad()[i] += out->grad()[i];
            b->grad()[i] += out->grad()[i];
        }
    });
    return out;
}

/// Bias addition along the last axis: a is [m×n], bias is [n].
inline Value add_bias(Tape& tape, const Value& a, const Value& bias) {
    if (a->ndim() != 2 || bias->numel() != a->cols())
        throw std::invalid_argument("add_bias: bias length " + std::to_string(bias->numel()) +
                                    " does not match last axis of " +
                                    Tensor::shape_string(a->shape()));
    const std::size_t m = a->rows(), n = a->cols();
    Value out = make_value(a->shape());
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out->at(i * n + j) = a->at(i * n + j) + bias->at(j);
    tape.record(out, [a, bias, out, m, n] {
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) {
                a->grad()[i * n + j] += out->grad()[i * n + j];
                bias->grad()[j] += out->grad()[i * n + j];
            }
    });
    return out;
}

inline Value elementwise_mul(Tape& tape, const Value& a, const Value& b) {
    require_same_shape(a, b, "elementwise_mul");
    Value out = make_value(a->shape());
    for (std::size_t i = 0; i < a->numel(); ++i) out->at(i) = a->at(i) * b->at(i);
    tape.record(out, [a, b, out] {
        for (std::size_t i = 0; i < out->numel(); ++i) {
            a->grad()[i] += b->at(i) * out->grad()[i];
            b->grad()[i] += a->at(i) * out->grad()[i];
        }
    });
    return out;
}

inline Value scale(Tape& tape, const Value& a, double c) {
    Value out = make_value(a->shape());
    for (std::size_t i = 0; i < a->numel(); ++i) out->at(i) = c * a->at(i);
    tape.record(out, [a, out, c] {
        for (std::size_t i = 0; i < out->numel(); ++i) a->grad()[i] += c * out->grad()[i];
    });
    return out;
}

inline Value sub(Tape& tape, const Value& a, const Value& b) {
    require_same_shape(a, b, "sub");
    Value out = make_value(a->shape());
    for (std::size_t i = 0; i < a->numel(); ++i) out->at(i) = a->at(i) - b->at(i);
    tape.record(out, [a, b, out] {
        for (std::size_t i = 0; i < out->numel(); ++i) {
            a->grad()[i] += out->grad()[i];
            b->grad()[i] -= out->grad()[i];
        }
    });
    return out;
}

inline Value relu(Tape& tape, const Value& a) {
    Value out = make_value(a->shape());
    for (std::size_t i = 0; i < a->numel(); ++i) out->at(i) = a->at(i) > 0.0 ? a->at(i) : 0.0;
    tape.record(out, [a, out] {
        // subgradient 0 at exactly 0
        for (std::size_t i = 0; i < out->numel(); ++i)
            if (a->at(i) > 0.0) a->grad()[i] += out->grad()[i];
    });
    return out;
}

inline Value softmax_rows(Tape& tape, const Value& a) {
    if (a->ndim() != 2) throw std::invalid_argument("softmax_rows: expects a matrix");
    const std::size_t m = a->rows(), n = a->cols();
    Value out = make_value(a->shape());
    for (std::size_t i = 0; i < m; ++i) {
        double mx = a->at(i * n);
        for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, a->at(i * n + j));
        double denom = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            out->at(i * n + j) = std::exp(a->at(i * n + j) - mx);
            denom += out->at(i * n + j);
        }
        for (std::size_t j = 0; j < n; ++j) out->at(i * n + j) /= denom;
    }
    tape.record(out, [a, out, m, n] {
        for (std::size_t i = 0; i < m; ++i) {
            double dot = 0.0;
            for (std::size_t j = 0; j < n; ++j)
                dot += out->grad()[i * n + j] * out->at(i * n + j);
            for (std::size_t j = 0; j < n; ++j)
                a->grad()[i * n + j] += out->at(i * n + j) * (out->grad()[i * n + j] - dot);
        }
    });
    return out;
}

inline Value sum(Tape& tape, const Value& a) {
    Value out = make_scalar(std::accumulate(a->data().begin(), a->data().end(), 0.0));
    tape.record(out, [a, out] {
        for (std::size_t i = 0; i < a->numel(); ++i) a->grad()[i] += out->grad()[0];
    });
    return out;
}

inline Value mean(Tape& tape, const Value& a) {
    const double inv = 1.0 / static_cast<double>(a->numel());
    Value out = make_scalar(std::accumulate(a->data().begin(), a->data().end(), 0.0) * inv);
    tape.record(out, [a, out, inv] {
        for (std::size_t i = 0; i < a->numel(); ++i) a->grad()[i] += inv * out->grad()[0];
    });
    return out;
}

/// Extracts the last column of a [c×T] matrix as a [1×c] row vector
/// (the final time step's channel vector).
inline Value last_time_step(Tape& tape, const Value& a) {
    if (a->ndim() != 2) throw std::invalid_argument("last_time_step: expects a matrix");
    const std::size_t c = a->rows(), t = a->cols();
    Value out = make_value({1, c});
    for (std::size_t i = 0; i < c; ++i) out->at(i) = a->at(i * t + (t - 1));
    tape.record(out, [a, out, c, t] {
        for (std::size_t i = 0; i < c; ++i) a->grad()[i * t + (t - 1)] += out->grad()[i];
    });
    return out;
}

/// Causal dilated 1-D convolution with left zero-padding of (K−1)·d, so
/// output length equals input length. x is [c_in×T], w is [c_out×c_in×K],
/// bias is [c_out]; out(t) depends only on x at times ≤ t.
inline Value causal_conv1d(Tape& tape, const Value& x, const Value& w, const Value& bias,
                           std::size_t dilation) {
    if (x->ndim() != 2 || w->ndim() != 3)
        throw std::invalid_argument("causal_conv1d: expects x [c_in×T], w [c_out×c_in×K]");
    const std::size_t cin = x->rows(), len = x->cols();
    const std::size_t cout = w->shape()[0], kin = w->shape()[1], ksz = w->shape()[2];
    if (kin != cin)
        throw std::invalid_argument("causal_conv1d: kernel in-channels " + std::to_string(kin) +
                                    " vs input channels " + std::to_string(cin));
    if (bias->numel() != cout)
        throw std::invalid_argument("causal_conv1d: bias length " + std::to_string(bias->numel()) +
                                    " vs out channels " + std::to_string(cout));
    if (dilation == 0) throw std::invalid_argument("causal_conv1d: dilation must be positive");

    Value out = make_value({cout, len});
    for (std::size_t oc = 0; oc < cout; ++oc)
        for (std::size_t t = 0; t < len; ++t) {
            double acc = bias->at(oc);
            for (std::size_t ic = 0; ic < cin; ++ic)
                for (std::size_t k = 0; k < ksz; ++k) {
                    const std::ptrdiff_t src =
                        static_cast<std::ptrdiff_t>(t) -
                        static_cast<std::ptrdiff_t>((ksz - 1 - k) * dilation);
                    if (src >= 0)
                        acc += w->at((oc * cin + ic) * ksz + k) *
                               x->at(ic * len + static_cast<std::size_t>(src));
                }
            out->at(oc * len + t) = acc;
        }
    tape.record(out, [x, w, bias, out, cin, len, cout, ksz, dilation] {
        for (std::size_t oc = 0; oc < cout; ++oc)
            for (std::size_t t = 0; t < len; ++t) {
                const double go = out->grad()[oc * len + t];
                if (go == 0.0) continue;
                bias->grad()[oc] += go;
                for (std::size_t ic = 0; ic < cin; ++ic)
                    for (std::size_t k = 0; k < ksz; ++k) {
                        const std::ptrdiff_t src =
                            static_cast<std::ptrdiff_t>(t) -
                            static_cast<std::ptrdiff_t>((ksz - 1 - k) * dilation);
                        if (src < 0) continue;
                        const std::size_t si = static_cast<std::size_t>(src);
                        w->grad()[(oc * cin + ic) * ksz + k] += go * x->at(ic * len + si);
                        x->grad()[ic * len + si] += go * w->at((oc * cin + ic) * ksz + k);
                    }
            }
    });
    return out;
}

/// Weight normalization: per output channel oc, w[oc] = g[oc] · v[oc]/‖v[oc]‖₂
/// where the norm runs over the channel's full kernel slice. Gradient flows
/// to both v and g.
inline Value weight_norm(Tape& tape, const Value& v, const Value& g) {
    if (v->ndim() != 3 || g->numel() != v->shape()[0])
        throw std::invalid_argument("weight_norm: expects v [c_out×c_in×K], g [c_out]");
    const std::size_t cout = v->shape()[0];
    const std::size_t slice = v->shape()[1] * v->shape()[2];
    std::vector<double> norms(cout);
    for (std::size_t oc = 0; oc < cout; ++oc) {
        double s = 0.0;
        for (std::size_t i = 0; i < slice; ++i) {
            const double vv = v->at(oc * slice + i);
            s += vv * vv;
        }
        norms[oc] = std::sqrt(s);
        if (norms[oc] == 0.0)
            throw std::invalid_argument("weight_norm: zero-norm kernel slice in channel " +
                                        std::to_string(oc));
    }
    Value out = make_value(v->shape());
    for (std::size_t oc = 0; oc < cout; ++oc)
        for (std::size_t i = 0; i < slice; ++i)
            out->at(oc * slice + i) = g->at(oc) * v->at(oc * slice + i) / norms[oc];
    tape.record(out, [v, g, out, cout, slice, norms] {
        for (std::size_t oc = 0; oc < cout; ++oc) {
            const double nrm = norms[oc];
            double vdotgo = 0.0;
            for (std::size_t i = 0; i < slice; ++i)
                vdotgo += v->at(oc * slice + i) * out->grad()[oc * slice + i];
            g->grad()[oc] += vdotgo / nrm;
            const double gn = g->at(oc) / nrm;
            const double coef = g->at(oc) * vdotgo / (nrm * nrm * nrm);
            for (std::size_t i = 0; i < slice; ++i)
                v->grad()[oc * slice + i] +=
                    gn * out->grad()[oc * slice + i] - coef * v->at(oc * slice + i);
        }
    });
    return out;
}

// ---------------------------------------------------------------------
// Gradient checking
// ---------------------------------------------------------------------

struct GradCheckReport {
    std::vector<double> relative_errors;  // one per coordinate of x
    double max_relative_error = 0.0;
    std::vector<std::size_t> failed_coordinates;
    bool passed(double tol) const { return max_relative_error <= tol; }
};

/// Compares the tape gradient of a scalar-valued function against central
/// finite differences at step eps, coordinate by coordinate.
inline GradCheckReport grad_check(const std::function<Value(Tape&, const Value&)>& f,
                                  const Value& x, double eps, double tol) {
    Tape tape;
    Value x0 = make_value(x->shape(), x->data());
    Value loss = f(tape, x0);
    tape.backward(loss);

    GradCheckReport report;
    report.relative_errors.resize(x->numel());
    for (std::size_t i = 0; i < x->numel(); ++i) {
        Value xp = make_value(x->shape(), x->data());
        Value xm = make_value(x->shape(), x->data());
        xp->at(i) += eps;
        xm->at(i) -= eps;
        Tape tp, tm;
        const double fp = f(tp, xp)->at(0);
        const double fm = f(tm, xm)->at(0);
        const double numeric = (fp - fm) / (2.0 * eps);
        const double analytic = x0->grad()[i];
        const double denom = std::max(std::abs(numeric) + std::abs(analytic), 1e-8);
        const double rel = std::abs(numeric - analytic) / denom;
        report.relative_errors[i] = rel;
        report.max_relative_error = std::max(report.max_relative_error, rel);
        if (rel > tol) report.failed_coordinates.push_back(i);
    }
    return report;
}

}  // namespace shdptcn
