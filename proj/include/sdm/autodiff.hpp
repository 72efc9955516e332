#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <string>
#include <vector>

#include "sdm/common.hpp"

namespace sdm::nn {

// ---------------------------------------------------------------------------
// Tensor + tape. Reverse-mode autodiff at layer granularity: every operation
// appends one backward closure to the tape; running them in reverse creation
// order is a valid topological order of the graph. 64-bit values throughout.
// ---------------------------------------------------------------------------

struct Tensor {
    std::vector<std::size_t> shape;
    std::vector<double> value;
    std::vector<double> grad;  // sized like value iff requires_grad
    bool requires_grad = false;

    std::size_t size() const { return value.size(); }

    void zero_grad() { std::fill(grad.begin(), grad.end(), 0.0); }
};

using TensorPtr = std::shared_ptr<Tensor>;

inline std::size_t shape_size(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    return n;
}

inline std::string shape_str(const std::vector<std::size_t>& shape) {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += ",";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

inline TensorPtr make_tensor(std::vector<std::size_t> shape, bool requires_grad) {
    auto t = std::make_shared<Tensor>();
    t->shape = std::move(shape);
    t->value.assign(shape_size(t->shape), 0.0);
    t->requires_grad = requires_grad;
    if (requires_grad) t->grad.assign(t->value.size(), 0.0);
    return t;
}

inline TensorPtr make_input(std::vector<std::size_t> shape, std::vector<double> data) {
    auto t = std::make_shared<Tensor>();
    t->shape = std::move(shape);
    if (data.size() != shape_size(t->shape)) {
        throw DataError("tensor data length " + std::to_string(data.size()) +
                        " does not match shape " + shape_str(t->shape));
    }
    t->value = std::move(data);
    return t;
}

class Tape {
public:
    void record(std::function<void()> backward_op) {
        ops_.push_back(std::move(backward_op));
    }

    // Seeds the root gradient with 1 and propagates backwards. The root must
    // be a scalar. One backward pass per tape.
    void backward(const TensorPtr& root) {
        if (root->size() != 1) {
            throw DataError("backward root must be scalar, got " + shape_str(root->shape));
        }
        if (!root->requires_grad) {
            throw DataError("backward root does not require gradients");
        }
        root->grad[0] = 1.0;
        for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) (*it)();
        ops_.clear();
    }

    void clear() { ops_.clear(); }
    std::size_t size() const { return ops_.size(); }

private:
    std::vector<std::function<void()>> ops_;
};

namespace detail {

inline TensorPtr result_like(std::vector<std::size_t> shape,
                             std::initializer_list<const TensorPtr*> inputs) {
    bool needs_grad = false;
    for (const TensorPtr* t : inputs) needs_grad = needs_grad || (*t)->requires_grad;
    return make_tensor(std::move(shape), needs_grad);
}

inline void check_same_shape(const TensorPtr& a, const TensorPtr& b, const char* op) {
    if (a->shape != b->shape) {
        throw DataError(std::string(op) + ": shape mismatch " + shape_str(a->shape) + " vs " +
                        shape_str(b->shape));
    }
}

inline double stable_sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

inline double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise and structural primitives
// ---------------------------------------------------------------------------

inline TensorPtr add(Tape& tape, const TensorPtr& a, const TensorPtr& b) {
    detail::check_same_shape(a, b, "add");
    TensorPtr out = detail::result_like(a->shape, {&a, &b});
    for (std::size_t i = 0; i < out->size(); ++i) out->value[i] = a->value[i] + b->value[i];
    if (out->requires_grad) {
        tape.record([a, b, out] {
            for (std::size_t i = 0; i < out->size(); ++i) {
                if (a->requires_grad) a->grad[i] += out->grad[i];
                if (b->requires_grad) b->grad[i] += out->grad[i];
            }
        });
    }
    return out;
}

inline TensorPtr relu(Tape& tape, const TensorPtr& x) {
    TensorPtr out = detail::result_like(x->shape, {&x});
    for (std::size_t i = 0; i < out->size(); ++i) out->value[i] = std::max(0.0, x->value[i]);
    if (out->requires_grad) {
        tape.record([x, out] {
            for (std::size_t i = 0; i < out->size(); ++i) {
                if (x->value[i] > 0.0) x->grad[i] += out->grad[i];
            }
        });
    }
    return out;
}

inline TensorPtr sigmoid(Tape& tape, const TensorPtr& x) {
    TensorPtr out = detail::result_like(x->shape, {&x});
    for (std::size_t i = 0; i < out->size(); ++i) {
        out->value[i] = detail::stable_sigmoid(x->value[i]);
    }
    if (out->requires_grad) {
        tape.record([x, out] {
            for (std::size_t i = 0; i < out->size(); ++i) {
                const double s = out->value[i];
                x->grad[i] += out->grad[i] * s * (1.0 - s);
            }
        });
    }
    return out;
}

// Inverted dropout with an explicit 0/1 mask: out = x * mask / keep_prob.
// The random-mask variant below draws the mask; this core is deterministic
// and is what the gradient checks exercise.
inline TensorPtr dropout_masked(Tape& tape, const TensorPtr& x,
                                const std::vector<double>& mask, double keep_prob) {
    if (mask.size() != x->size()) throw DataError("dropout: mask size mismatch");
    if (!(keep_prob > 0.0 && keep_prob <= 1.0)) throw DataError("dropout: bad keep_prob");
    TensorPtr out = detail::result_like(x->shape, {&x});
    const double inv = 1.0 / keep_prob;
    for (std::size_t i = 0; i < out->size(); ++i) out->value[i] = x->value[i] * mask[i] * inv;
    if (out->requires_grad) {
        tape.record([x, out, mask, inv] {
            for (std::size_t i = 0; i < out->size(); ++i) {
                x->grad[i] += out->grad[i] * mask[i] * inv;
            }
        });
    }
    return out;
}

// Training-time dropout; identity in eval mode. Consumes x->size() draws
// when active so the stream stays aligned across configurations.
inline TensorPtr dropout(Tape& tape, const TensorPtr& x, double p, Rng& rng, bool train) {
    if (!train || p <= 0.0) return x;
    if (!(p < 1.0)) throw DataError("dropout probability must be < 1");
    std::vector<double> mask(x->size());
    for (double& m : mask) m = rng.bernoulli(p) ? 0.0 : 1.0;
    return dropout_masked(tape, x, mask, 1.0 - p);
}

// [B, F1] ++ [B, F2] -> [B, F1 + F2]
inline TensorPtr concat_features(Tape& tape, const TensorPtr& a, const TensorPtr& b) {
    if (a->shape.size() != 2 || b->shape.size() != 2 || a->shape[0] != b->shape[0]) {
        throw DataError("concat: expected [B,F] inputs with equal batch, got " +
                        shape_str(a->shape) + " and " + shape_str(b->shape));
    }
    const std::size_t batch = a->shape[0], fa = a->shape[1], fb = b->shape[1];
    TensorPtr out = detail::result_like({batch, fa + fb}, {&a, &b});
    for (std::size_t r = 0; r < batch; ++r) {
        std::copy(a->value.begin() + r * fa, a->value.begin() + (r + 1) * fa,
                  out->value.begin() + r * (fa + fb));
        std::copy(b->value.begin() + r * fb, b->value.begin() + (r + 1) * fb,
                  out->value.begin() + r * (fa + fb) + fa);
    }
    if (out->requires_grad) {
        tape.record([a, b, out, batch, fa, fb] {
            for (std::size_t r = 0; r < batch; ++r) {
                for (std::size_t i = 0; i < fa; ++i) {
                    if (a->requires_grad) a->grad[r * fa + i] += out->grad[r * (fa + fb) + i];
                }
                for (std::size_t i = 0; i < fb; ++i) {
                    if (b->requires_grad) {
                        b->grad[r * fb + i] += out->grad[r * (fa + fb) + fa + i];
                    }
                }
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Linear algebra layers
// ---------------------------------------------------------------------------

// x [B, I] * weight^T [I, O] + bias [O] -> [B, O]
inline TensorPtr dense(Tape& tape, const TensorPtr& x, const TensorPtr& weight,
                       const TensorPtr& bias) {
    if (x->shape.size() != 2 || weight->shape.size() != 2 || bias->shape.size() != 1 ||
        x->shape[1] != weight->shape[1] || weight->shape[0] != bias->shape[0]) {
        throw DataError("dense: incompatible shapes x" + shape_str(x->shape) + " w" +
                        shape_str(weight->shape) + " b" + shape_str(bias->shape));
    }
    const std::size_t batch = x->shape[0], in = x->shape[1], out_dim = weight->shape[0];
    TensorPtr out = detail::result_like({batch, out_dim}, {&x, &weight, &bias});
    for (std::size_t r = 0; r < batch; ++r) {
        const double* xr = x->value.data() + r * in;
        for (std::size_t o = 0; o < out_dim; ++o) {
            const double* wo = weight->value.data() + o * in;
            double acc = bias->value[o];
            for (std::size_t i = 0; i < in; ++i) acc += xr[i] * wo[i];
            out->value[r * out_dim + o] = acc;
        }
    }
    if (out->requires_grad) {
        tape.record([x, weight, bias, out, batch, in, out_dim] {
            for (std::size_t r = 0; r < batch; ++r) {
                const double* xr = x->value.data() + r * in;
                const double* gr = out->grad.data() + r * out_dim;
                for (std::size_t o = 0; o < out_dim; ++o) {
                    const double g = gr[o];
                    if (g == 0.0) continue;
                    if (bias->requires_grad) bias->grad[o] += g;
                    const double* wo = weight->value.data() + o * in;
                    double* dwo = weight->requires_grad ? weight->grad.data() + o * in : nullptr;
                    double* dxr = x->requires_grad ? x->grad.data() + r * in : nullptr;
                    for (std::size_t i = 0; i < in; ++i) {
                        if (dwo) dwo[i] += g * xr[i];
                        if (dxr) dxr[i] += g * wo[i];
                    }
                }
            }
        });
    }
    return out;
}

// 2-D convolution, stride 1, zero padding that preserves H and W (odd kernels).
// x [B, C, H, W], kernel [O, C, K, K], bias [O] -> [B, O, H, W]
inline TensorPtr conv2d(Tape& tape, const TensorPtr& x, const TensorPtr& kernel,
                        const TensorPtr& bias) {
    if (x->shape.size() != 4 || kernel->shape.size() != 4 || bias->shape.size() != 1 ||
        kernel->shape[1] != x->shape[1] || kernel->shape[0] != bias->shape[0] ||
        kernel->shape[2] != kernel->shape[3] || kernel->shape[2] % 2 == 0) {
        throw DataError("conv2d: incompatible shapes x" + shape_str(x->shape) + " k" +
                        shape_str(kernel->shape) + " b" + shape_str(bias->shape));
    }
    const std::size_t batch = x->shape[0], chans = x->shape[1], h = x->shape[2], w = x->shape[3];
    const std::size_t out_c = kernel->shape[0], k = kernel->shape[2];
    const long pad = static_cast<long>(k / 2);

    TensorPtr out = detail::result_like({batch, out_c, h, w}, {&x, &kernel, &bias});
    for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t o = 0; o < out_c; ++o) {
            double* yplane = out->value.data() + ((b * out_c + o) * h) * w;
            for (std::size_t i = 0; i < h * w; ++i) yplane[i] = bias->value[o];
            for (std::size_t c = 0; c < chans; ++c) {
                const double* xplane = x->value.data() + ((b * chans + c) * h) * w;
                const double* kplane = kernel->value.data() + ((o * chans + c) * k) * k;
                for (long i = 0; i < static_cast<long>(h); ++i) {
                    for (long u = 0; u < static_cast<long>(k); ++u) {
                        const long xi = i + u - pad;
                        if (xi < 0 || xi >= static_cast<long>(h)) continue;
                        const double* xrow = xplane + xi * static_cast<long>(w);
                        const double* krow = kplane + u * static_cast<long>(k);
                        double* yrow = yplane + i * static_cast<long>(w);
                        for (long j = 0; j < static_cast<long>(w); ++j) {
                            double acc = 0.0;
                            const long v_lo = std::max<long>(0, pad - j);
                            const long v_hi =
                                std::min<long>(k, static_cast<long>(w) + pad - j);
                            for (long v = v_lo; v < v_hi; ++v) {
                                acc += xrow[j + v - pad] * krow[v];
                            }
                            yrow[j] += acc;
                        }
                    }
                }
            }
        }
    }
    if (out->requires_grad) {
        tape.record([x, kernel, bias, out, batch, chans, h, w, out_c, k, pad] {
            for (std::size_t b = 0; b < batch; ++b) {
                for (std::size_t o = 0; o < out_c; ++o) {
                    const double* gplane = out->grad.data() + ((b * out_c + o) * h) * w;
                    if (bias->requires_grad) {
                        double acc = 0.0;
                        for (std::size_t i = 0; i < h * w; ++i) acc += gplane[i];
                        bias->grad[o] += acc;
                    }
                    for (std::size_t c = 0; c < chans; ++c) {
                        const double* xplane = x->value.data() + ((b * chans + c) * h) * w;
                        const double* kplane =
                            kernel->value.data() + ((o * chans + c) * k) * k;
                        double* dxplane =
                            x->requires_grad ? x->grad.data() + ((b * chans + c) * h) * w
                                             : nullptr;
                        double* dkplane = kernel->requires_grad
                                              ? kernel->grad.data() + ((o * chans + c) * k) * k
                                              : nullptr;
                        for (long i = 0; i < static_cast<long>(h); ++i) {
                            const double* grow = gplane + i * static_cast<long>(w);
                            for (long u = 0; u < static_cast<long>(k); ++u) {
                                const long xi = i + u - pad;
                                if (xi < 0 || xi >= static_cast<long>(h)) continue;
                                const double* xrow = xplane + xi * static_cast<long>(w);
                                double* dxrow =
                                    dxplane ? dxplane + xi * static_cast<long>(w) : nullptr;
                                const double* krow = kplane + u * static_cast<long>(k);
                                double* dkrow =
                                    dkplane ? dkplane + u * static_cast<long>(k) : nullptr;
                                for (long j = 0; j < static_cast<long>(w); ++j) {
                                    const double g = grow[j];
                                    if (g == 0.0) continue;
                                    const long v_lo = std::max<long>(0, pad - j);
                                    const long v_hi =
                                        std::min<long>(k, static_cast<long>(w) + pad - j);
                                    for (long v = v_lo; v < v_hi; ++v) {
                                        if (dkrow) dkrow[v] += g * xrow[j + v - pad];
                                        if (dxrow) dxrow[j + v - pad] += g * krow[v];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        });
    }
    return out;
}

// 2x2 max pooling with stride 2; odd trailing rows/columns are dropped.
// Ties resolve to the first maximum in scan order.
inline TensorPtr maxpool2d(Tape& tape, const TensorPtr& x) {
    if (x->shape.size() != 4 || x->shape[2] < 2 || x->shape[3] < 2) {
        throw DataError("maxpool2d: expected [B,C,H,W] with H,W >= 2, got " +
                        shape_str(x->shape));
    }
    const std::size_t batch = x->shape[0], chans = x->shape[1], h = x->shape[2], w = x->shape[3];
    const std::size_t oh = h / 2, ow = w / 2;
    TensorPtr out = detail::result_like({batch, chans, oh, ow}, {&x});
    auto argmax = std::make_shared<std::vector<std::size_t>>(out->size());
    for (std::size_t bc = 0; bc < batch * chans; ++bc) {
        const double* xplane = x->value.data() + bc * h * w;
        double* yplane = out->value.data() + bc * oh * ow;
        std::size_t* aplane = argmax->data() + bc * oh * ow;
        for (std::size_t i = 0; i < oh; ++i) {
            for (std::size_t j = 0; j < ow; ++j) {
                std::size_t best = (2 * i) * w + 2 * j;
                double best_v = xplane[best];
                const std::size_t cand[3] = {(2 * i) * w + 2 * j + 1, (2 * i + 1) * w + 2 * j,
                                             (2 * i + 1) * w + 2 * j + 1};
                for (std::size_t idx : cand) {
                    if (xplane[idx] > best_v) {
                        best_v = xplane[idx];
                        best = idx;
                    }
                }
                yplane[i * ow + j] = best_v;
                aplane[i * ow + j] = bc * h * w + best;
            }
        }
    }
    if (out->requires_grad) {
        tape.record([x, out, argmax] {
            for (std::size_t i = 0; i < out->size(); ++i) {
                x->grad[(*argmax)[i]] += out->grad[i];
            }
        });
    }
    return out;
}

// [B, C, H, W] -> [B, C], mean over the spatial extent.
inline TensorPtr global_avg_pool(Tape& tape, const TensorPtr& x) {
    if (x->shape.size() != 4) {
        throw DataError("global_avg_pool: expected [B,C,H,W], got " + shape_str(x->shape));
    }
    const std::size_t batch = x->shape[0], chans = x->shape[1];
    const std::size_t area = x->shape[2] * x->shape[3];
    TensorPtr out = detail::result_like({batch, chans}, {&x});
    for (std::size_t bc = 0; bc < batch * chans; ++bc) {
        const double* plane = x->value.data() + bc * area;
        double acc = 0.0;
        for (std::size_t i = 0; i < area; ++i) acc += plane[i];
        out->value[bc] = acc / static_cast<double>(area);
    }
    if (out->requires_grad) {
        tape.record([x, out, batch, chans, area] {
            for (std::size_t bc = 0; bc < batch * chans; ++bc) {
                const double g = out->grad[bc] / static_cast<double>(area);
                double* plane = x->grad.data() + bc * area;
                for (std::size_t i = 0; i < area; ++i) plane[i] += g;
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

inline constexpr double kLogitClamp = 30.0;

// Fused sigmoid + cross-entropy per row: L[b] = sum_s softplus(z) - y*z with
// logits saturated at +/-30. The gradient is sigmoid(z) - y, passed straight
// through the saturation guard.
inline TensorPtr sigmoid_ce_rowwise(Tape& tape, const TensorPtr& logits,
                                    const TensorPtr& targets) {
    detail::check_same_shape(logits, targets, "sigmoid_ce");
    if (logits->shape.size() != 2) {
        throw DataError("sigmoid_ce: expected [B,N] logits, got " + shape_str(logits->shape));
    }
    const std::size_t batch = logits->shape[0], n = logits->shape[1];
    for (double y : targets->value) {
        if (!(y >= 0.0 && y <= 1.0)) {
            throw DataError("sigmoid_ce: target outside [0,1]: " + format_double(y));
        }
    }
    TensorPtr out = detail::result_like({batch}, {&logits});
    for (std::size_t b = 0; b < batch; ++b) {
        double acc = 0.0;
        for (std::size_t s = 0; s < n; ++s) {
            const double z =
                std::clamp(logits->value[b * n + s], -kLogitClamp, kLogitClamp);
            acc += detail::softplus(z) - targets->value[b * n + s] * z;
        }
        out->value[b] = acc;
    }
    if (out->requires_grad) {
        tape.record([logits, targets, out, batch, n] {
            for (std::size_t b = 0; b < batch; ++b) {
                const double g = out->grad[b];
                if (g == 0.0) continue;
                for (std::size_t s = 0; s < n; ++s) {
                    const double z =
                        std::clamp(logits->value[b * n + s], -kLogitClamp, kLogitClamp);
                    logits->grad[b * n + s] +=
                        g * (detail::stable_sigmoid(z) - targets->value[b * n + s]);
                }
            }
        });
    }
    return out;
}

// mean_b(weights[b] * rows[b]); weights are constants w.r.t. differentiation.
inline TensorPtr weighted_mean(Tape& tape, const TensorPtr& rows,
                               const std::vector<double>& weights) {
    if (rows->shape.size() != 1 || rows->shape[0] != weights.size()) {
        throw DataError("weighted_mean: rows/weights length mismatch");
    }
    const std::size_t batch = rows->shape[0];
    TensorPtr out = detail::result_like({1}, {&rows});
    double acc = 0.0;
    for (std::size_t b = 0; b < batch; ++b) acc += weights[b] * rows->value[b];
    out->value[0] = acc / static_cast<double>(batch);
    if (out->requires_grad) {
        tape.record([rows, out, weights, batch] {
            const double g = out->grad[0] / static_cast<double>(batch);
            for (std::size_t b = 0; b < batch; ++b) rows->grad[b] += g * weights[b];
        });
    }
    return out;
}

// Mean over rows of the per-row species-sum cross-entropy.
inline TensorPtr cross_entropy_loss(Tape& tape, const TensorPtr& logits,
                                    const TensorPtr& targets) {
    const TensorPtr rows = sigmoid_ce_rowwise(tape, logits, targets);
    return weighted_mean(tape, rows, std::vector<double>(rows->size(), 1.0));
}

// ---------------------------------------------------------------------------
// Gradient checking
// ---------------------------------------------------------------------------

struct GradCheckReport {
    double max_rel_error = 0.0;
    std::string worst_param;
};

// Central finite differences over every element of every parameter, compared
// against the analytic gradients already stored in the parameters' grad
// buffers. `loss_value` must re-evaluate the loss from current values.
template <typename F>
GradCheckReport gradient_check(const std::vector<TensorPtr>& params, F&& loss_value,
                               double epsilon = 1e-5) {
    GradCheckReport report;
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        Tensor& p = *params[pi];
        for (std::size_t i = 0; i < p.size(); ++i) {
            const double saved = p.value[i];
            p.value[i] = saved + epsilon;
            const double up = loss_value();
            p.value[i] = saved - epsilon;
            const double down = loss_value();
            p.value[i] = saved;
            const double numeric = (up - down) / (2.0 * epsilon);
            const double analytic = p.grad[i];
            const double rel = std::abs(numeric - analytic) /
                               std::max(std::abs(numeric) + std::abs(analytic), 1e-6);
            if (rel > report.max_rel_error) {
                report.max_rel_error = rel;
                report.worst_param = "param " + std::to_string(pi) + "[" + std::to_string(i) + "]";
            }
        }
    }
    return report;
}

}  // namespace sdm::nn
