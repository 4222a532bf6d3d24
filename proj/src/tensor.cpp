#include "tagasc/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <string>
#include <unordered_set>

namespace tagasc {

namespace {

thread_local bool g_grad_enabled = true;

std::string shape_str(const std::vector<std::size_t>& s) {
    std::ostringstream os;
    os << "(";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) os << ", ";
        os << s[i];
    }
    os << ")";
    return os.str();
}

// Attaches graph metadata to `out` when recording is on and some input
// carries gradient.
TensorPtr record(TensorPtr out, std::vector<TensorPtr> ins, std::function<void(Tensor&)> bw) {
    bool need = false;
    if (g_grad_enabled) {
        for (const auto& t : ins) {
            if (t && t->requires_grad) {
                need = true;
                break;
            }
        }
    }
    if (need) {
        out->requires_grad = true;
        out->inputs = std::move(ins);
        out->backward_fn = std::move(bw);
    }
    return out;
}

}  // namespace

namespace debug {
bool corrupt_leaky_relu_backward = false;
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }

std::size_t shape_product(const std::vector<std::size_t>& shape) {
    std::size_t p = 1;
    for (std::size_t d : shape) p *= d;
    return p;
}

TensorPtr Tensor::create(std::vector<std::size_t> shape, std::vector<double> data,
                         bool requires_grad) {
    for (std::size_t d : shape) {
        if (d == 0) throw DimensionError("Tensor: zero dimension in shape " + shape_str(shape));
    }
    if (shape_product(shape) != data.size()) {
        throw DimensionError("Tensor: shape " + shape_str(shape) + " does not match data length " +
                             std::to_string(data.size()));
    }
    auto t = std::make_shared<Tensor>();
    t->shape = std::move(shape);
    t->data = std::move(data);
    t->requires_grad = requires_grad;
    return t;
}

TensorPtr Tensor::zeros(std::vector<std::size_t> shape, bool requires_grad) {
    const std::size_t n = shape_product(shape);
    return create(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
}

TensorPtr Tensor::full(std::vector<std::size_t> shape, double value, bool requires_grad) {
    const std::size_t n = shape_product(shape);
    return create(std::move(shape), std::vector<double>(n, value), requires_grad);
}

TensorPtr Tensor::scalar(double v, bool requires_grad) {
    return create({}, {v}, requires_grad);
}

TensorPtr Tensor::vec(std::vector<double> v, bool requires_grad) {
    const std::size_t n = v.size();
    return create({n}, std::move(v), requires_grad);
}

std::size_t Tensor::dim(std::size_t i) const {
    if (i >= shape.size()) throw DimensionError("Tensor::dim: axis out of range");
    return shape[i];
}

double Tensor::item() const {
    if (data.size() != 1) throw DimensionError("Tensor::item: tensor is not scalar");
    return data[0];
}

void Tensor::accumulate_grad(const std::vector<double>& g) {
    if (g.size() != data.size()) throw DimensionError("Tensor: gradient size mismatch");
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
    for (std::size_t i = 0; i < g.size(); ++i) grad[i] += g[i];
}

void Tensor::zero_grad() {
    if (grad.empty()) return;
    std::fill(grad.begin(), grad.end(), 0.0);
}

void Tensor::backward(double seed) {
    if (data.size() != 1) throw DimensionError("Tensor::backward: output must be scalar");
    if (!requires_grad) throw ConfigError("Tensor::backward: node does not require grad");

    // Iterative post-order DFS; recursion depth would scale with graph size.
    std::vector<Tensor*> topo;
    std::unordered_set<Tensor*> visited;
    std::vector<std::pair<Tensor*, std::size_t>> stack;
    stack.emplace_back(this, 0);
    visited.insert(this);
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->inputs.size()) {
            Tensor* in = node->inputs[next].get();
            ++next;
            if (in->requires_grad && visited.insert(in).second) stack.emplace_back(in, 0);
        } else {
            topo.push_back(node);
            stack.pop_back();
        }
    }

    accumulate_grad({seed});
    for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
        Tensor* node = *it;
        if (node->backward_fn) node->backward_fn(*node);
    }
}

// ---------------------------------------------------------------------------
// ops

TensorPtr conv1d(const TensorPtr& x, const TensorPtr& weight, const TensorPtr& bias,
                 std::size_t stride, Padding padding) {
    if (x->ndim() != 2) throw DimensionError("conv1d: input must be [T, C_in]");
    if (weight->ndim() != 3) throw DimensionError("conv1d: weight must be [L, C_in, C_out]");
    const std::size_t T = x->dim(0), Cin = x->dim(1);
    const std::size_t L = weight->dim(0), Cout = weight->dim(2);
    if (weight->dim(1) != Cin) {
        throw DimensionError("conv1d: input channels " + std::to_string(Cin) +
                             " != weight channels " + std::to_string(weight->dim(1)));
    }
    if (bias->ndim() != 1 || bias->dim(0) != Cout) {
        throw DimensionError("conv1d: bias must be [C_out]");
    }
    if (stride == 0) throw ConfigError("conv1d: stride must be >= 1");

    std::size_t T_out;
    std::ptrdiff_t pad_left = 0;
    if (padding == Padding::valid) {
        if (T < L) {
            throw DimensionError("conv1d: input length " + std::to_string(T) +
                                 " shorter than filter length " + std::to_string(L));
        }
        T_out = (T - L) / stride + 1;
    } else {
        if (stride != 1) throw ConfigError("conv1d: same padding requires stride 1");
        pad_left = static_cast<std::ptrdiff_t>((L - 1) / 2);
        T_out = T;
    }

    std::vector<double> out(T_out * Cout);
    const double* xd = x->data.data();
    const double* wd = weight->data.data();
    const double* bd = bias->data.data();
    for (std::size_t to = 0; to < T_out; ++to) {
        double* orow = out.data() + to * Cout;
        for (std::size_t co = 0; co < Cout; ++co) orow[co] = bd[co];
        const std::ptrdiff_t base = static_cast<std::ptrdiff_t>(to * stride) - pad_left;
        for (std::size_t l = 0; l < L; ++l) {
            const std::ptrdiff_t ti = base + static_cast<std::ptrdiff_t>(l);
            if (ti < 0 || ti >= static_cast<std::ptrdiff_t>(T)) continue;
            const double* xrow = xd + static_cast<std::size_t>(ti) * Cin;
            const double* wrow = wd + l * Cin * Cout;
            for (std::size_t ci = 0; ci < Cin; ++ci) {
                const double xv = xrow[ci];
                const double* wp = wrow + ci * Cout;
                for (std::size_t co = 0; co < Cout; ++co) orow[co] += xv * wp[co];
            }
        }
    }

    auto result = Tensor::create({T_out, Cout}, std::move(out));
    return record(result, {x, weight, bias},
                  [x, weight, bias, T, Cin, L, Cout, T_out, stride, pad_left](Tensor& o) {
        const double* g = o.grad.data();
        if (x->requires_grad) {
            std::vector<double> dx(x->size(), 0.0);
            for (std::size_t to = 0; to < T_out; ++to) {
                const double* grow = g + to * Cout;
                const std::ptrdiff_t base = static_cast<std::ptrdiff_t>(to * stride) - pad_left;
                for (std::size_t l = 0; l < L; ++l) {
                    const std::ptrdiff_t ti = base + static_cast<std::ptrdiff_t>(l);
                    if (ti < 0 || ti >= static_cast<std::ptrdiff_t>(T)) continue;
                    double* dxrow = dx.data() + static_cast<std::size_t>(ti) * Cin;
                    const double* wrow = weight->data.data() + l * Cin * Cout;
                    for (std::size_t ci = 0; ci < Cin; ++ci) {
                        const double* wp = wrow + ci * Cout;
                        double acc = 0.0;
                        for (std::size_t co = 0; co < Cout; ++co) acc += grow[co] * wp[co];
                        dxrow[ci] += acc;
                    }
                }
            }
            x->accumulate_grad(dx);
        }
        if (weight->requires_grad) {
            std::vector<double> dw(weight->size(), 0.0);
            for (std::size_t to = 0; to < T_out; ++to) {
                const double* grow = g + to * Cout;
                const std::ptrdiff_t base = static_cast<std::ptrdiff_t>(to * stride) - pad_left;
                for (std::size_t l = 0; l < L; ++l) {
                    const std::ptrdiff_t ti = base + static_cast<std::ptrdiff_t>(l);
                    if (ti < 0 || ti >= static_cast<std::ptrdiff_t>(T)) continue;
                    const double* xrow = x->data.data() + static_cast<std::size_t>(ti) * Cin;
                    double* dwrow = dw.data() + l * Cin * Cout;
                    for (std::size_t ci = 0; ci < Cin; ++ci) {
                        const double xv = xrow[ci];
                        double* dwp = dwrow + ci * Cout;
                        for (std::size_t co = 0; co < Cout; ++co) dwp[co] += xv * grow[co];
                    }
                }
            }
            weight->accumulate_grad(dw);
        }
        if (bias->requires_grad) {
            std::vector<double> db(Cout, 0.0);
            for (std::size_t to = 0; to < T_out; ++to) {
                const double* grow = g + to * Cout;
                for (std::size_t co = 0; co < Cout; ++co) db[co] += grow[co];
            }
            bias->accumulate_grad(db);
        }
    });
}

TensorPtr leaky_relu(const TensorPtr& x, double slope) {
    if (!(slope > 0.0 && slope < 1.0)) throw ConfigError("leaky_relu: slope must be in (0, 1)");
    std::vector<double> out(x->size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double v = x->data[i];
        out[i] = v > 0.0 ? v : slope * v;
    }
    auto result = Tensor::create(x->shape, std::move(out));
    return record(result, {x}, [x, slope](Tensor& o) {
        if (!x->requires_grad) return;
        std::vector<double> dx(x->size());
        const double s = debug::corrupt_leaky_relu_backward ? slope * 0.5 : slope;
        for (std::size_t i = 0; i < dx.size(); ++i) {
            dx[i] = o.grad[i] * (x->data[i] > 0.0 ? 1.0 : s);
        }
        x->accumulate_grad(dx);
    });
}

TensorPtr batch_norm(const TensorPtr& x, const TensorPtr& gamma, const TensorPtr& beta,
                     BatchNormState& state, BnMode mode, double eps, double momentum) {
    if (x->ndim() != 2) throw DimensionError("batch_norm: input must be [T, C]");
    const std::size_t T = x->dim(0), C = x->dim(1);
    if (gamma->ndim() != 1 || gamma->dim(0) != C || beta->ndim() != 1 || beta->dim(0) != C) {
        throw DimensionError("batch_norm: gamma/beta must be [C]");
    }
    if (state.running_mean.size() != C || state.running_var.size() != C) {
        throw DimensionError("batch_norm: running stats must be [C]");
    }
    if (!(eps > 0.0)) throw ConfigError("batch_norm: eps must be positive");
    if (mode == BnMode::train && T < 2) {
        throw DataError("batch_norm: degenerate batch, need T >= 2 in train mode (got T=" +
                        std::to_string(T) + ")");
    }

    std::vector<double> mean(C, 0.0), var(C, 0.0);
    if (mode == BnMode::train) {
        for (std::size_t t = 0; t < T; ++t) {
            const double* row = x->data.data() + t * C;
            for (std::size_t c = 0; c < C; ++c) mean[c] += row[c];
        }
        for (std::size_t c = 0; c < C; ++c) mean[c] /= static_cast<double>(T);
        for (std::size_t t = 0; t < T; ++t) {
            const double* row = x->data.data() + t * C;
            for (std::size_t c = 0; c < C; ++c) {
                const double d = row[c] - mean[c];
                var[c] += d * d;
            }
        }
        for (std::size_t c = 0; c < C; ++c) var[c] /= static_cast<double>(T);
        for (std::size_t c = 0; c < C; ++c) {
            state.running_mean[c] = momentum * state.running_mean[c] + (1.0 - momentum) * mean[c];
            state.running_var[c] = momentum * state.running_var[c] + (1.0 - momentum) * var[c];
        }
    } else {
        mean = state.running_mean;
        var = state.running_var;
    }

    std::vector<double> invstd(C);
    for (std::size_t c = 0; c < C; ++c) invstd[c] = 1.0 / std::sqrt(var[c] + eps);

    std::vector<double> out(x->size());
    std::vector<double> xhat(x->size());
    for (std::size_t t = 0; t < T; ++t) {
        const double* row = x->data.data() + t * C;
        double* orow = out.data() + t * C;
        double* hrow = xhat.data() + t * C;
        for (std::size_t c = 0; c < C; ++c) {
            const double h = (row[c] - mean[c]) * invstd[c];
            hrow[c] = h;
            orow[c] = h * gamma->data[c] + beta->data[c];
        }
    }

    const bool batch_stats = (mode == BnMode::train);
    auto result = Tensor::create(x->shape, std::move(out));
    return record(result, {x, gamma, beta},
                  [x, gamma, beta, T, C, invstd = std::move(invstd), xhat = std::move(xhat),
                   batch_stats](Tensor& o) {
        std::vector<double> sum_dy(C, 0.0), sum_dy_xhat(C, 0.0);
        for (std::size_t t = 0; t < T; ++t) {
            const double* grow = o.grad.data() + t * C;
            const double* hrow = xhat.data() + t * C;
            for (std::size_t c = 0; c < C; ++c) {
                sum_dy[c] += grow[c];
                sum_dy_xhat[c] += grow[c] * hrow[c];
            }
        }
        if (beta->requires_grad) beta->accumulate_grad(sum_dy);
        if (gamma->requires_grad) gamma->accumulate_grad(sum_dy_xhat);
        if (x->requires_grad) {
            std::vector<double> dx(x->size());
            const double n = static_cast<double>(T);
            for (std::size_t t = 0; t < T; ++t) {
                const double* grow = o.grad.data() + t * C;
                const double* hrow = xhat.data() + t * C;
                double* dxrow = dx.data() + t * C;
                for (std::size_t c = 0; c < C; ++c) {
                    const double k = gamma->data[c] * invstd[c];
                    if (batch_stats) {
                        dxrow[c] = (k / n) * (n * grow[c] - sum_dy[c] - hrow[c] * sum_dy_xhat[c]);
                    } else {
                        dxrow[c] = k * grow[c];  // running stats are constants
                    }
                }
            }
            x->accumulate_grad(dx);
        }
    });
}

TensorPtr max_pool1d(const TensorPtr& x, std::size_t k) {
    if (x->ndim() != 2) throw DimensionError("max_pool1d: input must be [T, C]");
    const std::size_t T = x->dim(0), C = x->dim(1);
    if (k == 0) throw ConfigError("max_pool1d: window must be >= 1");
    if (T < k) {
        throw DimensionError("max_pool1d: input length " + std::to_string(T) +
                             " shorter than window " + std::to_string(k));
    }
    const std::size_t T_out = T / k;
    std::vector<double> out(T_out * C);
    std::vector<std::size_t> argmax(T_out * C);
    for (std::size_t to = 0; to < T_out; ++to) {
        for (std::size_t c = 0; c < C; ++c) {
            std::size_t best = to * k;
            double bv = x->data[best * C + c];
            for (std::size_t j = 1; j < k; ++j) {
                const std::size_t t = to * k + j;
                const double v = x->data[t * C + c];
                if (v > bv) {  // ties keep the first index
                    bv = v;
                    best = t;
                }
            }
            out[to * C + c] = bv;
            argmax[to * C + c] = best;
        }
    }
    auto result = Tensor::create({T_out, C}, std::move(out));
    return record(result, {x}, [x, C, T_out, argmax = std::move(argmax)](Tensor& o) {
        if (!x->requires_grad) return;
        std::vector<double> dx(x->size(), 0.0);
        for (std::size_t i = 0; i < T_out * C; ++i) {
            dx[argmax[i] * C + i % C] += o.grad[i];
        }
        x->accumulate_grad(dx);
    });
}

TensorPtr global_avg_pool(const TensorPtr& x) {
    if (x->ndim() != 2) throw DimensionError("global_avg_pool: input must be [T, C]");
    const std::size_t T = x->dim(0), C = x->dim(1);
    std::vector<double> out(C, 0.0);
    for (std::size_t t = 0; t < T; ++t) {
        const double* row = x->data.data() + t * C;
        for (std::size_t c = 0; c < C; ++c) out[c] += row[c];
    }
    for (std::size_t c = 0; c < C; ++c) out[c] /= static_cast<double>(T);
    auto result = Tensor::create({C}, std::move(out));
    return record(result, {x}, [x, T, C](Tensor& o) {
        if (!x->requires_grad) return;
        std::vector<double> dx(x->size());
        const double inv = 1.0 / static_cast<double>(T);
        for (std::size_t t = 0; t < T; ++t) {
            for (std::size_t c = 0; c < C; ++c) dx[t * C + c] = o.grad[c] * inv;
        }
        x->accumulate_grad(dx);
    });
}

TensorPtr global_max_pool(const TensorPtr& x) {
    if (x->ndim() != 2) throw DimensionError("global_max_pool: input must be [T, C]");
    const std::size_t T = x->dim(0), C = x->dim(1);
    std::vector<double> out(C);
    std::vector<std::size_t> argmax(C, 0);
    for (std::size_t c = 0; c < C; ++c) {
        double bv = x->data[c];
        std::size_t bt = 0;
        for (std::size_t t = 1; t < T; ++t) {
            const double v = x->data[t * C + c];
            if (v > bv) {
                bv = v;
                bt = t;
            }
        }
        out[c] = bv;
        argmax[c] = bt;
    }
    auto result = Tensor::create({C}, std::move(out));
    return record(result, {x}, [x, C, argmax = std::move(argmax)](Tensor& o) {
        if (!x->requires_grad) return;
        std::vector<double> dx(x->size(), 0.0);
        for (std::size_t c = 0; c < C; ++c) dx[argmax[c] * C + c] += o.grad[c];
        x->accumulate_grad(dx);
    });
}

TensorPtr dense(const TensorPtr& x, const TensorPtr& weight, const TensorPtr& bias) {
    if (x->ndim() != 1) throw DimensionError("dense: input must be [D_in]");
    if (weight->ndim() != 2) throw DimensionError("dense: weight must be [D_in, D_out]");
    const std::size_t Din = x->dim(0), Dout = weight->dim(1);
    if (weight->dim(0) != Din) {
        throw DimensionError("dense: input dim " + std::to_string(Din) + " != weight rows " +
                             std::to_string(weight->dim(0)));
    }
    if (bias->ndim() != 1 || bias->dim(0) != Dout) throw DimensionError("dense: bias must be [D_out]");

    std::vector<double> out(bias->data);
    for (std::size_t i = 0; i < Din; ++i) {
        const double xv = x->data[i];
        const double* wrow = weight->data.data() + i * Dout;
        for (std::size_t o = 0; o < Dout; ++o) out[o] += xv * wrow[o];
    }
    auto result = Tensor::create({Dout}, std::move(out));
    return record(result, {x, weight, bias}, [x, weight, bias, Din, Dout](Tensor& o) {
        if (x->requires_grad) {
            std::vector<double> dx(Din, 0.0);
            for (std::size_t i = 0; i < Din; ++i) {
                const double* wrow = weight->data.data() + i * Dout;
                double acc = 0.0;
                for (std::size_t j = 0; j < Dout; ++j) acc += o.grad[j] * wrow[j];
                dx[i] = acc;
            }
            x->accumulate_grad(dx);
        }
        if (weight->requires_grad) {
            std::vector<double> dw(Din * Dout);
            for (std::size_t i = 0; i < Din; ++i) {
                const double xv = x->data[i];
                double* dwrow = dw.data() + i * Dout;
                for (std::size_t j = 0; j < Dout; ++j) dwrow[j] = xv * o.grad[j];
            }
            weight->accumulate_grad(dw);
        }
        if (bias->requires_grad) bias->accumulate_grad(o.grad);
    });
}

TensorPtr softmax_segments(const TensorPtr& x, std::size_t heads) {
    if (x->ndim() != 1) throw DimensionError("softmax_segments: input must be 1-D");
    const std::size_t f = x->dim(0);
    if (heads == 0 || f % heads != 0) {
        throw ConfigError("softmax_segments: heads " + std::to_string(heads) +
                          " must divide length " + std::to_string(f));
    }
    const std::size_t seg = f / heads;
    std::vector<double> out(f);
    for (std::size_t h = 0; h < heads; ++h) {
        const double* xs = x->data.data() + h * seg;
        double* os = out.data() + h * seg;
        double mx = xs[0];
        for (std::size_t i = 1; i < seg; ++i) mx = std::max(mx, xs[i]);
        double sum = 0.0;
        for (std::size_t i = 0; i < seg; ++i) {
            os[i] = std::exp(xs[i] - mx);
            sum += os[i];
        }
        for (std::size_t i = 0; i < seg; ++i) os[i] /= sum;
    }
    auto result = Tensor::create({f}, std::move(out));
    return record(result, {x}, [x, heads, seg](Tensor& o) {
        if (!x->requires_grad) return;
        std::vector<double> dx(x->size());
        for (std::size_t h = 0; h < heads; ++h) {
            const double* s = o.data.data() + h * seg;
            const double* g = o.grad.data() + h * seg;
            double dot = 0.0;
            for (std::size_t i = 0; i < seg; ++i) dot += g[i] * s[i];
            double* d = dx.data() + h * seg;
            for (std::size_t i = 0; i < seg; ++i) d[i] = s[i] * (g[i] - dot);
        }
        x->accumulate_grad(dx);
    });
}

namespace {

TensorPtr cross_entropy_impl(const TensorPtr& logits, std::vector<double> target) {
    const std::size_t K = logits->dim(0);
    double mx = logits->data[0];
    for (std::size_t i = 1; i < K; ++i) mx = std::max(mx, logits->data[i]);
    double sum = 0.0;
    for (std::size_t i = 0; i < K; ++i) sum += std::exp(logits->data[i] - mx);
    const double lse = mx + std::log(sum);
    double loss = 0.0;
    std::vector<double> softmax(K);
    for (std::size_t i = 0; i < K; ++i) {
        softmax[i] = std::exp(logits->data[i] - lse);
        loss += target[i] * (lse - logits->data[i]);
    }
    auto result = Tensor::scalar(loss);
    return record(result, {logits},
                  [logits, K, target = std::move(target), softmax = std::move(softmax)](Tensor& o) {
        if (!logits->requires_grad) return;
        std::vector<double> dl(K);
        for (std::size_t i = 0; i < K; ++i) dl[i] = (softmax[i] - target[i]) * o.grad[0];
        logits->accumulate_grad(dl);
    });
}

}  // namespace

TensorPtr softmax_cross_entropy(const TensorPtr& logits, std::size_t target_index) {
    if (logits->ndim() != 1) throw DimensionError("softmax_cross_entropy: logits must be 1-D");
    const std::size_t K = logits->dim(0);
    if (K < 2) throw DimensionError("softmax_cross_entropy: need at least 2 classes");
    if (target_index >= K) {
        throw DimensionError("softmax_cross_entropy: target index " + std::to_string(target_index) +
                             " out of range for " + std::to_string(K) + " classes");
    }
    std::vector<double> t(K, 0.0);
    t[target_index] = 1.0;
    return cross_entropy_impl(logits, std::move(t));
}

TensorPtr softmax_cross_entropy(const TensorPtr& logits, const std::vector<double>& soft_target) {
    if (logits->ndim() != 1) throw DimensionError("softmax_cross_entropy: logits must be 1-D");
    const std::size_t K = logits->dim(0);
    if (K < 2) throw DimensionError("softmax_cross_entropy: need at least 2 classes");
    if (soft_target.size() != K) {
        throw DimensionError("softmax_cross_entropy: target length " +
                             std::to_string(soft_target.size()) + " != logits length " +
                             std::to_string(K));
    }
    double s = 0.0;
    for (double v : soft_target) s += v;
    if (std::abs(s - 1.0) > 1e-6) {
        throw DataError("softmax_cross_entropy: soft target sums to " + std::to_string(s));
    }
    return cross_entropy_impl(logits, soft_target);
}

TensorPtr add(const TensorPtr& a, const TensorPtr& b) {
    if (a->shape != b->shape) {
        throw DimensionError("add: shape mismatch " + std::to_string(a->size()) + " vs " +
                             std::to_string(b->size()));
    }
    std::vector<double> out(a->size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a->data[i] + b->data[i];
    auto result = Tensor::create(a->shape, std::move(out));
    return record(result, {a, b}, [a, b](Tensor& o) {
        if (a->requires_grad) a->accumulate_grad(o.grad);
        if (b->requires_grad) b->accumulate_grad(o.grad);
    });
}

TensorPtr scale(const TensorPtr& x, double c) {
    std::vector<double> out(x->size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x->data[i] * c;
    auto result = Tensor::create(x->shape, std::move(out));
    return record(result, {x}, [x, c](Tensor& o) {
        if (!x->requires_grad) return;
        std::vector<double> dx(x->size());
        for (std::size_t i = 0; i < dx.size(); ++i) dx[i] = o.grad[i] * c;
        x->accumulate_grad(dx);
    });
}

TensorPtr concat1d(const std::vector<TensorPtr>& parts) {
    if (parts.empty()) throw DimensionError("concat1d: no parts");
    std::size_t n = 0;
    for (const auto& p : parts) {
        if (p->ndim() != 1) throw DimensionError("concat1d: all parts must be 1-D");
        n += p->dim(0);
    }
    std::vector<double> out;
    out.reserve(n);
    for (const auto& p : parts) out.insert(out.end(), p->data.begin(), p->data.end());
    auto result = Tensor::create({n}, std::move(out));
    return record(result, parts, [parts](Tensor& o) {
        std::size_t offset = 0;
        for (const auto& p : parts) {
            if (p->requires_grad) {
                std::vector<double> dp(o.grad.begin() + static_cast<std::ptrdiff_t>(offset),
                                       o.grad.begin() + static_cast<std::ptrdiff_t>(offset + p->size()));
                p->accumulate_grad(dp);
            }
            offset += p->size();
        }
    });
}

TensorPtr rowwise_mul(const TensorPtr& m, const TensorPtr& a) {
    if (m->ndim() != 2) throw DimensionError("rowwise_mul: m must be [T, F]");
    if (a->ndim() != 1) throw DimensionError("rowwise_mul: a must be [F]");
    const std::size_t T = m->dim(0), F = m->dim(1);
    if (a->dim(0) != F) {
        throw DimensionError("rowwise_mul: vector length " + std::to_string(a->dim(0)) +
                             " != column count " + std::to_string(F));
    }
    std::vector<double> out(m->size());
    for (std::size_t t = 0; t < T; ++t) {
        const double* mrow = m->data.data() + t * F;
        double* orow = out.data() + t * F;
        for (std::size_t i = 0; i < F; ++i) orow[i] = mrow[i] * a->data[i];
    }
    auto result = Tensor::create(m->shape, std::move(out));
    return record(result, {m, a}, [m, a, T, F](Tensor& o) {
        if (m->requires_grad) {
            std::vector<double> dm(m->size());
            for (std::size_t t = 0; t < T; ++t) {
                const double* grow = o.grad.data() + t * F;
                double* drow = dm.data() + t * F;
                for (std::size_t i = 0; i < F; ++i) drow[i] = grow[i] * a->data[i];
            }
            m->accumulate_grad(dm);
        }
        if (a->requires_grad) {
            std::vector<double> da(F, 0.0);
            for (std::size_t t = 0; t < T; ++t) {
                const double* grow = o.grad.data() + t * F;
                const double* mrow = m->data.data() + t * F;
                for (std::size_t i = 0; i < F; ++i) da[i] += grow[i] * mrow[i];
            }
            a->accumulate_grad(da);
        }
    });
}

double grad_check(const std::function<TensorPtr(const TensorPtr&)>& f, const TensorPtr& x,
                  double eps) {
    if (!(eps >= 1e-7 && eps <= 1e-3)) throw ConfigError("grad_check: eps must be in [1e-7, 1e-3]");

    auto probe = Tensor::create(x->shape, x->data, true);
    auto y = f(probe);
    if (y->size() != 1) throw DimensionError("grad_check: f must be scalar-valued");
    y->backward();
    std::vector<double> analytic = probe->grad.empty() ? std::vector<double>(probe->size(), 0.0)
                                                       : probe->grad;

    double worst = 0.0;
    {
        NoGradGuard ng;
        auto eval = [&](double& slot, double v) {
            const double saved = slot;
            slot = v;
            const double r = f(probe)->item();
            slot = saved;
            return r;
        };
        for (std::size_t i = 0; i < probe->size(); ++i) {
            const double v = probe->data[i];
            const double fp = eval(probe->data[i], v + eps);
            const double fm = eval(probe->data[i], v - eps);
            const double numeric = (fp - fm) / (2.0 * eps);
            const double rel = std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(analytic[i]));
            worst = std::max(worst, rel);
        }
    }
    return worst;
}

}  // namespace tagasc
