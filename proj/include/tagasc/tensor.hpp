#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <vector>

#include "tagasc/errors.hpp"

namespace tagasc {

class Tensor;
using TensorPtr = std::shared_ptr<Tensor>;

// Thread-local switch: when disabled, ops skip graph recording entirely and
// intermediate buffers free as soon as they go out of scope.
bool grad_enabled();

struct NoGradGuard {
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool prev_;
};

// Dense n-dimensional double tensor with an implicit reverse-mode tape:
// each non-leaf node keeps strong references to its inputs plus a closure
// that pushes its grad back into them. backward() replays the recorded
// graph in reverse topological order, so every requires_grad leaf ends up
// with a fully accumulated gradient exactly once.
class Tensor : public std::enable_shared_from_this<Tensor> {
public:
    std::vector<std::size_t> shape;
    std::vector<double> data;
    bool requires_grad = false;
    std::vector<double> grad;  // allocated on first accumulation

    std::vector<TensorPtr> inputs;
    std::function<void(Tensor&)> backward_fn;

    static TensorPtr create(std::vector<std::size_t> shape, std::vector<double> data,
                            bool requires_grad = false);
    static TensorPtr zeros(std::vector<std::size_t> shape, bool requires_grad = false);
    static TensorPtr full(std::vector<std::size_t> shape, double value,
                          bool requires_grad = false);
    static TensorPtr scalar(double v, bool requires_grad = false);
    static TensorPtr vec(std::vector<double> v, bool requires_grad = false);

    std::size_t size() const { return data.size(); }
    std::size_t ndim() const { return shape.size(); }
    std::size_t dim(std::size_t i) const;
    double item() const;

    void accumulate_grad(const std::vector<double>& g);
    void zero_grad();

    // Seeds this (scalar) node's grad and replays the tape. `seed` scales
    // the whole gradient; the trainer uses 1/batch for accumulation.
    void backward(double seed = 1.0);
};

std::size_t shape_product(const std::vector<std::size_t>& shape);

enum class Padding { valid, same };
enum class BnMode { train, infer };

// Running statistics owned by a batch-norm layer; updated as a forward
// side effect in train mode.
struct BatchNormState {
    std::vector<double> running_mean;
    std::vector<double> running_var;

    explicit BatchNormState(std::size_t channels = 0)
        : running_mean(channels, 0.0), running_var(channels, 1.0) {}
};

// x: [T_in, C_in], weight: [L, C_in, C_out], bias: [C_out].
// valid: T_out = floor((T_in - L)/stride) + 1; same: stride must be 1 and
// T_out = T_in (zero padding, left pad = (L-1)/2).
TensorPtr conv1d(const TensorPtr& x, const TensorPtr& weight, const TensorPtr& bias,
                 std::size_t stride, Padding padding = Padding::valid);

TensorPtr leaky_relu(const TensorPtr& x, double slope);

// Normalizes [T, C] per channel over the time axis. Train mode uses batch
// statistics and updates `state`; infer mode applies the running affine.
TensorPtr batch_norm(const TensorPtr& x, const TensorPtr& gamma, const TensorPtr& beta,
                     BatchNormState& state, BnMode mode, double eps = 1e-5,
                     double momentum = 0.9);

// Non-overlapping window max over time, remainder truncated. Backward routes
// to the first maximal index of each window.
TensorPtr max_pool1d(const TensorPtr& x, std::size_t k);

TensorPtr global_avg_pool(const TensorPtr& x);
TensorPtr global_max_pool(const TensorPtr& x);

// x: [D_in], weight: [D_in, D_out], bias: [D_out] -> x*W + b.
TensorPtr dense(const TensorPtr& x, const TensorPtr& weight, const TensorPtr& bias);

// Splits a length-f vector into h contiguous segments and applies an
// independent softmax to each.
TensorPtr softmax_segments(const TensorPtr& x, std::size_t heads);

TensorPtr softmax_cross_entropy(const TensorPtr& logits, std::size_t target_index);
TensorPtr softmax_cross_entropy(const TensorPtr& logits, const std::vector<double>& soft_target);

TensorPtr add(const TensorPtr& a, const TensorPtr& b);
TensorPtr scale(const TensorPtr& x, double c);
TensorPtr concat1d(const std::vector<TensorPtr>& parts);

// out[t, i] = m[t, i] * a[i] for m: [T, F], a: [F].
TensorPtr rowwise_mul(const TensorPtr& m, const TensorPtr& a);

// Max over coordinates of |analytic - central difference| / max(1, |analytic|)
// for a scalar-valued function of x. f is re-evaluated under NoGradGuard for
// the numeric probes.
double grad_check(const std::function<TensorPtr(const TensorPtr&)>& f, const TensorPtr& x,
                  double eps = 1e-5);

namespace debug {
// Deliberately breaks leaky_relu's backward rule; only the gradcheck
// negative-control path flips this.
extern bool corrupt_leaky_relu_backward;
}  // namespace debug

}  // namespace tagasc
