#include "tagasc/backbone.hpp"

#include <cmath>
#include <sstream>

namespace tagasc {

BackboneConfig BackboneConfig::desk() {
    BackboneConfig cfg;
    cfg.input_samples = 9599;
    cfg.input_channels = 1;
    cfg.num_filters = 16;
    cfg.num_res_blocks = 3;
    cfg.code_dim = 8;
    cfg.num_classes = 4;
    return cfg;
}

void BackboneConfig::validate() const {
    if (input_channels == 0 || num_filters == 0 || code_dim == 0) {
        throw ConfigError("backbone: channels, filters and code_dim must be positive");
    }
    if (num_classes < 2) throw ConfigError("backbone: need at least 2 classes");
    if (front_filter_len == 0) throw ConfigError("backbone: front filter length must be positive");
    if (pool_k < 2) throw ConfigError("backbone: pool window must be >= 2");
    if (!(leaky_slope > 0.0 && leaky_slope < 1.0)) {
        throw ConfigError("backbone: leaky slope must be in (0, 1)");
    }
    time_lengths();
}

std::vector<std::size_t> BackboneConfig::time_lengths() const {
    if (input_samples < front_filter_len) {
        throw ConfigError("backbone: input length " + std::to_string(input_samples) +
                          " < front filter length " + std::to_string(front_filter_len));
    }
    std::vector<std::size_t> lengths;
    std::size_t t = (input_samples - front_filter_len) / front_filter_len + 1;
    lengths.push_back(t);
    for (std::size_t b = 0; b < num_res_blocks; ++b) {
        if (t < pool_k) {
            throw ConfigError("backbone: res block " + std::to_string(b + 1) + " input length " +
                              std::to_string(t) + " < pool window " + std::to_string(pool_k) +
                              " (floor chain from " + std::to_string(lengths[0]) + ")");
        }
        // batch norm inside the block needs at least 2 time steps
        if (t < 2) {
            throw ConfigError("backbone: res block " + std::to_string(b + 1) +
                              " input length 1 cannot be normalized");
        }
        t = t / pool_k;
        lengths.push_back(t);
    }
    return lengths;
}

namespace {

TensorPtr he_uniform(std::vector<std::size_t> shape, std::size_t fan_in, Rng& rng) {
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
    std::vector<double> d(shape_product(shape));
    for (auto& v : d) v = rng.uniform(-limit, limit);
    return Tensor::create(std::move(shape), std::move(d), true);
}

}  // namespace

Conv1dLayer make_conv1d(std::size_t filter_len, std::size_t c_in, std::size_t c_out,
                        std::size_t stride, Padding padding, Rng& rng) {
    Conv1dLayer layer;
    layer.weight = he_uniform({filter_len, c_in, c_out}, filter_len * c_in, rng);
    layer.bias = Tensor::zeros({c_out}, true);
    layer.stride = stride;
    layer.padding = padding;
    return layer;
}

BatchNormLayer make_batch_norm(std::size_t channels) {
    BatchNormLayer layer;
    layer.gamma = Tensor::full({channels}, 1.0, true);
    layer.beta = Tensor::zeros({channels}, true);
    layer.state = BatchNormState(channels);
    return layer;
}

DenseLayer make_dense(std::size_t d_in, std::size_t d_out, Rng& rng) {
    DenseLayer layer;
    layer.weight = he_uniform({d_in, d_out}, d_in, rng);
    layer.bias = Tensor::zeros({d_out}, true);
    return layer;
}

Backbone::Backbone(const BackboneConfig& cfg, Rng& rng) : cfg_(cfg) {
    cfg.validate();
    const std::size_t f = cfg.num_filters;
    front = make_conv1d(cfg.front_filter_len, cfg.input_channels, f, cfg.front_filter_len,
                        Padding::valid, rng);
    front_bn = make_batch_norm(f);
    for (std::size_t b = 0; b < cfg.num_res_blocks; ++b) {
        ResBlock block;
        block.conv1 = make_conv1d(3, f, f, 1, Padding::same, rng);
        block.bn1 = make_batch_norm(f);
        block.conv2 = make_conv1d(3, f, f, 1, Padding::same, rng);
        block.bn2 = make_batch_norm(f);
        blocks.push_back(std::move(block));
    }
    code_fc = make_dense(2 * f, cfg.code_dim, rng);
    out_fc = make_dense(cfg.code_dim, cfg.num_classes, rng);
}

TensorPtr Backbone::residual_block(const TensorPtr& x, ResBlock& block, BnMode mode) {
    auto h = conv1d(x, block.conv1.weight, block.conv1.bias, 1, Padding::same);
    h = leaky_relu(batch_norm(h, block.bn1.gamma, block.bn1.beta, block.bn1.state, mode),
                   cfg_.leaky_slope);
    h = conv1d(h, block.conv2.weight, block.conv2.bias, 1, Padding::same);
    h = leaky_relu(batch_norm(h, block.bn2.gamma, block.bn2.beta, block.bn2.state, mode),
                   cfg_.leaky_slope);
    return max_pool1d(add(x, h), cfg_.pool_k);
}

TensorPtr Backbone::forward_features(const TensorPtr& waveform, BnMode mode,
                                     std::vector<std::vector<std::size_t>>* stage_shapes) {
    if (waveform->ndim() != 2 || waveform->dim(0) != cfg_.input_samples ||
        waveform->dim(1) != cfg_.input_channels) {
        throw DimensionError("backbone: waveform shape mismatch, want (" +
                             std::to_string(cfg_.input_samples) + ", " +
                             std::to_string(cfg_.input_channels) + ")");
    }
    auto h = conv1d(waveform, front.weight, front.bias, front.stride);
    h = leaky_relu(batch_norm(h, front_bn.gamma, front_bn.beta, front_bn.state, mode),
                   cfg_.leaky_slope);
    if (stage_shapes) stage_shapes->push_back(h->shape);
    for (auto& block : blocks) h = residual_block(h, block, mode);
    if (stage_shapes) stage_shapes->push_back(h->shape);
    return h;
}

BackboneOutput Backbone::forward(const TensorPtr& waveform, BnMode mode) {
    BackboneOutput out;
    out.feature_map = forward_features(waveform, mode, &out.stage_shapes);
    auto avg = global_avg_pool(out.feature_map);
    auto mx = global_max_pool(out.feature_map);
    out.stage_shapes.push_back(avg->shape);
    out.stage_shapes.push_back(mx->shape);
    out.pooled = concat1d({avg, mx});
    out.stage_shapes.push_back(out.pooled->shape);
    out.code = dense(out.pooled, code_fc.weight, code_fc.bias);
    out.stage_shapes.push_back(out.code->shape);
    out.logits = dense(out.code, out_fc.weight, out_fc.bias);
    out.stage_shapes.push_back(out.logits->shape);
    return out;
}

std::vector<TensorPtr> Backbone::parameters() {
    std::vector<TensorPtr> params = {front.weight, front.bias, front_bn.gamma, front_bn.beta};
    for (auto& block : blocks) {
        params.push_back(block.conv1.weight);
        params.push_back(block.conv1.bias);
        params.push_back(block.bn1.gamma);
        params.push_back(block.bn1.beta);
        params.push_back(block.conv2.weight);
        params.push_back(block.conv2.bias);
        params.push_back(block.bn2.gamma);
        params.push_back(block.bn2.beta);
    }
    params.push_back(code_fc.weight);
    params.push_back(code_fc.bias);
    params.push_back(out_fc.weight);
    params.push_back(out_fc.bias);
    return params;
}

std::vector<BatchNormState*> Backbone::bn_states() {
    std::vector<BatchNormState*> states = {&front_bn.state};
    for (auto& block : blocks) {
        states.push_back(&block.bn1.state);
        states.push_back(&block.bn2.state);
    }
    return states;
}

std::size_t Backbone::parameter_count() {
    std::size_t n = 0;
    for (const auto& p : parameters()) n += p->size();
    return n;
}

}  // namespace tagasc
