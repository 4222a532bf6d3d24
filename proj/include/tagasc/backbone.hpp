#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tagasc/rng.hpp"
#include "tagasc/tensor.hpp"

namespace tagasc {

// Raw-waveform backbone: strided-conv front end, residual conv blocks with
// max pooling, dual global pooling, code FC, classifier FC. The full scale
// is (479999, 2) -> (39999, 128) -> (18, 128) -> (256,) -> (64,) -> (10,).
struct BackboneConfig {
    std::size_t input_samples = 479999;
    std::size_t input_channels = 2;
    std::size_t front_filter_len = 12;  // stride equals filter length
    std::size_t num_filters = 128;      // f
    std::size_t num_res_blocks = 7;
    std::size_t pool_k = 3;
    std::size_t code_dim = 64;
    std::size_t num_classes = 10;
    double leaky_slope = 0.3;

    // Small configuration used by tests and the synthetic pipeline.
    static BackboneConfig desk();

    void validate() const;

    // Time length after the front end and after each pooled block; throws
    // ConfigError with the failing stage's arithmetic.
    std::vector<std::size_t> time_lengths() const;
};

struct Conv1dLayer {
    TensorPtr weight;  // [L, C_in, C_out]
    TensorPtr bias;    // [C_out]
    std::size_t stride = 1;
    Padding padding = Padding::valid;
};

struct BatchNormLayer {
    TensorPtr gamma;
    TensorPtr beta;
    BatchNormState state;
};

struct DenseLayer {
    TensorPtr weight;  // [D_in, D_out]
    TensorPtr bias;    // [D_out]
};

struct ResBlock {
    Conv1dLayer conv1, conv2;
    BatchNormLayer bn1, bn2;
};

struct BackboneOutput {
    TensorPtr feature_map;  // [t, f] post-res-blocks, pre-pooling
    TensorPtr pooled;       // [2f] avg ++ max
    TensorPtr code;         // [code_dim]
    TensorPtr logits;       // [num_classes]
    // Output shape of each Table-1 stage: front end, res blocks, avg pool,
    // max pool, concat, code, output.
    std::vector<std::vector<std::size_t>> stage_shapes;
};

Conv1dLayer make_conv1d(std::size_t filter_len, std::size_t c_in, std::size_t c_out,
                        std::size_t stride, Padding padding, Rng& rng);
BatchNormLayer make_batch_norm(std::size_t channels);
DenseLayer make_dense(std::size_t d_in, std::size_t d_out, Rng& rng);

class Backbone {
public:
    Backbone(const BackboneConfig& cfg, Rng& rng);

    const BackboneConfig& config() const { return cfg_; }

    // Feature extraction up to the pre-pooling map [t, f].
    TensorPtr forward_features(const TensorPtr& waveform, BnMode mode,
                               std::vector<std::vector<std::size_t>>* stage_shapes = nullptr);

    BackboneOutput forward(const TensorPtr& waveform, BnMode mode);

    // out = maxpool(x + convpath(x), pool_k) through the given block.
    TensorPtr residual_block(const TensorPtr& x, ResBlock& block, BnMode mode);

    std::vector<TensorPtr> parameters();       // build order
    std::vector<BatchNormState*> bn_states();  // build order
    std::size_t parameter_count();

    Conv1dLayer front;
    BatchNormLayer front_bn;
    std::vector<ResBlock> blocks;
    DenseLayer code_fc;  // [2f, code_dim]
    DenseLayer out_fc;   // [code_dim, num_classes]

private:
    BackboneConfig cfg_;
};

}  // namespace tagasc
