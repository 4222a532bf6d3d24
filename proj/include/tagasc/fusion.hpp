#pragma once

#include <string>
#include <vector>

#include "tagasc/backbone.hpp"
#include "tagasc/tensor.hpp"

namespace tagasc {

enum class FusionMode {
    none,
    codecat,
    before_code,
    attention,
    combined_shared,
    combined_separate,
};

std::string fusion_mode_name(FusionMode mode);
FusionMode fusion_mode_from_name(const std::string& name);

struct FusionConfig {
    FusionMode mode = FusionMode::none;
    std::size_t n_transform_layers = 0;
    std::size_t transform_hidden_dim = 128;
    std::size_t n_heads = 1;
    // separate combined mode only
    std::size_t n_transform_layers_concat = 0;
    std::size_t n_transform_layers_att = 0;

    bool uses_attention() const {
        return mode == FusionMode::attention || mode == FusionMode::combined_shared ||
               mode == FusionMode::combined_separate;
    }
    bool uses_tags() const { return mode != FusionMode::none; }

    void validate(std::size_t num_filters, std::size_t tag_dim) const;
};

// Stack of FC layers transforming a tag vector. Empty layers = identity
// pass-through; linear_projection marks the depth-0 attention read (one FC,
// no activation).
struct TagStack {
    std::vector<DenseLayer> layers;
    double slope = 0.3;
    bool linear_projection = false;
};

// n_layers >= 1: FC+LeakyReLU layers, hidden widths hidden_dim, final layer
// mapping to out_dim. n_layers == 0: identity, requires out_dim == tag_dim.
TagStack make_tag_transform(std::size_t tag_dim, std::size_t n_layers, std::size_t hidden_dim,
                            std::size_t out_dim, double slope, Rng& rng);

// Attention-map head: depth 0 is a single linear projection tag_dim -> f.
TagStack make_attention_stack(std::size_t tag_dim, std::size_t n_layers, std::size_t hidden_dim,
                              std::size_t num_filters, double slope, Rng& rng);

TensorPtr transform_tag(const TensorPtr& tag, const TagStack& stack);

std::size_t tag_stack_out_dim(const TagStack& stack, std::size_t tag_dim);

// Per-head-normalized attention weights over the filter dimension.
struct AttentionMap {
    TensorPtr values;  // [f], every length-(f/h) segment sums to 1
    std::size_t heads = 1;
};

AttentionMap attention_map(const TensorPtr& tag, const TagStack& stack, std::size_t heads);

// M'[t, i] = M[t, i] * A[i]; each head's subvector is scaled by its segment.
TensorPtr apply_attention(const TensorPtr& m, const AttentionMap& a);

// Plain code-then-tag concatenation, no learned parameters.
TensorPtr fuse_codecat(const TensorPtr& code, const TensorPtr& tag);

struct BeforeCodeParams {
    TagStack transform;   // empty = method two (no transform before concat)
    DenseLayer code_fc;   // [2f + tag_out, code_dim], replaces Table 1's code FC
};

TensorPtr fuse_before_code(const TensorPtr& pooled, const TensorPtr& tag,
                           const BeforeCodeParams& params);

// Combined concat + attention. Shared mode reuses one stack output for both
// branches; separate mode owns two stacks. The concat branch consumes the
// pooled vector of the attended map.
struct CombinedParams {
    bool shared = true;
    TagStack shared_stack;  // out_dim = f
    TagStack concat_stack;  // separate mode
    TagStack att_stack;     // separate mode, out_dim = f
    DenseLayer code_fc;
    std::size_t heads = 1;
};

struct CombinedResult {
    TensorPtr code;
    TensorPtr attended;  // M'
    TensorPtr pooled;    // avg ++ max of M'
    AttentionMap att;
};

CombinedResult fuse_combined(const TensorPtr& m, const TensorPtr& tag,
                             const CombinedParams& params);

}  // namespace tagasc
