#include "tagasc/fusion.hpp"

namespace tagasc {

std::string fusion_mode_name(FusionMode mode) {
    switch (mode) {
        case FusionMode::none: return "none";
        case FusionMode::codecat: return "codecat";
        case FusionMode::before_code: return "before_code";
        case FusionMode::attention: return "attention";
        case FusionMode::combined_shared: return "combined_shared";
        case FusionMode::combined_separate: return "combined_separate";
    }
    throw ConfigError("unknown fusion mode");
}

FusionMode fusion_mode_from_name(const std::string& name) {
    if (name == "none") return FusionMode::none;
    if (name == "codecat") return FusionMode::codecat;
    if (name == "before_code") return FusionMode::before_code;
    if (name == "attention") return FusionMode::attention;
    if (name == "combined_shared") return FusionMode::combined_shared;
    if (name == "combined_separate") return FusionMode::combined_separate;
    throw ConfigError("unknown fusion mode \"" + name + "\"");
}

void FusionConfig::validate(std::size_t num_filters, std::size_t tag_dim) const {
    if (tag_dim == 0 && uses_tags()) throw ConfigError("fusion: tag dimension must be positive");
    if (transform_hidden_dim == 0) throw ConfigError("fusion: hidden dim must be positive");
    if (uses_attention()) {
        if (n_heads == 0) throw ConfigError("fusion: head count must be >= 1");
        if (num_filters % n_heads != 0) {
            throw ConfigError("fusion: head count " + std::to_string(n_heads) +
                              " does not divide filter count " + std::to_string(num_filters));
        }
    }
}

TagStack make_tag_transform(std::size_t tag_dim, std::size_t n_layers, std::size_t hidden_dim,
                            std::size_t out_dim, double slope, Rng& rng) {
    TagStack stack;
    stack.slope = slope;
    if (n_layers == 0) {
        if (out_dim != tag_dim) {
            throw ConfigError("transform_tag: 0 layers requires out_dim == tag_dim (" +
                              std::to_string(out_dim) + " != " + std::to_string(tag_dim) + ")");
        }
        return stack;
    }
    std::size_t in = tag_dim;
    for (std::size_t l = 0; l < n_layers; ++l) {
        const std::size_t out = (l + 1 == n_layers) ? out_dim : hidden_dim;
        stack.layers.push_back(make_dense(in, out, rng));
        in = out;
    }
    return stack;
}

TagStack make_attention_stack(std::size_t tag_dim, std::size_t n_layers, std::size_t hidden_dim,
                              std::size_t num_filters, double slope, Rng& rng) {
    if (n_layers == 0) {
        // Table 3's "0 transform layers": one linear map to length f
        TagStack stack;
        stack.slope = slope;
        stack.linear_projection = true;
        stack.layers.push_back(make_dense(tag_dim, num_filters, rng));
        return stack;
    }
    return make_tag_transform(tag_dim, n_layers, hidden_dim, num_filters, slope, rng);
}

TensorPtr transform_tag(const TensorPtr& tag, const TagStack& stack) {
    if (stack.layers.empty()) return tag;
    if (stack.linear_projection) {
        return dense(tag, stack.layers[0].weight, stack.layers[0].bias);
    }
    TensorPtr h = tag;
    for (const auto& layer : stack.layers) {
        h = leaky_relu(dense(h, layer.weight, layer.bias), stack.slope);
    }
    return h;
}

std::size_t tag_stack_out_dim(const TagStack& stack, std::size_t tag_dim) {
    if (stack.layers.empty()) return tag_dim;
    return stack.layers.back().weight->dim(1);
}

AttentionMap attention_map(const TensorPtr& tag, const TagStack& stack, std::size_t heads) {
    auto logits = transform_tag(tag, stack);
    AttentionMap a;
    a.values = softmax_segments(logits, heads);
    a.heads = heads;
    return a;
}

TensorPtr apply_attention(const TensorPtr& m, const AttentionMap& a) {
    if (m->ndim() != 2) throw DimensionError("apply_attention: feature map must be [t, f]");
    const std::size_t f = m->dim(1);
    if (a.values->ndim() != 1 || a.values->dim(0) != f) {
        throw DimensionError("apply_attention: map length " + std::to_string(a.values->dim(0)) +
                             " != filter count " + std::to_string(f));
    }
    if (a.heads == 0 || f % a.heads != 0) {
        throw DimensionError("apply_attention: segment structure does not match filter count");
    }
    return rowwise_mul(m, a.values);
}

TensorPtr fuse_codecat(const TensorPtr& code, const TensorPtr& tag) {
    return concat1d({code, tag});
}

TensorPtr fuse_before_code(const TensorPtr& pooled, const TensorPtr& tag,
                           const BeforeCodeParams& params) {
    auto transformed = transform_tag(tag, params.transform);
    return dense(concat1d({pooled, transformed}), params.code_fc.weight, params.code_fc.bias);
}

CombinedResult fuse_combined(const TensorPtr& m, const TensorPtr& tag,
                             const CombinedParams& params) {
    CombinedResult out;
    TensorPtr concat_branch;
    if (params.shared) {
        auto s = transform_tag(tag, params.shared_stack);
        out.att.values = softmax_segments(s, params.heads);
        out.att.heads = params.heads;
        concat_branch = s;
    } else {
        out.att = attention_map(tag, params.att_stack, params.heads);
        concat_branch = transform_tag(tag, params.concat_stack);
    }
    out.attended = apply_attention(m, out.att);
    out.pooled = concat1d({global_avg_pool(out.attended), global_max_pool(out.attended)});
    out.code = dense(concat1d({out.pooled, concat_branch}), params.code_fc.weight,
                     params.code_fc.bias);
    return out;
}

}  // namespace tagasc
