#include "tagasc/model.hpp"

#include <cstring>
#include <fstream>

namespace tagasc {

std::size_t fused_code_dim(const BackboneConfig& bcfg, const FusionConfig& fcfg,
                           std::size_t tag_dim) {
    if (fcfg.mode == FusionMode::codecat) return bcfg.code_dim + tag_dim;
    return bcfg.code_dim;
}

FusedModel::FusedModel(const BackboneConfig& bcfg, const FusionConfig& fcfg, std::size_t tag_dim,
                       Rng& rng)
    : backbone(bcfg, rng), bcfg_(bcfg), fcfg_(fcfg), tag_dim_(tag_dim) {
    fcfg.validate(bcfg.num_filters, tag_dim);
    const std::size_t f = bcfg.num_filters;
    const std::size_t hidden = fcfg.transform_hidden_dim;
    const double slope = bcfg.leaky_slope;

    switch (fcfg.mode) {
        case FusionMode::none:
            break;
        case FusionMode::codecat:
            fused_out_fc = make_dense(bcfg.code_dim + tag_dim, bcfg.num_classes, rng);
            break;
        case FusionMode::before_code: {
            const std::size_t out =
                fcfg.n_transform_layers == 0 ? tag_dim : hidden;
            concat_stack =
                make_tag_transform(tag_dim, fcfg.n_transform_layers, hidden, out, slope, rng);
            fused_code_fc = make_dense(2 * f + out, bcfg.code_dim, rng);
            break;
        }
        case FusionMode::attention:
            att_stack =
                make_attention_stack(tag_dim, fcfg.n_transform_layers, hidden, f, slope, rng);
            break;
        case FusionMode::combined_shared:
            shared_stack =
                make_attention_stack(tag_dim, fcfg.n_transform_layers, hidden, f, slope, rng);
            fused_code_fc = make_dense(2 * f + f, bcfg.code_dim, rng);
            break;
        case FusionMode::combined_separate: {
            const std::size_t concat_out =
                fcfg.n_transform_layers_concat == 0 ? tag_dim : hidden;
            concat_stack = make_tag_transform(tag_dim, fcfg.n_transform_layers_concat, hidden,
                                              concat_out, slope, rng);
            att_stack = make_attention_stack(tag_dim, fcfg.n_transform_layers_att, hidden, f,
                                             slope, rng);
            fused_code_fc = make_dense(2 * f + concat_out, bcfg.code_dim, rng);
            break;
        }
    }
}

FusedModel::Forward FusedModel::forward(const TensorPtr& waveform, const TensorPtr& tag,
                                        BnMode mode) {
    if (fcfg_.uses_tags()) {
        if (!tag) throw DataError("forward: fusion mode " + fusion_mode_name(fcfg_.mode) +
                                  " requires a tag vector");
        if (tag->ndim() != 1 || tag->dim(0) != tag_dim_) {
            throw DimensionError("forward: tag length " + std::to_string(tag->size()) + " != " +
                                 std::to_string(tag_dim_));
        }
    }

    Forward out;
    switch (fcfg_.mode) {
        case FusionMode::none: {
            auto bb = backbone.forward(waveform, mode);
            out.feature_map = bb.feature_map;
            out.pooled = bb.pooled;
            out.code = bb.code;
            out.final_code = bb.code;
            out.logits = bb.logits;
            break;
        }
        case FusionMode::codecat: {
            auto bb = backbone.forward(waveform, mode);
            out.feature_map = bb.feature_map;
            out.pooled = bb.pooled;
            out.code = bb.code;
            out.final_code = fuse_codecat(bb.code, tag);
            out.logits = dense(out.final_code, fused_out_fc.weight, fused_out_fc.bias);
            break;
        }
        case FusionMode::before_code: {
            auto m = backbone.forward_features(waveform, mode);
            out.feature_map = m;
            out.pooled = concat1d({global_avg_pool(m), global_max_pool(m)});
            BeforeCodeParams p{concat_stack, fused_code_fc};
            out.code = fuse_before_code(out.pooled, tag, p);
            out.final_code = out.code;
            out.logits = dense(out.code, backbone.out_fc.weight, backbone.out_fc.bias);
            break;
        }
        case FusionMode::attention: {
            auto m = backbone.forward_features(waveform, mode);
            auto a = attention_map(tag, att_stack, fcfg_.n_heads);
            auto attended = apply_attention(m, a);
            out.feature_map = attended;
            out.pooled = concat1d({global_avg_pool(attended), global_max_pool(attended)});
            out.code = dense(out.pooled, backbone.code_fc.weight, backbone.code_fc.bias);
            out.final_code = out.code;
            out.logits = dense(out.code, backbone.out_fc.weight, backbone.out_fc.bias);
            break;
        }
        case FusionMode::combined_shared:
        case FusionMode::combined_separate: {
            auto m = backbone.forward_features(waveform, mode);
            CombinedParams p;
            p.shared = fcfg_.mode == FusionMode::combined_shared;
            p.shared_stack = shared_stack;
            p.concat_stack = concat_stack;
            p.att_stack = att_stack;
            p.code_fc = fused_code_fc;
            p.heads = fcfg_.n_heads;
            auto combined = fuse_combined(m, tag, p);
            out.feature_map = combined.attended;
            out.pooled = combined.pooled;
            out.code = combined.code;
            out.final_code = combined.code;
            out.logits = dense(out.code, backbone.out_fc.weight, backbone.out_fc.bias);
            break;
        }
    }
    return out;
}

namespace {

void push_stack(std::vector<TensorPtr>& params, TagStack& stack) {
    for (auto& layer : stack.layers) {
        params.push_back(layer.weight);
        params.push_back(layer.bias);
    }
}

}  // namespace

std::vector<TensorPtr> FusedModel::parameters() {
    // trunk (front + blocks) always trains
    std::vector<TensorPtr> params = {backbone.front.weight, backbone.front.bias,
                                     backbone.front_bn.gamma, backbone.front_bn.beta};
    for (auto& block : backbone.blocks) {
        params.push_back(block.conv1.weight);
        params.push_back(block.conv1.bias);
        params.push_back(block.bn1.gamma);
        params.push_back(block.bn1.beta);
        params.push_back(block.conv2.weight);
        params.push_back(block.conv2.bias);
        params.push_back(block.bn2.gamma);
        params.push_back(block.bn2.beta);
    }
    const bool uses_backbone_code_fc =
        fcfg_.mode == FusionMode::none || fcfg_.mode == FusionMode::codecat ||
        fcfg_.mode == FusionMode::attention;
    const bool uses_backbone_out_fc = fcfg_.mode != FusionMode::codecat;
    if (uses_backbone_code_fc) {
        params.push_back(backbone.code_fc.weight);
        params.push_back(backbone.code_fc.bias);
    }
    if (uses_backbone_out_fc) {
        params.push_back(backbone.out_fc.weight);
        params.push_back(backbone.out_fc.bias);
    }
    push_stack(params, concat_stack);
    push_stack(params, att_stack);
    push_stack(params, shared_stack);
    if (fused_code_fc.weight) {
        params.push_back(fused_code_fc.weight);
        params.push_back(fused_code_fc.bias);
    }
    if (fused_out_fc.weight) {
        params.push_back(fused_out_fc.weight);
        params.push_back(fused_out_fc.bias);
    }
    return params;
}

std::vector<BatchNormState*> FusedModel::bn_states() { return backbone.bn_states(); }

namespace {

constexpr char kMagic[8] = {'T', 'A', 'S', 'C', '0', '0', '0', '1'};

void write_u64(std::ofstream& out, std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    out.write(reinterpret_cast<const char*>(b), 8);
}

std::uint64_t read_u64(std::ifstream& in, const std::string& path) {
    unsigned char b[8];
    in.read(reinterpret_cast<char*>(b), 8);
    if (!in) throw ParseError(path + ": truncated checkpoint");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
}

void write_f64(std::ofstream& out, double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    write_u64(out, bits);
}

double read_f64(std::ifstream& in, const std::string& path) {
    const std::uint64_t bits = read_u64(in, path);
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
}

}  // namespace

void save_checkpoint(const std::string& path, FusedModel& model) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write checkpoint: " + path);
    out.write(kMagic, 8);

    const auto& b = model.backbone_config();
    write_u64(out, b.input_samples);
    write_u64(out, b.input_channels);
    write_u64(out, b.front_filter_len);
    write_u64(out, b.num_filters);
    write_u64(out, b.num_res_blocks);
    write_u64(out, b.pool_k);
    write_u64(out, b.code_dim);
    write_u64(out, b.num_classes);
    write_f64(out, b.leaky_slope);

    const auto& f = model.fusion_config();
    write_u64(out, static_cast<std::uint64_t>(f.mode));
    write_u64(out, f.n_transform_layers);
    write_u64(out, f.transform_hidden_dim);
    write_u64(out, f.n_heads);
    write_u64(out, f.n_transform_layers_concat);
    write_u64(out, f.n_transform_layers_att);
    write_u64(out, model.tag_dim());

    auto params = model.parameters();
    write_u64(out, params.size());
    for (const auto& p : params) {
        write_u64(out, p->ndim());
        for (std::size_t d : p->shape) write_u64(out, d);
        for (double v : p->data) write_f64(out, v);
    }

    auto states = model.bn_states();
    write_u64(out, states.size());
    for (const auto* st : states) {
        write_u64(out, st->running_mean.size());
        for (double v : st->running_mean) write_f64(out, v);
        for (double v : st->running_var) write_f64(out, v);
    }
    if (!out) throw DataError("checkpoint write failed: " + path);
}

std::unique_ptr<FusedModel> load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open checkpoint: " + path);
    char magic[8];
    in.read(magic, 8);
    if (!in || std::memcmp(magic, kMagic, 8) != 0) {
        throw ParseError(path + ": not a tagasc checkpoint (bad magic)");
    }

    BackboneConfig b;
    b.input_samples = read_u64(in, path);
    b.input_channels = read_u64(in, path);
    b.front_filter_len = read_u64(in, path);
    b.num_filters = read_u64(in, path);
    b.num_res_blocks = read_u64(in, path);
    b.pool_k = read_u64(in, path);
    b.code_dim = read_u64(in, path);
    b.num_classes = read_u64(in, path);
    b.leaky_slope = read_f64(in, path);

    FusionConfig f;
    const std::uint64_t mode = read_u64(in, path);
    if (mode > static_cast<std::uint64_t>(FusionMode::combined_separate)) {
        throw ParseError(path + ": invalid fusion mode in checkpoint");
    }
    f.mode = static_cast<FusionMode>(mode);
    f.n_transform_layers = read_u64(in, path);
    f.transform_hidden_dim = read_u64(in, path);
    f.n_heads = read_u64(in, path);
    f.n_transform_layers_concat = read_u64(in, path);
    f.n_transform_layers_att = read_u64(in, path);
    const std::size_t tag_dim = read_u64(in, path);

    Rng rng(0);  // initialization is fully overwritten below
    auto model = std::make_unique<FusedModel>(b, f, tag_dim, rng);

    auto params = model->parameters();
    const std::uint64_t n_params = read_u64(in, path);
    if (n_params != params.size()) {
        throw ParseError(path + ": parameter count mismatch (" + std::to_string(n_params) +
                         " != " + std::to_string(params.size()) + ")");
    }
    for (auto& p : params) {
        const std::uint64_t ndim = read_u64(in, path);
        std::vector<std::size_t> shape(ndim);
        for (auto& d : shape) d = read_u64(in, path);
        if (shape != p->shape) throw ParseError(path + ": parameter shape mismatch");
        for (auto& v : p->data) v = read_f64(in, path);
    }

    auto states = model->bn_states();
    const std::uint64_t n_states = read_u64(in, path);
    if (n_states != states.size()) throw ParseError(path + ": batch-norm state count mismatch");
    for (auto* st : states) {
        const std::uint64_t c = read_u64(in, path);
        if (c != st->running_mean.size()) throw ParseError(path + ": batch-norm size mismatch");
        for (auto& v : st->running_mean) v = read_f64(in, path);
        for (auto& v : st->running_var) v = read_f64(in, path);
    }
    return model;
}

}  // namespace tagasc
