// tagasc command-line front end: synthesize data, train, extract codes,
// fit the SVM back-end, evaluate, run experiment grids, and gradient-check
// the autodiff stack.
//
// Exit codes: 0 success, 1 check/assertion failure, 2 usage/config error,
// 3 data error.

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "tagasc/model.hpp"
#include "tagasc/trainer.hpp"

using json = nlohmann::json;
namespace fs = std::filesystem;
using namespace tagasc;

namespace {

constexpr const char* kVersion = "0.1.0";

std::string timestamp_now() {
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
    return buf;
}

std::string resolve_out(const std::string& flag, const std::string& command) {
    if (!flag.empty()) return flag;
    if (const char* root = std::getenv("TAGASC_OUT_ROOT")) {
        return (fs::path(root) / (command + "_out")).string();
    }
    throw ConfigError(command + ": --out is required (or set TAGASC_OUT_ROOT)");
}

void append_manifest(const std::string& out_dir, const std::string& command, std::uint64_t seed,
                     const json& config, const std::vector<std::string>& inputs,
                     const std::vector<std::string>& outputs) {
    fs::create_directories(out_dir);
    json entry = {
        {"command", command}, {"version", kVersion},     {"seed", seed},
        {"config", config},   {"inputs", inputs},        {"outputs", outputs},
        {"timestamp", timestamp_now()},
    };
    std::ofstream out(fs::path(out_dir) / "manifest.jsonl", std::ios::app);
    if (!out) throw DataError("cannot write manifest in " + out_dir);
    out << entry.dump() << "\n";
}

// ---------------------------------------------------------------------------
// dataset directory loading (train_metadata.txt / test_metadata.txt /
// tags.txt / audio/)

struct LoadedDataset {
    std::vector<Recording> train;
    std::vector<Recording> test;
    TagTable tags;
    std::vector<std::string> class_names;
};

std::vector<Recording> load_split(const fs::path& dir, const std::string& metadata_file,
                                  const std::vector<std::string>& class_names) {
    std::vector<Recording> out;
    for (const auto& [id, label] : load_metadata((dir / metadata_file).string())) {
        const auto it = std::find(class_names.begin(), class_names.end(), label);
        if (it == class_names.end()) throw DataError("unknown scene label \"" + label + "\"");
        Recording rec = read_wav_file((dir / id).string());
        rec.id = id;
        rec.scene_label = static_cast<std::size_t>(it - class_names.begin());
        out.push_back(std::move(rec));
    }
    return out;
}

LoadedDataset load_dataset_dir(const std::string& dir_str, bool need_tags) {
    const fs::path dir(dir_str);
    if (!fs::is_directory(dir)) throw DataError("dataset directory not found: " + dir_str);

    std::set<std::string> label_set;
    for (const char* f : {"train_metadata.txt", "test_metadata.txt"}) {
        if (fs::exists(dir / f)) {
            for (const auto& [id, label] : load_metadata((dir / f).string())) {
                label_set.insert(label);
            }
        }
    }
    if (label_set.size() < 2) throw DataError("dataset needs at least 2 scene labels");

    LoadedDataset ds;
    ds.class_names.assign(label_set.begin(), label_set.end());  // sorted, stable
    if (fs::exists(dir / "train_metadata.txt")) {
        ds.train = load_split(dir, "train_metadata.txt", ds.class_names);
    }
    if (fs::exists(dir / "test_metadata.txt")) {
        ds.test = load_split(dir, "test_metadata.txt", ds.class_names);
    }
    if (fs::exists(dir / "tags.txt")) {
        ds.tags = load_tags((dir / "tags.txt").string());
    } else if (need_tags) {
        throw DataError("dataset has no tags.txt but the fusion mode needs tag vectors");
    }
    return ds;
}

// ---------------------------------------------------------------------------
// shared train-config flags

struct TrainFlags {
    std::string fusion = "none";
    std::size_t heads = 0;
    long layers = -1;
    long layers_concat = -1;
    long layers_att = -1;
    std::size_t hidden = 128;
    std::size_t epochs = 20;
    std::size_t batch = 8;
    double lr = 1e-3;
    std::string optimizer = "adam";
    std::uint64_t seed = 1;
    bool no_mixup = false;
    double alpha = 0.4;
    bool no_pre_emphasis = false;
    double pre_emphasis_beta = 0.97;
    bool full_scale = false;
    // backbone overrides (0 = derive from data / defaults)
    std::size_t filters = 0;
    std::size_t blocks = 0;
    std::size_t code_dim = 0;
    std::string config_path;
};

// Flat key=value config file; keys mirror the long flag names. Values apply
// only where the flag was not given explicitly, so flags > file > defaults.
void apply_config_file(const CLI::App* cmd, TrainFlags& f) {
    if (f.config_path.empty()) return;
    std::ifstream in(f.config_path);
    if (!in) throw ConfigError("cannot open config file: " + f.config_path);

    auto explicitly_set = [&](const std::string& flag) {
        const auto* opt = cmd->get_option_no_throw("--" + flag);
        return opt && opt->count() > 0;
    };
    auto truthy = [](const std::string& v) { return v == "1" || v == "true" || v == "yes"; };

    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        if (line.find_first_not_of(" \t") == std::string::npos) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError(f.config_path + ":" + std::to_string(lineno) +
                              ": expected key=value");
        }
        auto trim = [](std::string s) {
            const auto a = s.find_first_not_of(" \t");
            const auto b = s.find_last_not_of(" \t");
            return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
        };
        const std::string key = trim(line.substr(0, eq));
        const std::string val = trim(line.substr(eq + 1));
        if (explicitly_set(key)) continue;
        try {
            if (key == "fusion") f.fusion = val;
            else if (key == "heads") f.heads = std::stoul(val);
            else if (key == "layers") f.layers = std::stol(val);
            else if (key == "layers-concat") f.layers_concat = std::stol(val);
            else if (key == "layers-att") f.layers_att = std::stol(val);
            else if (key == "hidden") f.hidden = std::stoul(val);
            else if (key == "epochs") f.epochs = std::stoul(val);
            else if (key == "batch") f.batch = std::stoul(val);
            else if (key == "lr") f.lr = std::stod(val);
            else if (key == "optimizer") f.optimizer = val;
            else if (key == "seed") f.seed = std::stoull(val);
            else if (key == "no-mixup") f.no_mixup = truthy(val);
            else if (key == "alpha") f.alpha = std::stod(val);
            else if (key == "no-pre-emphasis") f.no_pre_emphasis = truthy(val);
            else if (key == "pre-emphasis-beta") f.pre_emphasis_beta = std::stod(val);
            else if (key == "full-scale") f.full_scale = truthy(val);
            else if (key == "filters") f.filters = std::stoul(val);
            else if (key == "blocks") f.blocks = std::stoul(val);
            else if (key == "code-dim") f.code_dim = std::stoul(val);
            else {
                throw ConfigError(f.config_path + ":" + std::to_string(lineno) +
                                  ": unknown key \"" + key + "\"");
            }
        } catch (const ConfigError&) {
            throw;
        } catch (const std::exception&) {
            throw ConfigError(f.config_path + ":" + std::to_string(lineno) + ": bad value \"" +
                              val + "\"");
        }
    }
}

void add_train_flags(CLI::App* cmd, TrainFlags& f, bool with_fusion) {
    cmd->add_option("--config", f.config_path,
                    "flat key=value config file (keys mirror flag names)");
    if (with_fusion) {
        cmd->add_option("--fusion", f.fusion,
                        "fusion mode: none|codecat|before_code|attention|combined_shared|"
                        "combined_separate")
            ->default_val("none");
        cmd->add_option("--heads", f.heads, "attention head count");
        cmd->add_option("--layers", f.layers, "tag transform depth");
        cmd->add_option("--layers-concat", f.layers_concat,
                        "concat-branch transform depth (combined_separate)");
        cmd->add_option("--layers-att", f.layers_att,
                        "attention-branch transform depth (combined_separate)");
        cmd->add_option("--hidden", f.hidden, "transform hidden width");
    }
    cmd->add_option("--epochs", f.epochs, "training epochs");
    cmd->add_option("--batch", f.batch, "batch size (gradient accumulation)");
    cmd->add_option("--lr", f.lr, "learning rate");
    cmd->add_option("--optimizer", f.optimizer, "adam|sgd");
    cmd->add_option("--seed", f.seed, "run seed");
    cmd->add_flag("--no-mixup", f.no_mixup, "disable mixup");
    cmd->add_option("--alpha", f.alpha, "mixup Beta(alpha, alpha)");
    cmd->add_flag("--no-pre-emphasis", f.no_pre_emphasis, "feed raw waveforms");
    cmd->add_option("--pre-emphasis-beta", f.pre_emphasis_beta, "pre-emphasis coefficient");
    cmd->add_flag("--full-scale", f.full_scale, "use the full-scale backbone");
    cmd->add_option("--filters", f.filters, "backbone filter count f");
    cmd->add_option("--blocks", f.blocks, "residual block count");
    cmd->add_option("--code-dim", f.code_dim, "code dimensionality");
}

// Builds the TrainConfig; shape fields are derived from the dataset unless
// overridden. Contradictory fusion flags are usage errors before any work.
TrainConfig make_train_config(const TrainFlags& f, const LoadedDataset& ds) {
    TrainConfig cfg;
    cfg.fusion.mode = fusion_mode_from_name(f.fusion);

    const bool has_heads_axis = cfg.fusion.uses_attention();
    const bool has_single_depth = cfg.fusion.mode == FusionMode::before_code ||
                                  cfg.fusion.mode == FusionMode::attention ||
                                  cfg.fusion.mode == FusionMode::combined_shared;
    if (f.heads != 0 && !has_heads_axis) {
        throw ConfigError("--heads is only valid with attention/combined fusion modes");
    }
    if (f.layers >= 0 && !has_single_depth) {
        throw ConfigError("--layers is not valid for fusion mode " + f.fusion);
    }
    if ((f.layers_concat >= 0 || f.layers_att >= 0) &&
        cfg.fusion.mode != FusionMode::combined_separate) {
        throw ConfigError("--layers-concat/--layers-att need --fusion combined_separate");
    }
    if (has_heads_axis) cfg.fusion.n_heads = f.heads == 0 ? 2 : f.heads;
    if (f.layers >= 0) cfg.fusion.n_transform_layers = static_cast<std::size_t>(f.layers);
    if (f.layers_concat >= 0) {
        cfg.fusion.n_transform_layers_concat = static_cast<std::size_t>(f.layers_concat);
    }
    if (f.layers_att >= 0) {
        cfg.fusion.n_transform_layers_att = static_cast<std::size_t>(f.layers_att);
    }
    cfg.fusion.transform_hidden_dim = f.hidden;

    cfg.epochs = f.epochs;
    cfg.batch_size = f.batch;
    cfg.lr = f.lr;
    if (f.optimizer == "adam") cfg.optimizer = OptimizerKind::adam;
    else if (f.optimizer == "sgd") cfg.optimizer = OptimizerKind::sgd;
    else throw ConfigError("unknown optimizer \"" + f.optimizer + "\"");
    cfg.seed = f.seed;
    cfg.mixup_enabled = !f.no_mixup;
    cfg.mixup_alpha = f.alpha;
    cfg.pre_emphasis_enabled = !f.no_pre_emphasis;
    cfg.pre_emphasis_beta = f.pre_emphasis_beta;

    cfg.backbone = f.full_scale ? BackboneConfig() : BackboneConfig::desk();
    if (!ds.train.empty()) {
        const auto& first = ds.train.front();
        cfg.backbone.input_samples =
            cfg.pre_emphasis_enabled ? first.num_samples - 1 : first.num_samples;
        cfg.backbone.input_channels = first.channels;
        cfg.backbone.num_classes = ds.class_names.size();
    }
    if (f.filters) cfg.backbone.num_filters = f.filters;
    if (f.blocks) cfg.backbone.num_res_blocks = f.blocks;
    if (f.code_dim) cfg.backbone.code_dim = f.code_dim;

    cfg.validate();
    cfg.fusion.validate(cfg.backbone.num_filters,
                        cfg.fusion.uses_tags() ? ds.tags.tag_dim : 0);
    return cfg;
}

json config_json(const TrainConfig& cfg) {
    return json{
        {"fusion", fusion_mode_name(cfg.fusion.mode)},
        {"heads", cfg.fusion.n_heads},
        {"layers", cfg.fusion.n_transform_layers},
        {"layers_concat", cfg.fusion.n_transform_layers_concat},
        {"layers_att", cfg.fusion.n_transform_layers_att},
        {"hidden", cfg.fusion.transform_hidden_dim},
        {"optimizer", cfg.optimizer == OptimizerKind::adam ? "adam" : "sgd"},
        {"lr", cfg.lr},
        {"epochs", cfg.epochs},
        {"batch", cfg.batch_size},
        {"mixup", cfg.mixup_enabled},
        {"alpha", cfg.mixup_alpha},
        {"pre_emphasis", cfg.pre_emphasis_enabled},
        {"pre_emphasis_beta", cfg.pre_emphasis_beta},
        {"input_samples", cfg.backbone.input_samples},
        {"input_channels", cfg.backbone.input_channels},
        {"filters", cfg.backbone.num_filters},
        {"blocks", cfg.backbone.num_res_blocks},
        {"code_dim", cfg.backbone.code_dim},
        {"classes", cfg.backbone.num_classes},
        {"config_hash", config_hash(cfg)},
    };
}

KernelSpec make_kernel(const std::string& kind, double c, double gamma, double coef0,
                       double tol) {
    KernelSpec spec;
    if (kind == "rbf") spec.kind = KernelKind::rbf;
    else if (kind == "sigmoid") spec.kind = KernelKind::sigmoid;
    else throw ConfigError("unknown kernel \"" + kind + "\" (want rbf|sigmoid)");
    spec.C = c;
    spec.gamma = gamma;
    spec.coef0 = coef0;
    spec.tol = tol;
    return spec;
}

// ---------------------------------------------------------------------------
// gradcheck suites

struct GradReport {
    std::string name;
    double max_rel_err = 0.0;
};

constexpr double kGradLimit = 1e-4;

TensorPtr rnd(std::vector<std::size_t> shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
    std::vector<double> d(shape_product(shape));
    for (auto& v : d) v = rng.uniform(lo, hi);
    return Tensor::create(std::move(shape), std::move(d));
}

TensorPtr rnd_separated(std::vector<std::size_t> shape, Rng& rng, double min_abs = 1e-3) {
    std::vector<double> d(shape_product(shape));
    for (auto& v : d) {
        do {
            v = rng.uniform(-1.0, 1.0);
        } while (std::abs(v) < min_abs);
    }
    return Tensor::create(std::move(shape), std::move(d));
}

std::vector<GradReport> gradcheck_ops() {
    Rng rng(2024);
    std::vector<GradReport> reports;
    auto head = [&](std::size_t d) {
        auto w = rnd({d, 1}, rng);
        auto b = Tensor::zeros({1});
        return std::make_pair(w, b);
    };

    {
        auto x = rnd({9, 2}, rng);
        auto w = rnd({3, 2, 4}, rng);
        auto b = rnd({4}, rng);
        auto [hw, hb] = head(4);
        double worst = grad_check(
            [&](const TensorPtr& in) {
                return dense(global_avg_pool(conv1d(in, w, b, 2)), hw, hb);
            },
            x);
        worst = std::max(worst, grad_check(
            [&](const TensorPtr& wp) {
                return dense(global_avg_pool(conv1d(x, wp, b, 2)), hw, hb);
            },
            w));
        worst = std::max(worst, grad_check(
            [&](const TensorPtr& bp) {
                return dense(global_avg_pool(conv1d(x, w, bp, 2)), hw, hb);
            },
            b));
        reports.push_back({"conv1d(valid)", worst});
    }
    {
        auto x = rnd({7, 2}, rng);
        auto w = rnd({3, 2, 3}, rng);
        auto b = rnd({3}, rng);
        auto [hw, hb] = head(3);
        reports.push_back({"conv1d(same)", grad_check(
            [&](const TensorPtr& in) {
                return dense(global_avg_pool(conv1d(in, w, b, 1, Padding::same)), hw, hb);
            },
            x)});
    }
    {
        auto x = rnd_separated({12}, rng);
        auto [hw, hb] = head(12);
        reports.push_back({"leaky_relu", grad_check(
            [&](const TensorPtr& in) { return dense(leaky_relu(in, 0.3), hw, hb); }, x)});
    }
    {
        auto x = rnd({6, 3}, rng);
        auto gamma = rnd({3}, rng, 0.5, 1.5);
        auto beta = rnd({3}, rng, -0.5, 0.5);
        auto [hw, hb] = head(3);
        auto via_bn = [&](const TensorPtr& in, const TensorPtr& g, const TensorPtr& be) {
            BatchNormState st(3);
            return dense(global_avg_pool(batch_norm(in, g, be, st, BnMode::train)), hw, hb);
        };
        double worst = grad_check([&](const TensorPtr& in) { return via_bn(in, gamma, beta); }, x);
        worst = std::max(worst,
                         grad_check([&](const TensorPtr& g) { return via_bn(x, g, beta); }, gamma));
        worst = std::max(worst,
                         grad_check([&](const TensorPtr& b) { return via_bn(x, gamma, b); }, beta));
        reports.push_back({"batch_norm", worst});
    }
    {
        auto x = rnd_separated({9, 2}, rng);
        auto [hw, hb] = head(2);
        reports.push_back({"max_pool1d", grad_check(
            [&](const TensorPtr& in) {
                return dense(global_avg_pool(max_pool1d(in, 3)), hw, hb);
            },
            x)});
    }
    {
        auto x = rnd_separated({5, 3}, rng);
        auto [hw, hb] = head(3);
        reports.push_back({"global_avg_pool", grad_check(
            [&](const TensorPtr& in) { return dense(global_avg_pool(in), hw, hb); }, x)});
        reports.push_back({"global_max_pool", grad_check(
            [&](const TensorPtr& in) { return dense(global_max_pool(in), hw, hb); }, x)});
    }
    {
        auto x = rnd({5}, rng);
        auto w = rnd({5, 3}, rng);
        auto b = rnd({3}, rng);
        double worst = grad_check(
            [&](const TensorPtr& in) {
                return softmax_cross_entropy(dense(in, w, b), std::size_t{1});
            },
            x);
        worst = std::max(worst, grad_check(
            [&](const TensorPtr& wp) {
                return softmax_cross_entropy(dense(x, wp, b), std::size_t{2});
            },
            w));
        reports.push_back({"dense", worst});
    }
    {
        auto x = rnd({8}, rng, -2.0, 2.0);
        auto [hw, hb] = head(8);
        reports.push_back({"softmax_segments", grad_check(
            [&](const TensorPtr& in) { return dense(softmax_segments(in, 2), hw, hb); }, x)});
    }
    {
        auto x = rnd({6}, rng, -2.0, 2.0);
        std::vector<double> soft = {0.1, 0.3, 0.15, 0.2, 0.05, 0.2};
        double worst = grad_check(
            [&](const TensorPtr& in) { return softmax_cross_entropy(in, std::size_t{3}); }, x);
        worst = std::max(
            worst, grad_check([&](const TensorPtr& in) { return softmax_cross_entropy(in, soft); },
                              x));
        reports.push_back({"softmax_cross_entropy", worst});
    }
    {
        auto m = rnd({4, 6}, rng);
        auto a = rnd({6}, rng);
        auto [hw, hb] = head(12);
        auto net = [&](const TensorPtr& mm, const TensorPtr& aa) {
            auto scaled = rowwise_mul(mm, aa);
            auto s2 = add(scaled, scale(scaled, 0.5));
            return dense(concat1d({global_avg_pool(s2), global_max_pool(s2)}), hw, hb);
        };
        double worst = grad_check([&](const TensorPtr& aa) { return net(m, aa); }, a);
        worst = std::max(worst, grad_check([&](const TensorPtr& mm) { return net(mm, a); }, m));
        reports.push_back({"rowwise_mul/add/scale/concat", worst});
    }
    return reports;
}

std::vector<GradReport> gradcheck_backbone() {
    std::vector<GradReport> reports;
    BackboneConfig cfg;
    cfg.input_samples = 96;
    cfg.input_channels = 1;
    cfg.front_filter_len = 12;
    cfg.num_filters = 4;
    cfg.num_res_blocks = 1;
    cfg.code_dim = 3;
    cfg.num_classes = 2;
    Rng rng(7);
    Backbone bb(cfg, rng);
    auto x = rnd({96, 1}, rng, -0.8, 0.8);

    reports.push_back({"backbone(wrt input)", grad_check(
        [&](const TensorPtr& in) {
            return softmax_cross_entropy(bb.forward(in, BnMode::train).logits, std::size_t{1});
        },
        x)});
    reports.push_back({"backbone(wrt conv weight)", grad_check(
        [&](const TensorPtr& w) {
            auto saved = bb.blocks[0].conv1.weight;
            bb.blocks[0].conv1.weight = w;
            auto loss =
                softmax_cross_entropy(bb.forward(x, BnMode::train).logits, std::size_t{0});
            bb.blocks[0].conv1.weight = saved;
            return loss;
        },
        bb.blocks[0].conv1.weight)});
    reports.push_back({"residual_block", grad_check(
        [&](const TensorPtr& in) {
            auto y = bb.residual_block(in, bb.blocks[0], BnMode::train);
            auto w = Tensor::full({cfg.num_filters, 1}, 0.3);
            return dense(global_avg_pool(y), w, Tensor::zeros({1}));
        },
        rnd({12, cfg.num_filters}, rng))});
    return reports;
}

std::vector<GradReport> gradcheck_fusion() {
    std::vector<GradReport> reports;
    Rng rng(13);
    const std::size_t c = 6, f = 8, h = 2, t = 3;

    {
        auto stack = make_attention_stack(c, 2, 10, f, 0.3, rng);
        auto m = rnd({t, f}, rng);
        auto hw = rnd({2 * f, 1}, rng);
        auto hb = Tensor::zeros({1});
        auto tag = rnd({c}, rng, 0.0, 1.0);
        auto net_tag = [&](const TensorPtr& tg) {
            auto a = attention_map(tg, stack, h);
            auto mp = apply_attention(m, a);
            return dense(concat1d({global_avg_pool(mp), global_max_pool(mp)}), hw, hb);
        };
        double worst = grad_check(net_tag, tag);
        auto net_map = [&](const TensorPtr& mm) {
            auto a = attention_map(tag, stack, h);
            auto mp = apply_attention(mm, a);
            return dense(concat1d({global_avg_pool(mp), global_max_pool(mp)}), hw, hb);
        };
        worst = std::max(worst, grad_check(net_map, m));
        auto net_w = [&](const TensorPtr& w) {
            auto saved = stack.layers[0].weight;
            stack.layers[0].weight = w;
            auto a = attention_map(tag, stack, h);
            stack.layers[0].weight = saved;
            auto mp = apply_attention(m, a);
            return dense(concat1d({global_avg_pool(mp), global_max_pool(mp)}), hw, hb);
        };
        worst = std::max(worst, grad_check(net_w, stack.layers[0].weight));
        reports.push_back({"attention_map+apply_attention", worst});
    }
    {
        BeforeCodeParams params;
        params.transform = make_tag_transform(c, 2, 10, 10, 0.3, rng);
        params.code_fc = make_dense(2 * f + 10, 4, rng);
        auto pooled = rnd({2 * f}, rng);
        auto hw = rnd({4, 1}, rng);
        auto hb = Tensor::zeros({1});
        reports.push_back({"fuse_before_code", grad_check(
            [&](const TensorPtr& tg) {
                return dense(fuse_before_code(pooled, tg, params), hw, hb);
            },
            rnd({c}, rng, 0.0, 1.0))});
    }
    {
        CombinedParams params;
        params.shared = true;
        params.heads = h;
        params.shared_stack = make_attention_stack(c, 3, 10, f, 0.3, rng);
        params.code_fc = make_dense(2 * f + f, 4, rng);
        auto m = rnd({t, f}, rng);
        auto hw = rnd({4, 1}, rng);
        auto hb = Tensor::zeros({1});
        reports.push_back({"fuse_combined(shared)", grad_check(
            [&](const TensorPtr& tg) {
                return dense(fuse_combined(m, tg, params).code, hw, hb);
            },
            rnd({c}, rng, 0.0, 1.0))});

        CombinedParams sep;
        sep.shared = false;
        sep.heads = h;
        sep.concat_stack = make_tag_transform(c, 2, 10, 10, 0.3, rng);
        sep.att_stack = make_attention_stack(c, 0, 10, f, 0.3, rng);
        sep.code_fc = make_dense(2 * f + 10, 4, rng);
        reports.push_back({"fuse_combined(separate)", grad_check(
            [&](const TensorPtr& tg) {
                return dense(fuse_combined(m, tg, sep).code, hw, hb);
            },
            rnd({c}, rng, 0.0, 1.0))});
    }
    {
        auto tag = rnd({c}, rng, 0.0, 1.0);
        auto hw = rnd({4 + c, 1}, rng);
        auto hb = Tensor::zeros({1});
        reports.push_back({"fuse_codecat", grad_check(
            [&](const TensorPtr& code) { return dense(fuse_codecat(code, tag), hw, hb); },
            rnd({4}, rng))});
    }
    return reports;
}

int run_gradcheck(const std::string& scope, bool inject_bug) {
    debug::corrupt_leaky_relu_backward = inject_bug;
    std::vector<GradReport> reports;
    if (scope == "ops") reports = gradcheck_ops();
    else if (scope == "backbone") reports = gradcheck_backbone();
    else if (scope == "fusion") reports = gradcheck_fusion();
    else throw ConfigError("unknown gradcheck scope \"" + scope + "\" (want ops|backbone|fusion)");

    bool all_ok = true;
    const GradReport* worst = nullptr;
    for (const auto& r : reports) {
        const bool ok = r.max_rel_err < kGradLimit;
        all_ok = all_ok && ok;
        if (!worst || r.max_rel_err > worst->max_rel_err) worst = &r;
        std::printf("%-32s max_rel_err=%.3e  %s\n", r.name.c_str(), r.max_rel_err,
                    ok ? "ok" : "FAIL");
    }
    if (worst) {
        std::printf("worst offender: %s (max_rel_err=%.3e, limit %.0e)\n", worst->name.c_str(),
                    worst->max_rel_err, kGradLimit);
    }
    std::printf("gradcheck %s: %s\n", scope.c_str(), all_ok ? "PASS" : "FAIL");
    debug::corrupt_leaky_relu_backward = false;
    return all_ok ? 0 : 1;
}

// ---------------------------------------------------------------------------
// subcommand bodies

int cmd_synth(const std::string& spec_path, const std::string& out_flag, long seed_override) {
    SynthSpec spec;
    if (!spec_path.empty()) spec = load_synth_spec(spec_path);
    if (seed_override >= 0) spec.seed = static_cast<std::uint64_t>(seed_override);
    const std::string out_dir = resolve_out(out_flag, "synth");
    std::printf("seed: %llu\n", static_cast<unsigned long long>(spec.seed));

    auto ds = generate_synthetic(spec);
    write_synth_dataset(out_dir, ds);

    json cfg = {{"num_scenes", spec.num_scenes},
                {"num_event_types", spec.num_event_types},
                {"train_per_scene", spec.train_per_scene},
                {"test_per_scene", spec.test_per_scene},
                {"duration_samples", spec.duration_samples},
                {"noise_level", spec.noise_level},
                {"char_prob", spec.char_prob},
                {"background_prob", spec.background_prob},
                {"tag_blur", spec.tag_blur}};
    append_manifest(out_dir, "synth", spec.seed, cfg,
                    spec_path.empty() ? std::vector<std::string>{} : std::vector<std::string>{spec_path},
                    {out_dir + "/train_metadata.txt", out_dir + "/test_metadata.txt",
                     out_dir + "/tags.txt", out_dir + "/audio"});
    std::printf("wrote %zu train + %zu test recordings to %s\n", ds.train.size(), ds.test.size(),
                out_dir.c_str());
    return 0;
}

int cmd_train(const std::string& data_dir, const std::string& out_flag, const TrainFlags& flags) {
    const std::string out_dir = resolve_out(out_flag, "train");
    const bool needs_tags = fusion_mode_from_name(flags.fusion) != FusionMode::none;
    auto ds = load_dataset_dir(data_dir, needs_tags);
    auto cfg = make_train_config(flags, ds);
    std::printf("seed: %llu\n", static_cast<unsigned long long>(cfg.seed));

    auto trained = train(ds.train, ds.tags, cfg);
    fs::create_directories(out_dir);
    const std::string ckpt = (fs::path(out_dir) / "model.ckpt").string();
    save_checkpoint(ckpt, *trained.model);

    std::ofstream losses(fs::path(out_dir) / "loss_history.txt");
    for (std::size_t e = 0; e < trained.loss_history.size(); ++e) {
        losses << e + 1 << ' ' << trained.loss_history[e] << '\n';
    }

    append_manifest(out_dir, "train", cfg.seed, config_json(cfg), {data_dir},
                    {ckpt, out_dir + "/loss_history.txt"});
    std::printf("final epoch loss: %.6f\n", trained.loss_history.back());
    std::printf("checkpoint: %s\n", ckpt.c_str());
    return 0;
}

int cmd_extract(const std::string& model_path, const std::string& data_dir,
                const std::string& split, const std::string& out_flag, const TrainFlags& flags) {
    auto model = load_checkpoint(model_path);
    const bool needs_tags = model->fusion_config().uses_tags();
    auto ds = load_dataset_dir(data_dir, needs_tags);
    const auto& recs = split == "train" ? ds.train : ds.test;
    if (recs.empty()) throw DataError("no recordings in split \"" + split + "\"");

    TrainConfig cfg;
    cfg.backbone = model->backbone_config();
    cfg.fusion = model->fusion_config();
    cfg.pre_emphasis_enabled = !flags.no_pre_emphasis;
    cfg.pre_emphasis_beta = flags.pre_emphasis_beta;

    const std::string out_dir = resolve_out(out_flag, "extract");
    fs::create_directories(out_dir);
    auto codes = extract_codes(*model, recs, ds.tags, cfg, ds.class_names);
    const std::string codes_path = (fs::path(out_dir) / ("codes_" + split + ".txt")).string();
    save_codes(codes_path, codes);

    append_manifest(out_dir, "extract", 0, {{"split", split}, {"dim", codes.dim}},
                    {model_path, data_dir}, {codes_path});
    std::printf("wrote %zu codes of dim %zu to %s\n", codes.rows.size(), codes.dim,
                codes_path.c_str());
    return 0;
}

int cmd_fit_svm(const std::string& codes_path, const std::string& out_flag,
                const std::string& kernel_kind, double c, double gamma, double coef0, double tol) {
    auto codes = load_codes(codes_path);
    auto spec = make_kernel(kernel_kind, c, gamma, coef0, tol);
    auto svm = fit_svm(codes, spec);

    const std::string out_dir = resolve_out(out_flag, "fit-svm");
    fs::create_directories(out_dir);
    const std::string model_path = (fs::path(out_dir) / "svm_model.txt").string();
    save_svm(model_path, svm);

    std::size_t n_sv = 0;
    bool all_converged = true;
    for (const auto& bin : svm.per_class) {
        n_sv += bin.support_vectors.size();
        all_converged = all_converged && bin.converged;
    }
    append_manifest(out_dir, "fit-svm", 0,
                    {{"kernel", kernel_kind}, {"C", c}, {"gamma", gamma}, {"coef0", coef0},
                     {"tol", tol}, {"converged", all_converged}},
                    {codes_path}, {model_path});
    std::printf("svm: %zu classes, %zu support vectors, converged=%s\n", svm.num_classes, n_sv,
                all_converged ? "true" : "false");
    std::printf("model: %s\n", model_path.c_str());
    return 0;
}

int cmd_eval(const std::string& model_path, const std::string& svm_path,
             const std::string& data_dir, const std::string& split, const std::string& out_flag,
             const TrainFlags& flags) {
    auto model = load_checkpoint(model_path);
    auto svm = load_svm(svm_path);
    auto ds = load_dataset_dir(data_dir, model->fusion_config().uses_tags());
    const auto& recs = split == "train" ? ds.train : ds.test;
    if (recs.empty()) throw DataError("no recordings in split \"" + split + "\"");

    TrainConfig cfg;
    cfg.backbone = model->backbone_config();
    cfg.fusion = model->fusion_config();
    cfg.pre_emphasis_enabled = !flags.no_pre_emphasis;
    cfg.pre_emphasis_beta = flags.pre_emphasis_beta;

    auto result = evaluate(*model, svm, recs, ds.tags, cfg, ds.class_names);

    std::printf("confusion matrix (rows = truth, cols = prediction):\n");
    for (std::size_t r = 0; r < result.confusion.size(); ++r) {
        std::printf("  %-12s", ds.class_names[r].c_str());
        for (std::size_t p = 0; p < result.confusion[r].size(); ++p) {
            std::printf(" %4zu", result.confusion[r][p]);
        }
        std::printf("\n");
    }
    if (!out_flag.empty()) {
        const std::string out_dir = resolve_out(out_flag, "eval");
        fs::create_directories(out_dir);
        const std::string report = (fs::path(out_dir) / "accuracy.txt").string();
        std::ofstream rep(report);
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%.2f", result.accuracy);
        rep << buf << "\n";
        append_manifest(out_dir, "eval", 0, {{"split", split}},
                        {model_path, svm_path, data_dir}, {report});
    }
    std::printf("accuracy: %.2f\n", result.accuracy);
    return 0;
}

int cmd_grid(const std::string& mirror, const std::string& data_dir, const std::string& out_flag,
             const std::string& kernel_kind, double c, double gamma, double coef0, double tol,
             TrainFlags flags) {
    auto axes = mirror_axes(mirror);
    auto ds = load_dataset_dir(data_dir, true);
    flags.fusion = fusion_mode_name(axes.mode);
    if (flags.filters == 0) flags.filters = 32;  // every mirror head count divides 32
    auto base = make_train_config(flags, ds);
    auto kernel = make_kernel(kernel_kind, c, gamma, coef0, tol);
    std::printf("seed: %llu\n", static_cast<unsigned long long>(base.seed));

    auto grid = run_grid(axes, base, kernel, ds.train, ds.test, ds.tags, ds.class_names);

    const std::string out_dir = resolve_out(out_flag, "grid");
    fs::create_directories(out_dir);
    const std::string table_path = (fs::path(out_dir) / ("grid_" + mirror + ".txt")).string();
    const std::string cells_path = (fs::path(out_dir) / ("grid_" + mirror + ".jsonl")).string();

    const std::string table = render_grid_table(grid);
    {
        std::ofstream t(table_path);
        t << table;
    }
    {
        std::ofstream cells(cells_path);
        for (const auto& cell : grid.cells) {
            json obj = {{"row", cell.row_label},
                        {"col", cell.col_label},
                        {"mode", fusion_mode_name(cell.fusion.mode)},
                        {"seed", cell.seed},
                        {"accuracy", cell.accuracy},
                        {"wall_seconds", cell.wall_seconds},
                        {"config_hash", cell.config_hash},
                        {"ok", cell.ok}};
            if (!cell.ok) obj["error"] = cell.error;
            cells << obj.dump() << "\n";
        }
    }
    append_manifest(out_dir, "grid", base.seed,
                    {{"mirror", mirror}, {"kernel", kernel_kind},
                     {"rows", grid.row_labels.size()}, {"cols", grid.col_labels.size()}},
                    {data_dir}, {table_path, cells_path});
    std::printf("%s", table.c_str());
    std::printf("grid: %zu x %zu cells -> %s\n", grid.row_labels.size(), grid.col_labels.size(),
                table_path.c_str());
    return 0;
}

int cmd_inspect(const std::string& path) {
    if (fs::is_directory(path)) {
        auto ds = load_dataset_dir(path, false);
        std::printf("dataset directory: %s\n", path.c_str());
        std::printf("  train recordings: %zu\n", ds.train.size());
        std::printf("  test recordings:  %zu\n", ds.test.size());
        std::printf("  scene classes (%zu):", ds.class_names.size());
        for (const auto& n : ds.class_names) std::printf(" %s", n.c_str());
        std::printf("\n  tag vectors: %zu (dim %zu)\n", ds.tags.entries.size(), ds.tags.tag_dim);
        if (!ds.train.empty()) {
            std::printf("  waveform: %zu samples x %zu ch @ %zu Hz\n", ds.train[0].num_samples,
                        ds.train[0].channels, ds.train[0].sample_rate);
        }
        return 0;
    }

    std::ifstream probe(path, std::ios::binary);
    if (!probe) throw DataError("cannot open " + path);
    std::string head(12, '\0');
    probe.read(head.data(), 12);

    if (head.rfind("TASC0001", 0) == 0) {
        auto model = load_checkpoint(path);
        const auto& b = model->backbone_config();
        const auto& f = model->fusion_config();
        std::printf("checkpoint: %s\n", path.c_str());
        std::printf("  backbone: input (%zu, %zu), f=%zu, blocks=%zu, code=%zu, classes=%zu\n",
                    b.input_samples, b.input_channels, b.num_filters, b.num_res_blocks,
                    b.code_dim, b.num_classes);
        std::printf("  fusion: %s (heads=%zu, layers=%zu, concat/att=%zu/%zu, hidden=%zu)\n",
                    fusion_mode_name(f.mode).c_str(), f.n_heads, f.n_transform_layers,
                    f.n_transform_layers_concat, f.n_transform_layers_att,
                    f.transform_hidden_dim);
        std::size_t n = 0;
        for (const auto& p : model->parameters()) n += p->size();
        std::printf("  parameters: %zu (tag dim %zu)\n", n, model->tag_dim());
        return 0;
    }
    if (head.rfind("tagasc-svm", 0) == 0) {
        auto svm = load_svm(path);
        std::printf("svm model: %s\n", path.c_str());
        std::printf("  kernel: %s gamma=%g coef0=%g C=%g tol=%g\n",
                    svm.spec.kind == KernelKind::rbf ? "rbf" : "sigmoid", svm.spec.gamma,
                    svm.spec.coef0, svm.spec.C, svm.spec.tol);
        std::printf("  classes (%zu):", svm.num_classes);
        for (const auto& name : svm.class_names) std::printf(" %s", name.c_str());
        std::printf("\n  dim: %zu, training ids: %zu\n", svm.dim, svm.training_ids.size());
        for (std::size_t k = 0; k < svm.per_class.size(); ++k) {
            std::printf("  class %zu: %zu support vectors, bias %.6f, converged=%s\n", k,
                        svm.per_class[k].support_vectors.size(), svm.per_class[k].bias,
                        svm.per_class[k].converged ? "true" : "false");
        }
        return 0;
    }
    if (head.rfind("tagasc-codes", 0) == 0) {
        auto codes = load_codes(path);
        std::printf("codes file: %s\n", path.c_str());
        std::printf("  %zu rows x dim %zu, %zu classes\n", codes.rows.size(), codes.dim,
                    codes.class_names.size());
        return 0;
    }
    throw DataError("unrecognized file format: " + path);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"tag-vector fusion for acoustic scene classification"};
    app.require_subcommand(1);

    // synth
    auto* synth = app.add_subcommand("synth", "generate a synthetic scene/event dataset");
    std::string synth_spec, synth_out;
    long synth_seed = -1;
    synth->add_option("--spec", synth_spec, "SynthSpec key=value file");
    synth->add_option("--out", synth_out, "output dataset directory");
    synth->add_option("--seed", synth_seed, "override the spec seed");

    // train
    auto* train_cmd = app.add_subcommand("train", "train backbone + fusion on a dataset");
    std::string train_data, train_out;
    TrainFlags train_flags;
    train_cmd->add_option("--data", train_data, "dataset directory")->required();
    train_cmd->add_option("--out", train_out, "output directory");
    add_train_flags(train_cmd, train_flags, true);

    // extract
    auto* extract = app.add_subcommand("extract", "extract codes with a trained checkpoint");
    std::string ex_model, ex_data, ex_split = "test", ex_out;
    TrainFlags ex_flags;
    extract->add_option("--model", ex_model, "checkpoint path")->required();
    extract->add_option("--data", ex_data, "dataset directory")->required();
    extract->add_option("--split", ex_split, "train|test");
    extract->add_option("--out", ex_out, "output directory");
    extract->add_flag("--no-pre-emphasis", ex_flags.no_pre_emphasis, "feed raw waveforms");
    extract->add_option("--pre-emphasis-beta", ex_flags.pre_emphasis_beta,
                        "pre-emphasis coefficient");

    // fit-svm
    auto* fit = app.add_subcommand("fit-svm", "fit the one-vs-rest SVM back-end on codes");
    std::string fit_codes, fit_out, fit_kernel = "rbf";
    double fit_c = 1.0, fit_gamma = 0.0, fit_coef0 = 0.0, fit_tol = 1e-3;
    fit->add_option("--codes", fit_codes, "codes file from extract")->required();
    fit->add_option("--out", fit_out, "output directory");
    fit->add_option("--kernel", fit_kernel, "rbf|sigmoid");
    fit->add_option("--svm-c", fit_c, "box constraint C");
    fit->add_option("--gamma", fit_gamma, "kernel gamma (0 = 1/dim)");
    fit->add_option("--coef0", fit_coef0, "sigmoid coef0");
    fit->add_option("--tol", fit_tol, "KKT tolerance");

    // eval
    auto* eval_cmd = app.add_subcommand("eval", "evaluate checkpoint + svm on a dataset split");
    std::string ev_model, ev_svm, ev_data, ev_split = "test", ev_out;
    TrainFlags ev_flags;
    eval_cmd->add_option("--model", ev_model, "checkpoint path")->required();
    eval_cmd->add_option("--svm", ev_svm, "svm model path")->required();
    eval_cmd->add_option("--data", ev_data, "dataset directory")->required();
    eval_cmd->add_option("--split", ev_split, "train|test");
    eval_cmd->add_option("--out", ev_out, "optional report directory");
    eval_cmd->add_flag("--no-pre-emphasis", ev_flags.no_pre_emphasis, "feed raw waveforms");
    eval_cmd->add_option("--pre-emphasis-beta", ev_flags.pre_emphasis_beta,
                         "pre-emphasis coefficient");

    // grid
    auto* grid_cmd = app.add_subcommand("grid", "run an experiment grid mirroring the tables");
    std::string gr_mirror, gr_data, gr_out, gr_kernel = "rbf";
    double gr_c = 1.0, gr_gamma = 0.0, gr_coef0 = 0.0, gr_tol = 1e-3;
    TrainFlags gr_flags;
    grid_cmd->add_option("--mirror", gr_mirror, "table3|table4|table5")->required();
    grid_cmd->add_option("--data", gr_data, "dataset directory")->required();
    grid_cmd->add_option("--out", gr_out, "output directory");
    grid_cmd->add_option("--kernel", gr_kernel, "rbf|sigmoid");
    grid_cmd->add_option("--svm-c", gr_c, "box constraint C");
    grid_cmd->add_option("--gamma", gr_gamma, "kernel gamma (0 = 1/dim)");
    grid_cmd->add_option("--coef0", gr_coef0, "sigmoid coef0");
    grid_cmd->add_option("--tol", gr_tol, "KKT tolerance");
    add_train_flags(grid_cmd, gr_flags, false);

    // gradcheck
    auto* gc = app.add_subcommand("gradcheck", "finite-difference gradient verification");
    std::string gc_scope = "ops";
    bool gc_bug = false;
    gc->add_option("--scope", gc_scope, "ops|backbone|fusion");
    gc->add_flag("--inject-backward-bug", gc_bug,
                 "negative control: corrupt one backward rule");

    // inspect
    auto* inspect = app.add_subcommand("inspect", "describe a checkpoint/svm/codes/dataset");
    std::string in_path;
    inspect->add_option("--path", in_path, "file or dataset directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    try {
        if (synth->parsed()) return cmd_synth(synth_spec, synth_out, synth_seed);
        if (train_cmd->parsed()) {
            apply_config_file(train_cmd, train_flags);
            return cmd_train(train_data, train_out, train_flags);
        }
        if (extract->parsed()) return cmd_extract(ex_model, ex_data, ex_split, ex_out, ex_flags);
        if (fit->parsed()) {
            return cmd_fit_svm(fit_codes, fit_out, fit_kernel, fit_c, fit_gamma, fit_coef0,
                               fit_tol);
        }
        if (eval_cmd->parsed()) {
            return cmd_eval(ev_model, ev_svm, ev_data, ev_split, ev_out, ev_flags);
        }
        if (grid_cmd->parsed()) {
            apply_config_file(grid_cmd, gr_flags);
            return cmd_grid(gr_mirror, gr_data, gr_out, gr_kernel, gr_c, gr_gamma, gr_coef0,
                            gr_tol, gr_flags);
        }
        if (gc->parsed()) return run_gradcheck(gc_scope, gc_bug);
        if (inspect->parsed()) return cmd_inspect(in_path);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const DimensionError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const ParseError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}
