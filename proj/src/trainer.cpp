#include "tagasc/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

namespace tagasc {

void TrainConfig::validate() const {
    if (epochs == 0) throw ConfigError("train: epochs must be positive");
    if (batch_size == 0) throw ConfigError("train: batch size must be positive");
    if (!(lr >= 0.0)) throw ConfigError("train: learning rate must be >= 0");
    if (mixup_enabled && !(mixup_alpha > 0.0)) {
        throw ConfigError("train: mixup alpha must be positive");
    }
    backbone.validate();
    // tag_dim checked at train time when the table is known
}

namespace {

// Waveform as fed to the network: optional pre-emphasis, then shape check.
std::vector<double> prepared_samples(const Recording& rec, const TrainConfig& cfg) {
    const Recording* src = &rec;
    Recording tmp;
    if (cfg.pre_emphasis_enabled) {
        tmp = pre_emphasis(rec, cfg.pre_emphasis_beta);
        src = &tmp;
    }
    if (src->num_samples != cfg.backbone.input_samples ||
        src->channels != cfg.backbone.input_channels) {
        throw DimensionError("train: recording \"" + rec.id + "\" has shape (" +
                             std::to_string(src->num_samples) + ", " +
                             std::to_string(src->channels) + "), backbone wants (" +
                             std::to_string(cfg.backbone.input_samples) + ", " +
                             std::to_string(cfg.backbone.input_channels) + ")");
    }
    return src->samples;
}

struct AdamState {
    std::vector<std::vector<double>> m, v;
    std::size_t t = 0;
};

void optimizer_step(const TrainConfig& cfg, std::vector<TensorPtr>& params, AdamState& adam) {
    if (cfg.optimizer == OptimizerKind::sgd) {
        for (auto& p : params) {
            if (p->grad.empty()) continue;
            for (std::size_t i = 0; i < p->size(); ++i) p->data[i] -= cfg.lr * p->grad[i];
        }
        return;
    }
    if (adam.m.empty()) {
        adam.m.resize(params.size());
        adam.v.resize(params.size());
        for (std::size_t i = 0; i < params.size(); ++i) {
            adam.m[i].assign(params[i]->size(), 0.0);
            adam.v[i].assign(params[i]->size(), 0.0);
        }
    }
    ++adam.t;
    const double bc1 = 1.0 - std::pow(cfg.adam_beta1, static_cast<double>(adam.t));
    const double bc2 = 1.0 - std::pow(cfg.adam_beta2, static_cast<double>(adam.t));
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto& p = *params[i];
        if (p.grad.empty()) continue;
        for (std::size_t j = 0; j < p.size(); ++j) {
            const double g = p.grad[j];
            adam.m[i][j] = cfg.adam_beta1 * adam.m[i][j] + (1.0 - cfg.adam_beta1) * g;
            adam.v[i][j] = cfg.adam_beta2 * adam.v[i][j] + (1.0 - cfg.adam_beta2) * g * g;
            const double mhat = adam.m[i][j] / bc1;
            const double vhat = adam.v[i][j] / bc2;
            p.data[j] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.adam_eps);
        }
    }
}

const TagVector& require_tag(const TagTable& tags, const std::string& id) {
    const TagVector* tv = tags.find(id);
    if (!tv) throw DataError("missing tag vector for id \"" + id + "\"");
    return *tv;
}

}  // namespace

TrainedModel train(const std::vector<Recording>& train_set, const TagTable& tags,
                   const TrainConfig& cfg) {
    cfg.validate();
    if (train_set.empty()) throw DataError("train: empty training set");

    const bool needs_tags = cfg.fusion.uses_tags();
    const std::size_t tag_dim = needs_tags ? tags.tag_dim : 0;
    cfg.fusion.validate(cfg.backbone.num_filters, tag_dim);

    // materialize inputs once; ids must resolve to tags up front
    std::vector<std::vector<double>> waves;
    std::vector<std::size_t> labels;
    std::vector<const std::vector<double>*> tag_values(train_set.size(), nullptr);
    for (std::size_t i = 0; i < train_set.size(); ++i) {
        const auto& rec = train_set[i];
        if (!rec.scene_label) throw DataError("train: recording \"" + rec.id + "\" has no label");
        if (*rec.scene_label >= cfg.backbone.num_classes) {
            throw DataError("train: label out of range for \"" + rec.id + "\"");
        }
        waves.push_back(prepared_samples(rec, cfg));
        labels.push_back(*rec.scene_label);
        if (needs_tags) tag_values[i] = &require_tag(tags, rec.id).values;
    }

    Rng rng(cfg.seed);
    TrainedModel out;
    out.model = std::make_unique<FusedModel>(cfg.backbone, cfg.fusion, tag_dim, rng);
    auto params = out.model->parameters();
    AdamState adam;

    const std::size_t n = train_set.size();
    const std::vector<std::size_t> wave_shape = {cfg.backbone.input_samples,
                                                 cfg.backbone.input_channels};
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::vector<std::size_t> order(n);
        for (std::size_t i = 0; i < n; ++i) order[i] = i;
        rng.shuffle(order);

        double epoch_loss = 0.0;
        for (std::size_t start = 0; start < n; start += cfg.batch_size) {
            const std::size_t stop = std::min(n, start + cfg.batch_size);
            const double inv_batch = 1.0 / static_cast<double>(stop - start);
            for (auto& p : params) p->zero_grad();

            for (std::size_t bi = start; bi < stop; ++bi) {
                const std::size_t i = order[bi];
                TensorPtr wave;
                std::vector<double> soft_label(cfg.backbone.num_classes, 0.0);
                TensorPtr tag;

                if (cfg.mixup_enabled) {
                    const std::size_t j = order[rng.below(n)];
                    const double lambda = rng.beta(cfg.mixup_alpha, cfg.mixup_alpha);
                    std::vector<double> mixed(waves[i].size());
                    for (std::size_t k = 0; k < mixed.size(); ++k) {
                        mixed[k] = lambda * waves[i][k] + (1.0 - lambda) * waves[j][k];
                    }
                    wave = Tensor::create(wave_shape, std::move(mixed));
                    soft_label[labels[i]] += lambda;
                    soft_label[labels[j]] += 1.0 - lambda;
                    if (needs_tags) {
                        std::vector<double> mixed_tag(tag_dim);
                        for (std::size_t k = 0; k < tag_dim; ++k) {
                            mixed_tag[k] = lambda * (*tag_values[i])[k] +
                                           (1.0 - lambda) * (*tag_values[j])[k];
                        }
                        tag = Tensor::vec(std::move(mixed_tag));
                    }
                } else {
                    wave = Tensor::create(wave_shape, waves[i]);
                    soft_label[labels[i]] = 1.0;
                    if (needs_tags) tag = Tensor::vec(*tag_values[i]);
                }

                auto fwd = out.model->forward(wave, tag, BnMode::train);
                auto loss = softmax_cross_entropy(fwd.logits, soft_label);
                epoch_loss += loss->item();
                loss->backward(inv_batch);
            }
            optimizer_step(cfg, params, adam);
        }
        out.loss_history.push_back(epoch_loss / static_cast<double>(n));
    }
    return out;
}

CodeSet extract_codes(FusedModel& model, const std::vector<Recording>& recordings,
                      const TagTable& tags, const TrainConfig& cfg,
                      const std::vector<std::string>& class_names) {
    NoGradGuard ng;
    CodeSet out;
    out.class_names = class_names;
    out.dim = fused_code_dim(cfg.backbone, model.fusion_config(),
                             model.fusion_config().uses_tags() ? tags.tag_dim : 0);
    const std::vector<std::size_t> wave_shape = {cfg.backbone.input_samples,
                                                 cfg.backbone.input_channels};
    const bool needs_tags = model.fusion_config().uses_tags();
    for (const auto& rec : recordings) {
        if (!rec.scene_label) throw DataError("extract: recording \"" + rec.id + "\" has no label");
        auto wave = Tensor::create(wave_shape, prepared_samples(rec, cfg));
        TensorPtr tag;
        if (needs_tags) tag = Tensor::vec(require_tag(tags, rec.id).values);
        auto fwd = model.forward(wave, tag, BnMode::infer);
        for (double v : fwd.final_code->data) {
            if (!std::isfinite(v)) {
                throw DataError("extract: non-finite code value for \"" + rec.id + "\"");
            }
        }
        out.rows.push_back({rec.id, *rec.scene_label, fwd.final_code->data});
    }
    return out;
}

namespace {

std::string fmt17(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace

void save_codes(const std::string& path, const CodeSet& codes) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write codes file: " + path);
    out << "tagasc-codes 1\n";
    out << "classes " << codes.class_names.size() << " dim " << codes.dim << " count "
        << codes.rows.size() << "\n";
    out << "labels";
    for (const auto& n : codes.class_names) out << ' ' << n;
    out << "\n";
    for (const auto& row : codes.rows) {
        out << row.id << ' ' << codes.class_names.at(row.label);
        for (double v : row.values) out << ' ' << fmt17(v);
        out << "\n";
    }
}

CodeSet load_codes(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open codes file: " + path);
    std::string word;
    in >> word;
    if (word != "tagasc-codes") throw ParseError(path + ": not a tagasc codes file");
    int version;
    in >> version;
    if (version != 1) throw ParseError(path + ": unsupported version");
    auto expect = [&](const char* tok) {
        in >> word;
        if (word != tok) throw ParseError(path + ": expected \"" + std::string(tok) + "\"");
    };
    CodeSet codes;
    std::size_t n_classes, count;
    expect("classes");
    in >> n_classes;
    expect("dim");
    in >> codes.dim;
    expect("count");
    in >> count;
    expect("labels");
    codes.class_names.resize(n_classes);
    for (auto& name : codes.class_names) in >> name;
    for (std::size_t r = 0; r < count; ++r) {
        CodeRow row;
        std::string label;
        in >> row.id >> label;
        const auto it = std::find(codes.class_names.begin(), codes.class_names.end(), label);
        if (it == codes.class_names.end()) {
            throw ParseError(path + ": unknown label \"" + label + "\" in row " +
                             std::to_string(r + 1));
        }
        row.label = static_cast<std::size_t>(it - codes.class_names.begin());
        row.values.resize(codes.dim);
        for (auto& v : row.values) {
            if (!(in >> v)) throw ParseError(path + ": truncated code row " + std::to_string(r + 1));
        }
        codes.rows.push_back(std::move(row));
    }
    if (!in) throw ParseError(path + ": truncated codes file");
    return codes;
}

SvmModel fit_svm(const CodeSet& codes, const KernelSpec& spec) {
    if (codes.rows.empty()) throw DataError("fit_svm: empty code set");
    std::vector<std::vector<double>> x;
    std::vector<std::size_t> y;
    std::vector<std::string> ids;
    for (const auto& row : codes.rows) {
        x.push_back(row.values);
        y.push_back(row.label);
        ids.push_back(row.id);
    }
    return train_ovr(x, y, codes.class_names.size(), spec, codes.class_names, std::move(ids));
}

EvalResult evaluate_codes(const SvmModel& svm, const CodeSet& test_codes) {
    if (test_codes.rows.empty()) throw DataError("evaluate: empty test set");
    std::set<std::string> train_ids(svm.training_ids.begin(), svm.training_ids.end());
    std::vector<std::string> overlap;
    for (const auto& row : test_codes.rows) {
        if (train_ids.count(row.id)) overlap.push_back(row.id);
    }
    if (!overlap.empty()) {
        std::ostringstream msg;
        msg << "evaluate: train/test overlap on " << overlap.size() << " id(s):";
        for (std::size_t i = 0; i < overlap.size() && i < 8; ++i) msg << ' ' << overlap[i];
        throw DataError(msg.str());
    }

    EvalResult result;
    const std::size_t k = svm.num_classes;
    result.confusion.assign(k, std::vector<std::size_t>(k, 0));
    std::size_t correct = 0;
    for (const auto& row : test_codes.rows) {
        if (row.label >= k) {
            throw DataError("evaluate: label index " + std::to_string(row.label) +
                            " for \"" + row.id + "\" exceeds the model's " + std::to_string(k) +
                            " classes");
        }
        const std::size_t pred = predict(svm, row.values);
        result.confusion[row.label][pred] += 1;
        if (pred == row.label) ++correct;
    }
    result.accuracy =
        100.0 * static_cast<double>(correct) / static_cast<double>(test_codes.rows.size());
    return result;
}

EvalResult evaluate(FusedModel& model, const SvmModel& svm,
                    const std::vector<Recording>& test_set, const TagTable& tags,
                    const TrainConfig& cfg, const std::vector<std::string>& class_names) {
    auto codes = extract_codes(model, test_set, tags, cfg, class_names);
    return evaluate_codes(svm, codes);
}

PipelineResult run_pipeline(const std::vector<Recording>& train_set,
                            const std::vector<Recording>& test_set, const TagTable& tags,
                            const TrainConfig& cfg, const KernelSpec& kernel,
                            const std::vector<std::string>& class_names) {
    PipelineResult out;
    out.trained = train(train_set, tags, cfg);
    auto train_codes = extract_codes(*out.trained.model, train_set, tags, cfg, class_names);
    out.svm = fit_svm(train_codes, kernel);
    out.eval = evaluate(*out.trained.model, out.svm, test_set, tags, cfg, class_names);
    return out;
}

GridAxes mirror_axes(const std::string& mirror) {
    GridAxes axes;
    if (mirror == "table3") {
        axes.mode = FusionMode::attention;
        axes.heads = {2, 4, 8, 16, 32};
        axes.depths = {0, 1, 2, 3};
    } else if (mirror == "table4") {
        axes.mode = FusionMode::combined_separate;
        axes.heads = {2, 4};
        axes.depth_pairs = {{3, 3}, {3, 4}, {4, 3}, {4, 4}};
    } else if (mirror == "table5") {
        axes.mode = FusionMode::combined_shared;
        axes.heads = {2, 4, 8, 16, 32};
        axes.depths = {0, 1, 2, 3};
    } else {
        throw ConfigError("unknown grid mirror \"" + mirror + "\" (want table3|table4|table5)");
    }
    return axes;
}

std::string config_hash(const TrainConfig& cfg) {
    std::ostringstream canon;
    canon << cfg.backbone.input_samples << '|' << cfg.backbone.input_channels << '|'
          << cfg.backbone.front_filter_len << '|' << cfg.backbone.num_filters << '|'
          << cfg.backbone.num_res_blocks << '|' << cfg.backbone.pool_k << '|'
          << cfg.backbone.code_dim << '|' << cfg.backbone.num_classes << '|'
          << cfg.backbone.leaky_slope << '|' << fusion_mode_name(cfg.fusion.mode) << '|'
          << cfg.fusion.n_transform_layers << '|' << cfg.fusion.transform_hidden_dim << '|'
          << cfg.fusion.n_heads << '|' << cfg.fusion.n_transform_layers_concat << '|'
          << cfg.fusion.n_transform_layers_att << '|'
          << (cfg.optimizer == OptimizerKind::adam ? "adam" : "sgd") << '|' << cfg.lr << '|'
          << cfg.epochs << '|' << cfg.batch_size << '|' << cfg.seed << '|' << cfg.mixup_enabled
          << '|' << cfg.mixup_alpha << '|' << cfg.pre_emphasis_enabled << '|'
          << cfg.pre_emphasis_beta;
    const std::string s = canon.str();
    std::uint64_t h = 14695981039346656037ull;  // FNV-1a
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    char buf[24];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

GridResult run_grid(const GridAxes& axes, const TrainConfig& base, const KernelSpec& kernel,
                    const std::vector<Recording>& train_set,
                    const std::vector<Recording>& test_set, const TagTable& tags,
                    const std::vector<std::string>& class_names) {
    if (axes.heads.empty()) throw ConfigError("grid: empty head axis");
    const bool paired = axes.mode == FusionMode::combined_separate;
    if (paired ? axes.depth_pairs.empty() : axes.depths.empty()) {
        throw ConfigError("grid: empty depth axis");
    }

    GridResult grid;
    grid.mirror = fusion_mode_name(axes.mode);
    for (std::size_t h : axes.heads) grid.row_labels.push_back(std::to_string(h));
    if (paired) {
        for (const auto& [dc, da] : axes.depth_pairs) {
            grid.col_labels.push_back(std::to_string(dc) + "/" + std::to_string(da));
        }
    } else {
        for (std::size_t d : axes.depths) grid.col_labels.push_back(std::to_string(d));
    }

    const std::size_t n_cols = grid.col_labels.size();
    std::size_t index = 0;
    for (std::size_t r = 0; r < axes.heads.size(); ++r) {
        for (std::size_t c = 0; c < n_cols; ++c, ++index) {
            GridCell cell;
            cell.row_label = grid.row_labels[r];
            cell.col_label = grid.col_labels[c];
            cell.seed = base.seed + index;

            TrainConfig cfg = base;
            cfg.seed = cell.seed;
            cfg.fusion.mode = axes.mode;
            cfg.fusion.n_heads = axes.heads[r];
            if (paired) {
                cfg.fusion.n_transform_layers_concat = axes.depth_pairs[c].first;
                cfg.fusion.n_transform_layers_att = axes.depth_pairs[c].second;
            } else {
                cfg.fusion.n_transform_layers = axes.depths[c];
            }
            cell.fusion = cfg.fusion;
            cell.config_hash = config_hash(cfg);

            const auto t0 = std::chrono::steady_clock::now();
            try {
                auto result = run_pipeline(train_set, test_set, tags, cfg, kernel, class_names);
                cell.accuracy = result.eval.accuracy;
                cell.ok = true;
            } catch (const std::exception& e) {
                cell.ok = false;
                cell.error = e.what();
            }
            cell.wall_seconds =
                std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
            grid.cells.push_back(std::move(cell));
        }
    }
    return grid;
}

std::string render_grid_table(const GridResult& grid) {
    const std::size_t n_rows = grid.row_labels.size();
    const std::size_t n_cols = grid.col_labels.size();
    std::vector<std::vector<std::string>> text(n_rows, std::vector<std::string>(n_cols));
    for (std::size_t r = 0; r < n_rows; ++r) {
        // mark the per-row maximum among successful cells
        std::size_t best = n_cols;
        for (std::size_t c = 0; c < n_cols; ++c) {
            const auto& cell = grid.cells[r * n_cols + c];
            if (cell.ok && (best == n_cols || cell.accuracy > grid.cells[r * n_cols + best].accuracy)) {
                best = c;
            }
        }
        for (std::size_t c = 0; c < n_cols; ++c) {
            const auto& cell = grid.cells[r * n_cols + c];
            if (!cell.ok) {
                text[r][c] = "err";
                continue;
            }
            char buf[32];
            std::snprintf(buf, sizeof(buf), "%.2f", cell.accuracy);
            text[r][c] = buf;
            if (c == best) text[r][c] += "*";
        }
    }

    std::vector<std::size_t> widths(n_cols + 1, 6);
    widths[0] = std::string("# head").size();
    for (std::size_t r = 0; r < n_rows; ++r) {
        widths[0] = std::max(widths[0], grid.row_labels[r].size());
    }
    for (std::size_t c = 0; c < n_cols; ++c) {
        widths[c + 1] = grid.col_labels[c].size();
        for (std::size_t r = 0; r < n_rows; ++r) {
            widths[c + 1] = std::max(widths[c + 1], text[r][c].size());
        }
    }

    std::ostringstream out;
    auto pad = [](const std::string& s, std::size_t w) {
        return s + std::string(w > s.size() ? w - s.size() : 0, ' ');
    };
    out << pad("# head", widths[0]);
    for (std::size_t c = 0; c < n_cols; ++c) out << "  " << pad(grid.col_labels[c], widths[c + 1]);
    out << "\n";
    for (std::size_t r = 0; r < n_rows; ++r) {
        out << pad(grid.row_labels[r], widths[0]);
        for (std::size_t c = 0; c < n_cols; ++c) out << "  " << pad(text[r][c], widths[c + 1]);
        out << "\n";
    }
    return out.str();
}

}  // namespace tagasc
