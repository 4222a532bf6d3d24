#pragma once

#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "tagasc/audio_io.hpp"
#include "tagasc/model.hpp"
#include "tagasc/svm.hpp"

namespace tagasc {

// Full-scale accuracies reported by the source system on DCASE 2019 task
// 1-a. Reference metadata only; not reproducible at this artifact's scale.
namespace reference {
inline constexpr double kBaselineAccuracy = 73.63;
inline constexpr double kBestConcatAccuracy = 75.66;
inline constexpr double kBestAttentionAccuracy = 76.58;    // grid best
inline constexpr double kAbstractAttentionAccuracy = 75.58;  // abstract figure
inline constexpr double kBestCombinedSharedAccuracy = 76.75;
inline constexpr double kBestCombinedSeparateAccuracy = 76.24;
}  // namespace reference

enum class OptimizerKind { adam, sgd };

struct TrainConfig {
    OptimizerKind optimizer = OptimizerKind::adam;
    double lr = 1e-3;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    std::size_t epochs = 20;
    std::size_t batch_size = 8;
    std::uint64_t seed = 1;
    bool mixup_enabled = true;
    double mixup_alpha = 0.4;
    bool pre_emphasis_enabled = true;
    double pre_emphasis_beta = 0.97;
    BackboneConfig backbone;
    FusionConfig fusion;

    void validate() const;
};

struct TrainedModel {
    std::unique_ptr<FusedModel> model;
    std::vector<double> loss_history;  // per-epoch mean loss
};

// Per-example forward with gradient accumulation to batch size; all
// randomness (shuffling, mixup) comes from one generator seeded by
// cfg.seed, so identical runs produce identical parameters.
TrainedModel train(const std::vector<Recording>& train_set, const TagTable& tags,
                   const TrainConfig& cfg);

struct CodeRow {
    std::string id;
    std::size_t label = 0;
    std::vector<double> values;
};

struct CodeSet {
    std::vector<std::string> class_names;
    std::size_t dim = 0;
    std::vector<CodeRow> rows;
};

// Infer-mode code extraction; dimension is fused_code_dim for the model's
// mode (e.g. code_dim + c for codecat).
CodeSet extract_codes(FusedModel& model, const std::vector<Recording>& recordings,
                      const TagTable& tags, const TrainConfig& cfg,
                      const std::vector<std::string>& class_names);

void save_codes(const std::string& path, const CodeSet& codes);
CodeSet load_codes(const std::string& path);

SvmModel fit_svm(const CodeSet& codes, const KernelSpec& spec);

struct EvalResult {
    double accuracy = 0.0;  // percent
    std::vector<std::vector<std::size_t>> confusion;  // [true][predicted]
};

// Rejects any overlap between the SVM's training ids and the test ids.
EvalResult evaluate_codes(const SvmModel& svm, const CodeSet& test_codes);

EvalResult evaluate(FusedModel& model, const SvmModel& svm,
                    const std::vector<Recording>& test_set, const TagTable& tags,
                    const TrainConfig& cfg, const std::vector<std::string>& class_names);

// Whole-pipeline convenience used by the CLI and the grid runner:
// train -> extract -> fit -> evaluate.
struct PipelineResult {
    TrainedModel trained;
    SvmModel svm;
    EvalResult eval;
};

PipelineResult run_pipeline(const std::vector<Recording>& train_set,
                            const std::vector<Recording>& test_set, const TagTable& tags,
                            const TrainConfig& cfg, const KernelSpec& kernel,
                            const std::vector<std::string>& class_names);

// Experiment grid shaped like the source tables: rows are head counts,
// columns transform depths (or depth pairs for the separate-combined grid).
struct GridAxes {
    FusionMode mode = FusionMode::attention;
    std::vector<std::size_t> heads;
    std::vector<std::size_t> depths;  // attention / combined_shared
    std::vector<std::pair<std::size_t, std::size_t>> depth_pairs;  // combined_separate
};

// "table3": attention, heads {2,4,8,16,32} x depths {0..3};
// "table4": combined_separate, heads {2,4} x {3/3, 3/4, 4/3, 4/4};
// "table5": combined_shared, heads {2,4,8,16,32} x depths {0..3}.
GridAxes mirror_axes(const std::string& mirror);

struct GridCell {
    std::string row_label;
    std::string col_label;
    FusionConfig fusion;
    std::uint64_t seed = 0;
    double accuracy = 0.0;
    double wall_seconds = 0.0;
    std::string config_hash;
    bool ok = false;
    std::string error;
};

struct GridResult {
    std::string mirror;
    std::vector<std::string> row_labels;
    std::vector<std::string> col_labels;
    std::vector<GridCell> cells;  // row-major
};

// Per-cell failures are recorded and the grid continues.
GridResult run_grid(const GridAxes& axes, const TrainConfig& base, const KernelSpec& kernel,
                    const std::vector<Recording>& train_set,
                    const std::vector<Recording>& test_set, const TagTable& tags,
                    const std::vector<std::string>& class_names);

// Aligned-column table; the per-row maximum is marked with '*'.
std::string render_grid_table(const GridResult& grid);

std::string config_hash(const TrainConfig& cfg);

}  // namespace tagasc
