#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "tagasc/errors.hpp"

namespace tagasc {

enum class KernelKind { rbf, sigmoid };

struct KernelSpec {
    KernelKind kind = KernelKind::rbf;
    double gamma = 0.0;  // 0 means 1/dim, resolved at training time
    double coef0 = 0.0;  // sigmoid only
    double C = 1.0;
    double tol = 1e-3;

    double resolved_gamma(std::size_t dim) const {
        return gamma > 0.0 ? gamma : 1.0 / static_cast<double>(dim);
    }
};

// rbf: exp(-gamma * ||x - y||^2); sigmoid: tanh(gamma * <x, y> + coef0).
double kernel(const std::vector<double>& x, const std::vector<double>& y, const KernelSpec& spec);

struct BinarySvm {
    std::vector<std::vector<double>> support_vectors;
    std::vector<double> dual_coef;  // alpha_i * y_i
    double bias = 0.0;
    bool converged = false;

    double decision(const std::vector<double>& x, const KernelSpec& spec) const;
};

// SMO on the soft-margin dual; labels in {-1, +1}. Stops when no KKT
// violation beyond tol survives a full pass, or after max_passes sweeps
// (converged=false, model still returned).
BinarySvm train_binary(const std::vector<std::vector<double>>& codes,
                       const std::vector<int>& labels, const KernelSpec& spec,
                       std::size_t max_passes = 10000);

// alpha/bias diagnostics used by the KKT property tests.
struct SmoDiagnostics {
    std::vector<double> alpha;
    double bias = 0.0;
    double dual_objective = 0.0;
    bool converged = false;
};

SmoDiagnostics train_binary_diagnostics(const std::vector<std::vector<double>>& codes,
                                        const std::vector<int>& labels, const KernelSpec& spec,
                                        std::size_t max_passes = 10000);

// One-vs-rest multiclass on standardized codes. Standardization statistics
// come from the training set and ride along in the model.
struct SvmModel {
    KernelSpec spec;
    std::size_t num_classes = 0;
    std::size_t dim = 0;
    std::vector<double> feature_mean;
    std::vector<double> feature_std;
    std::vector<BinarySvm> per_class;
    std::vector<std::string> class_names;
    std::vector<std::string> training_ids;  // for the train/test overlap check
};

SvmModel train_ovr(const std::vector<std::vector<double>>& codes,
                   const std::vector<std::size_t>& labels, std::size_t num_classes,
                   const KernelSpec& spec, std::vector<std::string> class_names = {},
                   std::vector<std::string> training_ids = {});

std::vector<double> decision_values(const SvmModel& model, const std::vector<double>& code);
std::size_t predict(const SvmModel& model, const std::vector<double>& code);

// Text model file, round-trip exact to 17 significant digits.
void save_svm(const std::string& path, const SvmModel& model);
SvmModel load_svm(const std::string& path);

}  // namespace tagasc
