#include "tagasc/svm.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

namespace tagasc {

double kernel(const std::vector<double>& x, const std::vector<double>& y, const KernelSpec& spec) {
    if (x.size() != y.size()) throw DimensionError("kernel: dimension mismatch");
    const double g = spec.resolved_gamma(x.size());
    if (spec.kind == KernelKind::rbf) {
        double d2 = 0.0;
        for (std::size_t i = 0; i < x.size(); ++i) {
            const double d = x[i] - y[i];
            d2 += d * d;
        }
        return std::exp(-g * d2);
    }
    double dot = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) dot += x[i] * y[i];
    return std::tanh(g * dot + spec.coef0);
}

double BinarySvm::decision(const std::vector<double>& x, const KernelSpec& spec) const {
    double f = bias;
    for (std::size_t i = 0; i < support_vectors.size(); ++i) {
        f += dual_coef[i] * kernel(support_vectors[i], x, spec);
    }
    return f;
}

namespace {

// Full-state SMO working set. Keeps the complete alpha vector; support
// vectors are extracted at the end.
struct SmoState {
    const std::vector<std::vector<double>>& x;
    const std::vector<int>& y;
    KernelSpec spec;
    std::vector<double> alpha;
    std::vector<double> fcache;  // f(x_i) - y_i  (error cache)
    std::vector<std::vector<double>> gram;
    double b = 0.0;

    SmoState(const std::vector<std::vector<double>>& codes, const std::vector<int>& labels,
             const KernelSpec& sp)
        : x(codes), y(labels), spec(sp), alpha(codes.size(), 0.0), fcache(codes.size()) {
        const std::size_t n = codes.size();
        gram.assign(n, std::vector<double>(n));
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j <= i; ++j) {
                gram[i][j] = gram[j][i] = kernel(codes[i], codes[j], spec);
            }
        }
        for (std::size_t i = 0; i < n; ++i) fcache[i] = -static_cast<double>(y[i]);
    }

    double f_of(std::size_t i) const { return fcache[i] + static_cast<double>(y[i]); }

    bool take_step(std::size_t i1, std::size_t i2) {
        if (i1 == i2) return false;
        const double a1_old = alpha[i1], a2_old = alpha[i2];
        const double y1 = y[i1], y2 = y[i2];
        const double e1 = fcache[i1], e2 = fcache[i2];
        const double s = y1 * y2;
        const double C = spec.C;

        double lo, hi;
        if (s < 0) {
            lo = std::max(0.0, a2_old - a1_old);
            hi = std::min(C, C + a2_old - a1_old);
        } else {
            lo = std::max(0.0, a1_old + a2_old - C);
            hi = std::min(C, a1_old + a2_old);
        }
        if (lo >= hi) return false;

        const double k11 = gram[i1][i1], k12 = gram[i1][i2], k22 = gram[i2][i2];
        const double eta = k11 + k22 - 2.0 * k12;

        double a2;
        if (eta > 0.0) {
            a2 = a2_old + y2 * (e1 - e2) / eta;
            a2 = std::clamp(a2, lo, hi);
        } else {
            // indefinite kernel: evaluate the objective at both clip ends
            const double f1 = y1 * e1 - a1_old * k11 - s * a2_old * k12;
            const double f2 = y2 * e2 - a2_old * k22 - s * a1_old * k12;
            const double l1 = a1_old + s * (a2_old - lo);
            const double h1 = a1_old + s * (a2_old - hi);
            const double obj_lo =
                l1 * f1 + lo * f2 + 0.5 * l1 * l1 * k11 + 0.5 * lo * lo * k22 + s * lo * l1 * k12;
            const double obj_hi =
                h1 * f1 + hi * f2 + 0.5 * h1 * h1 * k11 + 0.5 * hi * hi * k22 + s * hi * h1 * k12;
            if (obj_lo < obj_hi - 1e-12) a2 = lo;
            else if (obj_hi < obj_lo - 1e-12) a2 = hi;
            else return false;
        }
        if (std::abs(a2 - a2_old) < 1e-12 * (a2 + a2_old + 1e-12)) return false;

        const double a1 = a1_old + s * (a2_old - a2);
        const double d1 = a1 - a1_old, d2 = a2 - a2_old;

        // bias update keeps f exact on whichever multiplier stays unbound
        const double b1 = b - e1 - y1 * d1 * k11 - y2 * d2 * k12;
        const double b2 = b - e2 - y1 * d1 * k12 - y2 * d2 * k22;
        double b_new;
        if (a1 > 0.0 && a1 < C) b_new = b1;
        else if (a2 > 0.0 && a2 < C) b_new = b2;
        else b_new = 0.5 * (b1 + b2);

        const double db = b_new - b;
        for (std::size_t i = 0; i < x.size(); ++i) {
            fcache[i] += y1 * d1 * gram[i1][i] + y2 * d2 * gram[i2][i] + db;
        }
        alpha[i1] = a1;
        alpha[i2] = a2;
        b = b_new;
        return true;
    }

    bool examine(std::size_t i2) {
        const double y2 = y[i2];
        const double a2 = alpha[i2];
        const double e2 = fcache[i2];
        const double r2 = e2 * y2;
        const double tol = spec.tol;
        if (!((r2 < -tol && a2 < spec.C) || (r2 > tol && a2 > 0.0))) return false;

        // second-choice heuristic: max |E1 - E2| among unbound multipliers
        std::size_t best = i2;
        double best_gap = -1.0;
        for (std::size_t i = 0; i < x.size(); ++i) {
            if (alpha[i] > 0.0 && alpha[i] < spec.C) {
                const double gap = std::abs(fcache[i] - e2);
                if (gap > best_gap) {
                    best_gap = gap;
                    best = i;
                }
            }
        }
        if (best != i2 && take_step(best, i2)) return true;
        for (std::size_t i = 0; i < x.size(); ++i) {
            if (alpha[i] > 0.0 && alpha[i] < spec.C && take_step(i, i2)) return true;
        }
        for (std::size_t i = 0; i < x.size(); ++i) {
            if (take_step(i, i2)) return true;
        }
        return false;
    }

    double max_kkt_violation() const {
        double worst = 0.0;
        for (std::size_t i = 0; i < x.size(); ++i) {
            const double margin = static_cast<double>(y[i]) * f_of(i);
            if (alpha[i] < 1e-12) {
                worst = std::max(worst, 1.0 - margin);
            } else if (alpha[i] > spec.C - 1e-12) {
                worst = std::max(worst, margin - 1.0);
            } else {
                worst = std::max(worst, std::abs(margin - 1.0));
            }
        }
        return worst;
    }

    double dual_objective() const {
        double obj = 0.0;
        for (std::size_t i = 0; i < x.size(); ++i) {
            obj += alpha[i];
            for (std::size_t j = 0; j < x.size(); ++j) {
                obj -= 0.5 * alpha[i] * alpha[j] * y[i] * y[j] * gram[i][j];
            }
        }
        return obj;
    }

    bool solve(std::size_t max_passes) {
        std::size_t passes = 0;
        bool examine_all = true;
        std::size_t changed = 0;
        while (passes < max_passes) {
            ++passes;
            changed = 0;
            if (examine_all) {
                for (std::size_t i = 0; i < x.size(); ++i) changed += examine(i) ? 1 : 0;
            } else {
                for (std::size_t i = 0; i < x.size(); ++i) {
                    if (alpha[i] > 0.0 && alpha[i] < spec.C) changed += examine(i) ? 1 : 0;
                }
            }
            if (examine_all) {
                if (changed == 0) break;
                examine_all = false;
            } else if (changed == 0) {
                examine_all = true;
            }
        }
        return max_kkt_violation() <= spec.tol;
    }
};

void check_binary_inputs(const std::vector<std::vector<double>>& codes,
                         const std::vector<int>& labels) {
    if (codes.empty() || codes.size() != labels.size()) {
        throw DataError("train_binary: empty or mismatched inputs");
    }
    bool pos = false, neg = false;
    for (int l : labels) {
        if (l == 1) pos = true;
        else if (l == -1) neg = true;
        else throw DataError("train_binary: labels must be +1 or -1");
    }
    if (!pos || !neg) throw DataError("train_binary: degenerate data, need both classes");
    const std::size_t dim = codes[0].size();
    for (const auto& c : codes) {
        if (c.size() != dim) throw DimensionError("train_binary: inconsistent code dimensions");
        for (double v : c) {
            if (!std::isfinite(v)) throw DataError("train_binary: non-finite code value");
        }
    }
}

}  // namespace

BinarySvm train_binary(const std::vector<std::vector<double>>& codes,
                       const std::vector<int>& labels, const KernelSpec& spec,
                       std::size_t max_passes) {
    check_binary_inputs(codes, labels);
    SmoState smo(codes, labels, spec);
    const bool converged = smo.solve(max_passes);

    BinarySvm model;
    model.bias = smo.b;
    model.converged = converged;
    for (std::size_t i = 0; i < codes.size(); ++i) {
        if (smo.alpha[i] > 1e-12) {
            model.support_vectors.push_back(codes[i]);
            model.dual_coef.push_back(smo.alpha[i] * labels[i]);
        }
    }
    return model;
}

SmoDiagnostics train_binary_diagnostics(const std::vector<std::vector<double>>& codes,
                                        const std::vector<int>& labels, const KernelSpec& spec,
                                        std::size_t max_passes) {
    check_binary_inputs(codes, labels);
    SmoState smo(codes, labels, spec);
    SmoDiagnostics d;
    d.converged = smo.solve(max_passes);
    d.alpha = smo.alpha;
    d.bias = smo.b;
    d.dual_objective = smo.dual_objective();
    return d;
}

SvmModel train_ovr(const std::vector<std::vector<double>>& codes,
                   const std::vector<std::size_t>& labels, std::size_t num_classes,
                   const KernelSpec& spec, std::vector<std::string> class_names,
                   std::vector<std::string> training_ids) {
    if (num_classes < 2) throw ConfigError("train_ovr: need at least 2 classes");
    if (codes.empty() || codes.size() != labels.size()) {
        throw DataError("train_ovr: empty or mismatched inputs");
    }
    std::vector<std::size_t> counts(num_classes, 0);
    for (std::size_t l : labels) {
        if (l >= num_classes) throw DataError("train_ovr: label out of range");
        ++counts[l];
    }
    for (std::size_t k = 0; k < num_classes; ++k) {
        if (counts[k] == 0) {
            const std::string name = k < class_names.size() ? class_names[k] : std::to_string(k);
            throw DataError("train_ovr: degenerate data, class \"" + name +
                            "\" absent from training set");
        }
    }

    SvmModel model;
    model.spec = spec;
    model.num_classes = num_classes;
    model.dim = codes[0].size();
    model.class_names = std::move(class_names);
    model.training_ids = std::move(training_ids);
    if (model.class_names.empty()) {
        for (std::size_t k = 0; k < num_classes; ++k) {
            model.class_names.push_back(std::to_string(k));
        }
    }

    // per-dimension standardization from training statistics
    model.feature_mean.assign(model.dim, 0.0);
    model.feature_std.assign(model.dim, 0.0);
    for (const auto& c : codes) {
        for (std::size_t d = 0; d < model.dim; ++d) model.feature_mean[d] += c[d];
    }
    for (std::size_t d = 0; d < model.dim; ++d) {
        model.feature_mean[d] /= static_cast<double>(codes.size());
    }
    for (const auto& c : codes) {
        for (std::size_t d = 0; d < model.dim; ++d) {
            const double e = c[d] - model.feature_mean[d];
            model.feature_std[d] += e * e;
        }
    }
    for (std::size_t d = 0; d < model.dim; ++d) {
        model.feature_std[d] = std::sqrt(model.feature_std[d] / static_cast<double>(codes.size()));
        if (model.feature_std[d] < 1e-12) model.feature_std[d] = 1.0;
    }

    std::vector<std::vector<double>> standardized(codes.size());
    for (std::size_t i = 0; i < codes.size(); ++i) {
        standardized[i].resize(model.dim);
        for (std::size_t d = 0; d < model.dim; ++d) {
            standardized[i][d] = (codes[i][d] - model.feature_mean[d]) / model.feature_std[d];
        }
    }

    for (std::size_t k = 0; k < num_classes; ++k) {
        std::vector<int> y(codes.size());
        for (std::size_t i = 0; i < codes.size(); ++i) y[i] = labels[i] == k ? 1 : -1;
        model.per_class.push_back(train_binary(standardized, y, spec));
    }
    return model;
}

std::vector<double> decision_values(const SvmModel& model, const std::vector<double>& code) {
    if (code.size() != model.dim) {
        throw DimensionError("decision_values: code dim " + std::to_string(code.size()) +
                             " != model dim " + std::to_string(model.dim));
    }
    std::vector<double> z(model.dim);
    for (std::size_t d = 0; d < model.dim; ++d) {
        z[d] = (code[d] - model.feature_mean[d]) / model.feature_std[d];
    }
    std::vector<double> out(model.num_classes);
    for (std::size_t k = 0; k < model.num_classes; ++k) {
        out[k] = model.per_class[k].decision(z, model.spec);
    }
    return out;
}

std::size_t predict(const SvmModel& model, const std::vector<double>& code) {
    const auto dv = decision_values(model, code);
    std::size_t best = 0;
    for (std::size_t k = 1; k < dv.size(); ++k) {
        if (dv[k] > dv[best]) best = k;  // ties keep the lowest index
    }
    return best;
}

namespace {

std::string fmt17(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

double parse_double(std::istream& in, const std::string& path) {
    double v;
    if (!(in >> v)) throw ParseError(path + ": expected a number");
    return v;
}

}  // namespace

void save_svm(const std::string& path, const SvmModel& model) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write svm model file: " + path);
    out << "tagasc-svm 1\n";
    out << "kernel " << (model.spec.kind == KernelKind::rbf ? "rbf" : "sigmoid") << " gamma "
        << fmt17(model.spec.gamma) << " coef0 " << fmt17(model.spec.coef0) << " C "
        << fmt17(model.spec.C) << " tol " << fmt17(model.spec.tol) << "\n";
    out << "classes " << model.num_classes << " dim " << model.dim << "\n";
    out << "labels";
    for (const auto& n : model.class_names) out << ' ' << n;
    out << "\nmean";
    for (double v : model.feature_mean) out << ' ' << fmt17(v);
    out << "\nstd";
    for (double v : model.feature_std) out << ' ' << fmt17(v);
    out << "\ntrain_ids " << model.training_ids.size();
    for (const auto& id : model.training_ids) out << ' ' << id;
    out << "\n";
    for (std::size_t k = 0; k < model.num_classes; ++k) {
        const auto& bin = model.per_class[k];
        out << "class " << k << " bias " << fmt17(bin.bias) << " nsv "
            << bin.support_vectors.size() << " converged " << (bin.converged ? 1 : 0) << "\n";
        for (std::size_t i = 0; i < bin.support_vectors.size(); ++i) {
            out << fmt17(bin.dual_coef[i]);
            for (double v : bin.support_vectors[i]) out << ' ' << fmt17(v);
            out << "\n";
        }
    }
}

SvmModel load_svm(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open svm model file: " + path);
    std::string word;
    in >> word;
    if (word != "tagasc-svm") throw ParseError(path + ": not a tagasc svm model file");
    int version;
    in >> version;
    if (version != 1) throw ParseError(path + ": unsupported version");

    SvmModel model;
    auto expect = [&](const char* tok) {
        in >> word;
        if (word != tok) throw ParseError(path + ": expected \"" + tok + "\", got \"" + word + "\"");
    };
    expect("kernel");
    in >> word;
    if (word == "rbf") model.spec.kind = KernelKind::rbf;
    else if (word == "sigmoid") model.spec.kind = KernelKind::sigmoid;
    else throw ParseError(path + ": unknown kernel \"" + word + "\"");
    expect("gamma");
    model.spec.gamma = parse_double(in, path);
    expect("coef0");
    model.spec.coef0 = parse_double(in, path);
    expect("C");
    model.spec.C = parse_double(in, path);
    expect("tol");
    model.spec.tol = parse_double(in, path);
    expect("classes");
    in >> model.num_classes;
    expect("dim");
    in >> model.dim;
    expect("labels");
    model.class_names.resize(model.num_classes);
    for (auto& n : model.class_names) in >> n;
    expect("mean");
    model.feature_mean.resize(model.dim);
    for (auto& v : model.feature_mean) v = parse_double(in, path);
    expect("std");
    model.feature_std.resize(model.dim);
    for (auto& v : model.feature_std) v = parse_double(in, path);
    expect("train_ids");
    std::size_t nids;
    in >> nids;
    model.training_ids.resize(nids);
    for (auto& id : model.training_ids) in >> id;

    for (std::size_t k = 0; k < model.num_classes; ++k) {
        expect("class");
        std::size_t idx;
        in >> idx;
        if (idx != k) throw ParseError(path + ": class blocks out of order");
        BinarySvm bin;
        expect("bias");
        bin.bias = parse_double(in, path);
        expect("nsv");
        std::size_t nsv;
        in >> nsv;
        expect("converged");
        int conv;
        in >> conv;
        bin.converged = conv != 0;
        bin.dual_coef.resize(nsv);
        bin.support_vectors.assign(nsv, std::vector<double>(model.dim));
        for (std::size_t i = 0; i < nsv; ++i) {
            bin.dual_coef[i] = parse_double(in, path);
            for (auto& v : bin.support_vectors[i]) v = parse_double(in, path);
        }
        model.per_class.push_back(std::move(bin));
    }
    if (!in) throw ParseError(path + ": truncated model file");
    return model;
}

}  // namespace tagasc
