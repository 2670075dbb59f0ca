#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "hurpipe/errors.hpp"
#include "hurpipe/raster.hpp"
#include "hurpipe/spatialcv.hpp"

namespace hurpipe::metrics {

using raster::kIgnoreLabel;
using raster::LabelRaster;

// True-vs-predicted pixel counts. Rows index the true class, columns the
// predicted class, so recall reads along rows and precision along columns.
struct ConfusionMatrix {
    std::uint32_t k = 0;
    std::vector<std::uint64_t> counts; // k x k, row-major

    ConfusionMatrix() = default;
    explicit ConfusionMatrix(std::uint32_t classes)
        : k(classes), counts(std::size_t(classes) * classes, 0) {}

    std::uint64_t& at(std::uint32_t truth, std::uint32_t pred) {
        return counts[std::size_t(truth) * k + pred];
    }
    std::uint64_t at(std::uint32_t truth, std::uint32_t pred) const {
        return counts[std::size_t(truth) * k + pred];
    }
    std::uint64_t total() const {
        std::uint64_t t = 0;
        for (std::uint64_t c : counts) t += c;
        return t;
    }
    std::uint64_t trace() const {
        std::uint64_t t = 0;
        for (std::uint32_t c = 0; c < k; ++c) t += at(c, c);
        return t;
    }
    std::uint64_t row_sum(std::uint32_t c) const {
        std::uint64_t t = 0;
        for (std::uint32_t j = 0; j < k; ++j) t += at(c, j);
        return t;
    }
    std::uint64_t col_sum(std::uint32_t c) const {
        std::uint64_t t = 0;
        for (std::uint32_t j = 0; j < k; ++j) t += at(j, c);
        return t;
    }
    ConfusionMatrix transposed() const {
        ConfusionMatrix out(k);
        for (std::uint32_t t = 0; t < k; ++t)
            for (std::uint32_t p = 0; p < k; ++p) out.at(p, t) = at(t, p);
        return out;
    }
};

// Counts scored pixels; truth pixels marked ignore are excluded entirely.
inline ConfusionMatrix confusion(const LabelRaster& pred, const LabelRaster& truth,
                                 std::uint32_t k) {
    if (pred.width != truth.width || pred.height != truth.height)
        throw ShapeError("prediction and truth dimensions differ");
    ConfusionMatrix cm(k);
    for (std::size_t i = 0; i < truth.values.size(); ++i) {
        const std::int16_t t = truth.values[i];
        if (t == kIgnoreLabel) continue;
        const std::int16_t p = pred.values[i];
        if (t < 0 || std::uint32_t(t) >= k)
            throw DataError("truth class " + std::to_string(t) + " out of range");
        if (p < 0 || std::uint32_t(p) >= k)
            throw DataError("predicted class " + std::to_string(p) + " out of range");
        ++cm.at(std::uint32_t(t), std::uint32_t(p));
    }
    return cm;
}

inline ConfusionMatrix confusion(const LabelRaster& pred, const LabelRaster& truth) {
    return confusion(pred, truth, truth.num_classes);
}

inline ConfusionMatrix merge(const ConfusionMatrix& a, const ConfusionMatrix& b) {
    if (a.k != b.k) throw ShapeError("cannot merge matrices of different class counts");
    ConfusionMatrix out = a;
    for (std::size_t i = 0; i < out.counts.size(); ++i) out.counts[i] += b.counts[i];
    return out;
}

inline double accuracy(const ConfusionMatrix& cm) {
    const std::uint64_t total = cm.total();
    if (total == 0) throw EmptyInputError("confusion matrix is empty");
    return double(cm.trace()) / double(total);
}

constexpr double kUndefined = std::numeric_limits<double>::quiet_NaN();

// Per-class recall; a class that never occurs as truth is undefined (NaN).
inline std::vector<double> recall(const ConfusionMatrix& cm) {
    std::vector<double> out(cm.k, kUndefined);
    for (std::uint32_t c = 0; c < cm.k; ++c) {
        const std::uint64_t row = cm.row_sum(c);
        if (row > 0) out[c] = double(cm.at(c, c)) / double(row);
    }
    return out;
}

// Per-class precision; a class that is never predicted is undefined (NaN).
inline std::vector<double> precision(const ConfusionMatrix& cm) {
    std::vector<double> out(cm.k, kUndefined);
    for (std::uint32_t c = 0; c < cm.k; ++c) {
        const std::uint64_t col = cm.col_sum(c);
        if (col > 0) out[c] = double(cm.at(c, c)) / double(col);
    }
    return out;
}

struct IouF1 {
    std::vector<double> iou;
    std::vector<double> f1;
    double mean_iou = kUndefined;
    double mean_f1 = kUndefined;
};

// IoU_c = TP / (TP + FP + FN), F1_c = 2TP / (2TP + FP + FN); means skip
// undefined classes. The harmonic-mean identity F1 = 2*IoU / (1 + IoU)
// holds by construction.
inline IouF1 iou_f1(const ConfusionMatrix& cm) {
    if (cm.total() == 0) throw EmptyInputError("confusion matrix is empty");
    IouF1 out;
    out.iou.assign(cm.k, kUndefined);
    out.f1.assign(cm.k, kUndefined);
    double iou_sum = 0.0, f1_sum = 0.0;
    std::size_t defined = 0;
    for (std::uint32_t c = 0; c < cm.k; ++c) {
        const std::uint64_t tp = cm.at(c, c);
        const std::uint64_t row = cm.row_sum(c);
        const std::uint64_t col = cm.col_sum(c);
        if (row + col == 0) continue;
        out.iou[c] = double(tp) / double(row + col - tp);
        out.f1[c] = 2.0 * double(tp) / double(row + col);
        iou_sum += out.iou[c];
        f1_sum += out.f1[c];
        ++defined;
    }
    if (defined > 0) {
        out.mean_iou = iou_sum / double(defined);
        out.mean_f1 = f1_sum / double(defined);
    }
    return out;
}

// Chance-corrected agreement. Expected agreement uses the row/column
// marginals; perfect chance agreement (p_e = 1) is defined as zero kappa.
inline double cohen_kappa(const ConfusionMatrix& cm) {
    const std::uint64_t total = cm.total();
    if (total == 0) throw EmptyInputError("confusion matrix is empty");
    const double n = double(total);
    const double p_o = double(cm.trace()) / n;
    double p_e = 0.0;
    for (std::uint32_t c = 0; c < cm.k; ++c)
        p_e += (double(cm.row_sum(c)) / n) * (double(cm.col_sum(c)) / n);
    if (p_e == 1.0) return 0.0;
    return (p_o - p_e) / (1.0 - p_e);
}

struct MetricReport {
    std::string scope; // "continent" or a country code
    double accuracy = 0.0;
    std::vector<double> recall;
    std::vector<double> precision;
    std::vector<double> iou;
    std::vector<double> f1;
    double mean_iou = kUndefined;
    double mean_f1 = kUndefined;
    double kappa = 0.0;
    std::uint64_t total_pixels = 0;

    static MetricReport from(const ConfusionMatrix& cm, std::string scope_name) {
        MetricReport r;
        r.scope = std::move(scope_name);
        r.accuracy = metrics::accuracy(cm);
        r.recall = metrics::recall(cm);
        r.precision = metrics::precision(cm);
        const IouF1 both = iou_f1(cm);
        r.iou = both.iou;
        r.f1 = both.f1;
        r.mean_iou = both.mean_iou;
        r.mean_f1 = both.mean_f1;
        r.kappa = cohen_kappa(cm);
        r.total_pixels = cm.total();
        return r;
    }
};

// One country's confusion counts plus the test fold of the model that
// produced them.
struct CountryScore {
    std::string country;
    ConfusionMatrix cm;
    int scored_by_test_fold = 0;
};

struct CountryReports {
    std::vector<MetricReport> countries;
    MetricReport continental;
    ConfusionMatrix merged;
};

// Builds per-country reports plus the merged continental report. A country
// whose pixels were scored by a model that did not hold it in its test fold
// is a hard failure: that model saw the country during training or selection.
inline CountryReports per_country_report(std::span<const CountryScore> scores,
                                         const spatialcv::FoldAssignment& fa) {
    if (scores.empty()) throw EmptyInputError("no country scores");
    std::map<std::string, ConfusionMatrix> by_country;
    for (const auto& s : scores) {
        const auto it = fa.fold_of.find(s.country);
        if (it == fa.fold_of.end())
            throw CoverageError("country " + s.country + " missing from fold assignment");
        if (it->second != s.scored_by_test_fold)
            throw LeakageError("country " + s.country + " (fold " +
                               std::to_string(it->second) +
                               ") was scored by the model testing fold " +
                               std::to_string(s.scored_by_test_fold));
        auto [pos, inserted] = by_country.try_emplace(s.country, s.cm);
        if (!inserted) pos->second = merge(pos->second, s.cm);
    }
    CountryReports out;
    ConfusionMatrix merged;
    bool first = true;
    for (const auto& [country, cm] : by_country) {
        out.countries.push_back(MetricReport::from(cm, country));
        if (first) {
            merged = cm;
            first = false;
        } else {
            merged = merge(merged, cm);
        }
    }
    out.merged = merged;
    out.continental = MetricReport::from(merged, "continent");
    return out;
}

// Long-form export of the per-country, per-class metric values, with
// overall rows keyed as class "all". Undefined values are skipped.
inline std::string distribution_csv(const CountryReports& reports) {
    std::ostringstream out;
    out << "country,class,metric,value\n";
    out.precision(12);
    const auto emit = [&](const std::string& country, const std::string& cls,
                          const char* metric, double v) {
        if (std::isnan(v)) return;
        out << country << ',' << cls << ',' << metric << ',' << v << '\n';
    };
    for (const auto& r : reports.countries) {
        for (std::size_t c = 0; c < r.recall.size(); ++c) {
            const std::string cls = std::to_string(c);
            emit(r.scope, cls, "recall", r.recall[c]);
            emit(r.scope, cls, "precision", r.precision[c]);
            emit(r.scope, cls, "iou", r.iou[c]);
            emit(r.scope, cls, "f1", r.f1[c]);
        }
        emit(r.scope, "all", "accuracy", r.accuracy);
        emit(r.scope, "all", "kappa", r.kappa);
        emit(r.scope, "all", "mean_iou", r.mean_iou);
        emit(r.scope, "all", "mean_f1", r.mean_f1);
    }
    return out.str();
}

inline void to_json(nlohmann::json& j, const MetricReport& r) {
    const auto clean = [](const std::vector<double>& v) {
        nlohmann::json arr = nlohmann::json::array();
        for (double x : v) {
            if (std::isnan(x)) arr.push_back(nullptr);
            else arr.push_back(x);
        }
        return arr;
    };
    j = {{"scope", r.scope},
         {"accuracy", r.accuracy},
         {"recall", clean(r.recall)},
         {"precision", clean(r.precision)},
         {"iou", clean(r.iou)},
         {"f1", clean(r.f1)},
         {"mean_iou", std::isnan(r.mean_iou) ? nlohmann::json() : nlohmann::json(r.mean_iou)},
         {"mean_f1", std::isnan(r.mean_f1) ? nlohmann::json() : nlohmann::json(r.mean_f1)},
         {"kappa", r.kappa},
         {"total_pixels", r.total_pixels}};
}

inline void to_json(nlohmann::json& j, const ConfusionMatrix& cm) {
    nlohmann::json rows = nlohmann::json::array();
    for (std::uint32_t t = 0; t < cm.k; ++t) {
        nlohmann::json row = nlohmann::json::array();
        for (std::uint32_t p = 0; p < cm.k; ++p) row.push_back(cm.at(t, p));
        rows.push_back(std::move(row));
    }
    j = {{"k", cm.k}, {"counts", rows}};
}

} // namespace hurpipe::metrics
