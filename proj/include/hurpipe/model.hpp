#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "hurpipe/errors.hpp"
#include "hurpipe/raster.hpp"
#include "hurpipe/rng.hpp"

namespace hurpipe::model {

using raster::kIgnoreLabel;
using raster::LabelRaster;
using raster::RasterTile;

// Floor applied inside log() so adversarial inputs cannot produce -inf loss.
constexpr double kProbFloor = 1e-12;

enum class WeightStrategy { complement, neglog, inverse };

inline std::string to_string(WeightStrategy s) {
    switch (s) {
        case WeightStrategy::complement: return "complement";
        case WeightStrategy::neglog: return "neglog";
        case WeightStrategy::inverse: return "inverse";
    }
    throw ConfigError("unknown weighting strategy");
}

inline WeightStrategy weight_strategy_from_string(const std::string& s) {
    if (s == "complement") return WeightStrategy::complement;
    if (s == "neglog") return WeightStrategy::neglog;
    if (s == "inverse") return WeightStrategy::inverse;
    throw ConfigError("unknown weighting strategy: " + s);
}

struct ClassWeights {
    std::vector<double> w;
    WeightStrategy strategy = WeightStrategy::inverse;

    static ClassWeights uniform(std::size_t k) {
        return {std::vector<double>(k, 1.0), WeightStrategy::complement};
    }
};

// Per-class weights from the training-set class proportions:
//   complement: 1 - p_k    neglog: -ln(p_k)    inverse: 1 / p_k
// A class whose proportion makes its weight unusable (p_k = 0 under inverse
// or neglog, p_k = 1 under complement or neglog) is rejected; the caller
// must drop or floor that class first.
inline ClassWeights compute_weights(std::span<const double> p, WeightStrategy strategy) {
    if (p.empty()) throw ConfigError("empty class distribution");
    double sum = 0.0;
    for (double v : p) {
        if (v < 0.0 || !std::isfinite(v))
            throw ConfigError("class proportions must be finite and non-negative");
        sum += v;
    }
    if (std::abs(sum - 1.0) > 1e-6)
        throw ConfigError("class proportions must sum to 1");

    ClassWeights out;
    out.strategy = strategy;
    out.w.resize(p.size());
    for (std::size_t k = 0; k < p.size(); ++k) {
        switch (strategy) {
            case WeightStrategy::complement: out.w[k] = 1.0 - p[k]; break;
            case WeightStrategy::neglog:
                if (p[k] == 0.0)
                    throw DegenerateClassError(
                        "neglog weighting undefined for empty class " + std::to_string(k));
                out.w[k] = -std::log(p[k]);
                break;
            case WeightStrategy::inverse:
                if (p[k] == 0.0)
                    throw DegenerateClassError(
                        "inverse weighting undefined for empty class " + std::to_string(k));
                out.w[k] = 1.0 / p[k];
                break;
        }
        if (p[k] > 0.0 && out.w[k] <= 0.0)
            throw DegenerateClassError("weight for class " + std::to_string(k) +
                                       " is not positive");
    }
    return out;
}

// Numerically stable softmax (max-subtracted).
inline std::vector<double> softmax(std::span<const double> logits) {
    if (logits.empty()) throw ConfigError("softmax of empty logits");
    double max_logit = logits[0];
    for (double v : logits) {
        if (!std::isfinite(v)) throw DataError("softmax requires finite logits");
        max_logit = std::max(max_logit, v);
    }
    std::vector<double> out(logits.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        out[i] = std::exp(logits[i] - max_logit);
        sum += out[i];
    }
    for (double& v : out) v /= sum;
    return out;
}

using PixelProbabilities = std::vector<double>;

struct LossGrad {
    double loss = 0.0;
    std::vector<double> grad_logits; // same shape as the input logits
    std::size_t scored_pixels = 0;
};

// Weighted cross-entropy over a batch of per-pixel logit vectors. Each scored
// pixel contributes -w[t] * ln(softmax(logits)[t]); ignore pixels contribute
// zero loss and zero gradient. Loss and gradient are averaged over the scored
// pixels, and the gradient is the analytic softmax cross-entropy gradient
// scaled by the true class weight.
inline LossGrad weighted_ce_loss(std::span<const double> logits,
                                 std::span<const std::int16_t> targets,
                                 std::span<const double> weights) {
    const std::size_t k = weights.size();
    if (k == 0) throw ConfigError("empty class weights");
    if (logits.size() != targets.size() * k)
        throw ShapeError("logits size must equal pixel count times class count");

    std::size_t scored = 0;
    for (std::int16_t t : targets) {
        if (t == kIgnoreLabel) continue;
        if (t < 0 || std::size_t(t) >= k)
            throw DataError("target class " + std::to_string(t) + " out of range");
        ++scored;
    }
    if (scored == 0) throw EmptyInputError("every pixel in the batch is ignored");

    LossGrad out;
    out.grad_logits.assign(logits.size(), 0.0);
    out.scored_pixels = scored;
    const double inv_n = 1.0 / double(scored);

    std::vector<double> probs;
    for (std::size_t i = 0; i < targets.size(); ++i) {
        if (targets[i] == kIgnoreLabel) continue;
        const std::size_t base = i * k;
        probs = softmax(logits.subspan(base, k));
        const auto t = std::size_t(targets[i]);
        const double w = weights[t];
        out.loss += -w * std::log(std::max(probs[t], kProbFloor));
        for (std::size_t c = 0; c < k; ++c)
            out.grad_logits[base + c] = w * (probs[c] - (c == t ? 1.0 : 0.0)) * inv_n;
    }
    out.loss *= inv_n;
    return out;
}

// ---------------------------------------------------------------------------
// Per-pixel features: raw band values plus band means over a square context
// window, reflect-padded at raster edges.
// ---------------------------------------------------------------------------

struct FeatureConfig {
    std::uint32_t context_window = 1; // odd; 1 = raw bands only
    bool include_raw = true;

    void validate() const {
        if (context_window == 0 || context_window % 2 == 0)
            throw ConfigError("context window must be odd");
        if (!include_raw && context_window == 1)
            throw ConfigError("feature config produces no features");
    }

    std::size_t dim(std::size_t bands) const {
        validate();
        return bands * (std::size_t(include_raw) + std::size_t(context_window > 1));
    }

    // Half-width of the neighbourhood a pixel's features can see.
    std::uint32_t context_radius() const { return context_window / 2; }
};

struct FeatureMatrix {
    std::size_t rows = 0;
    std::size_t dim = 0;
    std::vector<float> data; // row-major

    std::span<const float> row(std::size_t i) const {
        return {data.data() + i * dim, dim};
    }
};

namespace detail {

// Mirror index without repeating the edge sample: -1 -> 1, n -> n-2.
inline std::size_t reflect_index(std::int64_t i, std::size_t n) {
    if (n == 1) return 0;
    const auto period = std::int64_t(2 * n - 2);
    std::int64_t j = i % period;
    if (j < 0) j += period;
    return std::size_t(j < std::int64_t(n) ? j : period - j);
}

// Separable box mean with reflected borders.
inline std::vector<float> box_mean(const std::vector<float>& src, std::uint32_t w,
                                   std::uint32_t h, std::uint32_t window) {
    const std::uint32_t r = window / 2;
    std::vector<double> tmp(std::size_t(w) * h);
    for (std::uint32_t y = 0; y < h; ++y) {
        for (std::uint32_t x = 0; x < w; ++x) {
            double s = 0.0;
            for (std::int64_t dx = -std::int64_t(r); dx <= std::int64_t(r); ++dx)
                s += src[std::size_t(y) * w + reflect_index(std::int64_t(x) + dx, w)];
            tmp[std::size_t(y) * w + x] = s;
        }
    }
    std::vector<float> out(std::size_t(w) * h);
    const double inv = 1.0 / (double(window) * window);
    for (std::uint32_t y = 0; y < h; ++y) {
        for (std::uint32_t x = 0; x < w; ++x) {
            double s = 0.0;
            for (std::int64_t dy = -std::int64_t(r); dy <= std::int64_t(r); ++dy)
                s += tmp[reflect_index(std::int64_t(y) + dy, h) * w + x];
            out[std::size_t(y) * w + x] = float(s * inv);
        }
    }
    return out;
}

} // namespace detail

// Feature order: all raw bands first, then all context means.
inline FeatureMatrix extract_features(const RasterTile& tile, const FeatureConfig& cfg) {
    tile.validate();
    cfg.validate();
    const std::size_t bands = tile.band_count();
    const std::size_t dim = cfg.dim(bands);
    const std::size_t n = tile.pixel_count();

    FeatureMatrix out;
    out.rows = n;
    out.dim = dim;
    out.data.resize(n * dim);

    std::size_t col = 0;
    if (cfg.include_raw) {
        for (std::size_t b = 0; b < bands; ++b, ++col)
            for (std::size_t i = 0; i < n; ++i)
                out.data[i * dim + col] = tile.bands[b][i];
    }
    if (cfg.context_window > 1) {
        for (std::size_t b = 0; b < bands; ++b, ++col) {
            const std::vector<float> means =
                detail::box_mean(tile.bands[b], tile.width, tile.height,
                                 cfg.context_window);
            for (std::size_t i = 0; i < n; ++i) out.data[i * dim + col] = means[i];
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Baseline pixel classifier: multinomial logistic regression trained by
// deterministic mini-batch gradient descent on the weighted loss.
// ---------------------------------------------------------------------------

struct Hyperparams {
    double learning_rate = 0.1;
    std::uint32_t epochs = 10;
    std::uint32_t batch_size = 256;

    void validate() const {
        if (learning_rate <= 0.0) throw ConfigError("learning rate must be positive");
        if (batch_size == 0) throw ConfigError("batch size must be positive");
    }
};

struct BaselineParams {
    std::size_t k = 0;
    std::size_t dim = 0;
    std::vector<double> weights; // k x dim, row-major
    std::vector<double> bias;    // k
    std::uint64_t seed = 0;
    Hyperparams hyper;
    FeatureConfig features;
    std::vector<std::pair<double, double>> norm_ranges; // optional, one per band
    std::vector<double> loss_trace;                     // mean loss per epoch

    void validate() const {
        if (weights.size() != k * dim || bias.size() != k)
            throw ShapeError("parameter dimensions are inconsistent");
        for (double v : weights)
            if (!std::isfinite(v)) throw DataError("non-finite model weight");
        for (double v : bias)
            if (!std::isfinite(v)) throw DataError("non-finite model bias");
    }
};

inline BaselineParams train_baseline(const FeatureMatrix& features,
                                     std::span<const std::int16_t> labels,
                                     const ClassWeights& weights,
                                     const Hyperparams& hyper, std::uint64_t seed,
                                     std::size_t num_classes) {
    hyper.validate();
    if (labels.size() != features.rows)
        throw ShapeError("label count does not match feature row count");
    if (weights.w.size() != num_classes)
        throw ShapeError("weight count does not match class count");

    std::vector<std::size_t> scored;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] == kIgnoreLabel) continue;
        if (labels[i] < 0 || std::size_t(labels[i]) >= num_classes)
            throw DataError("label " + std::to_string(labels[i]) + " out of range");
        scored.push_back(i);
    }
    if (scored.empty()) throw EmptyInputError("no scored pixel to train on");

    BaselineParams params;
    params.k = num_classes;
    params.dim = features.dim;
    params.weights.assign(num_classes * features.dim, 0.0);
    params.bias.assign(num_classes, 0.0);
    params.seed = seed;
    params.hyper = hyper;

    std::vector<double> batch_logits;
    std::vector<std::int16_t> batch_targets;
    for (std::uint32_t epoch = 0; epoch < hyper.epochs; ++epoch) {
        Rng rng(derive_seed({seed, 0x5408FFull, epoch}));
        rng.shuffle(scored);

        double epoch_loss = 0.0;
        std::size_t epoch_scored = 0;
        for (std::size_t start = 0; start < scored.size(); start += hyper.batch_size) {
            const std::size_t end = std::min(scored.size(), start + hyper.batch_size);
            const std::size_t nb = end - start;
            batch_logits.assign(nb * num_classes, 0.0);
            batch_targets.resize(nb);
            for (std::size_t bi = 0; bi < nb; ++bi) {
                const std::size_t row = scored[start + bi];
                batch_targets[bi] = labels[row];
                const auto x = features.row(row);
                for (std::size_t c = 0; c < num_classes; ++c) {
                    double z = params.bias[c];
                    const double* wrow = params.weights.data() + c * features.dim;
                    for (std::size_t d = 0; d < features.dim; ++d)
                        z += wrow[d] * double(x[d]);
                    if (!std::isfinite(z))
                        throw DivergenceError(
                            "training diverged (non-finite logits) at epoch " +
                            std::to_string(epoch));
                    batch_logits[bi * num_classes + c] = z;
                }
            }
            const LossGrad lg =
                weighted_ce_loss(batch_logits, batch_targets, weights.w);
            if (!std::isfinite(lg.loss))
                throw DivergenceError("training loss diverged at epoch " +
                                      std::to_string(epoch));
            epoch_loss += lg.loss * double(lg.scored_pixels);
            epoch_scored += lg.scored_pixels;

            for (std::size_t bi = 0; bi < nb; ++bi) {
                const auto x = features.row(scored[start + bi]);
                for (std::size_t c = 0; c < num_classes; ++c) {
                    const double g = lg.grad_logits[bi * num_classes + c];
                    if (g == 0.0) continue;
                    double* wrow = params.weights.data() + c * features.dim;
                    const double step = hyper.learning_rate * g;
                    for (std::size_t d = 0; d < features.dim; ++d)
                        wrow[d] -= step * double(x[d]);
                    params.bias[c] -= step;
                }
            }
        }
        params.loss_trace.push_back(epoch_loss / double(epoch_scored));
    }
    params.validate();
    return params;
}

// Per-pixel logits for a feature matrix.
inline std::vector<float> predict(const BaselineParams& params,
                                  const FeatureMatrix& features) {
    params.validate();
    if (features.dim != params.dim)
        throw ShapeError("feature dimension does not match model");
    std::vector<float> logits(features.rows * params.k);
    for (std::size_t i = 0; i < features.rows; ++i) {
        const auto x = features.row(i);
        for (std::size_t c = 0; c < params.k; ++c) {
            double z = params.bias[c];
            const double* wrow = params.weights.data() + c * params.dim;
            for (std::size_t d = 0; d < params.dim; ++d) z += wrow[d] * double(x[d]);
            logits[i * params.k + c] = float(z);
        }
    }
    return logits;
}

// Argmax per pixel; ties resolve to the lowest class id.
inline LabelRaster argmax_labels(std::span<const float> logits, std::uint32_t width,
                                 std::uint32_t height, std::size_t k,
                                 const raster::GeoTransform& transform) {
    const std::size_t n = std::size_t(width) * height;
    if (logits.size() != n * k) throw ShapeError("logits size mismatch");
    LabelRaster out = LabelRaster::create(width, height, transform, 0,
                                          std::uint8_t(std::min<std::size_t>(k, 255)));
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t best = 0;
        float best_v = logits[i * k];
        for (std::size_t c = 1; c < k; ++c) {
            const float v = logits[i * k + c];
            if (v > best_v) {
                best_v = v;
                best = c;
            }
        }
        out.values[i] = std::int16_t(best);
    }
    return out;
}

// Whole-tile prediction for an already normalized tile.
inline LabelRaster predict_tile(const BaselineParams& params, const RasterTile& tile) {
    const FeatureMatrix f = extract_features(tile, params.features);
    const std::vector<float> logits = predict(params, f);
    return argmax_labels(logits, tile.width, tile.height, params.k, tile.transform);
}

inline void to_json(nlohmann::json& j, const FeatureConfig& f) {
    j = {{"context_window", f.context_window}, {"include_raw", f.include_raw}};
}
inline void from_json(const nlohmann::json& j, FeatureConfig& f) {
    f.context_window = j.at("context_window").get<std::uint32_t>();
    f.include_raw = j.value("include_raw", true);
}

inline void to_json(nlohmann::json& j, const Hyperparams& h) {
    j = {{"learning_rate", h.learning_rate},
         {"epochs", h.epochs},
         {"batch_size", h.batch_size}};
}
inline void from_json(const nlohmann::json& j, Hyperparams& h) {
    h.learning_rate = j.at("learning_rate").get<double>();
    h.epochs = j.at("epochs").get<std::uint32_t>();
    h.batch_size = j.at("batch_size").get<std::uint32_t>();
}

inline void to_json(nlohmann::json& j, const BaselineParams& p) {
    nlohmann::json ranges = nlohmann::json::array();
    for (const auto& [lo, hi] : p.norm_ranges) ranges.push_back({lo, hi});
    j = {{"k", p.k},
         {"dim", p.dim},
         {"weights", p.weights},
         {"bias", p.bias},
         {"seed", p.seed},
         {"hyperparams", p.hyper},
         {"features", p.features},
         {"norm_ranges", ranges},
         {"loss_trace", p.loss_trace}};
}
inline void from_json(const nlohmann::json& j, BaselineParams& p) {
    p.k = j.at("k").get<std::size_t>();
    p.dim = j.at("dim").get<std::size_t>();
    p.weights = j.at("weights").get<std::vector<double>>();
    p.bias = j.at("bias").get<std::vector<double>>();
    p.seed = j.value("seed", std::uint64_t(0));
    p.hyper = j.value("hyperparams", Hyperparams{});
    p.features = j.value("features", FeatureConfig{});
    p.norm_ranges.clear();
    for (const auto& r : j.value("norm_ranges", nlohmann::json::array()))
        p.norm_ranges.emplace_back(r.at(0).get<double>(), r.at(1).get<double>());
    p.loss_trace = j.value("loss_trace", std::vector<double>{});
    p.validate();
}

inline void save_params(const BaselineParams& p, const std::filesystem::path& path) {
    nlohmann::json j = p;
    const auto tmp = std::filesystem::path(path.string() + ".tmp");
    {
        std::ofstream out(tmp, std::ios::trunc);
        if (!out) throw DataError("cannot write params: " + tmp.string());
        out << j.dump(2) << "\n";
    }
    std::filesystem::rename(tmp, path);
}

inline BaselineParams load_params(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open params: " + path.string());
    nlohmann::json j;
    in >> j;
    return j.get<BaselineParams>();
}

} // namespace hurpipe::model
