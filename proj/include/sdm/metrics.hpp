#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "sdm/checklist.hpp"
#include "sdm/common.hpp"

namespace sdm {

// Denominator rule for top-k when fewer than k species were observed:
// `min_k_observed` divides by min(k, #observed), `k` divides by k always.
enum class TopKDenominator : std::uint8_t { min_k_observed = 0, k };

struct EvalConfig {
    TopKDenominator topk_denominator = TopKDenominator::min_k_observed;
};

inline TopKDenominator parse_topk_denominator(const std::string& s) {
    if (s == "min") return TopKDenominator::min_k_observed;
    if (s == "k") return TopKDenominator::k;
    throw UsageError("topk_denominator must be 'min' or 'k'");
}

// ---------------------------------------------------------------------------
// Regression metrics
// ---------------------------------------------------------------------------

inline double mse(const std::vector<float>& preds, const std::vector<float>& truth) {
    if (preds.size() != truth.size()) throw DataError("mse: shape mismatch");
    if (preds.empty()) throw DataError("mse: empty input");
    double acc = 0.0;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        const double d = static_cast<double>(preds[i]) - static_cast<double>(truth[i]);
        acc += d * d;
    }
    return acc / static_cast<double>(preds.size());
}

inline double mae(const std::vector<float>& preds, const std::vector<float>& truth) {
    if (preds.size() != truth.size()) throw DataError("mae: shape mismatch");
    if (preds.empty()) throw DataError("mae: empty input");
    double acc = 0.0;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        acc += std::abs(static_cast<double>(preds[i]) - static_cast<double>(truth[i]));
    }
    return acc / static_cast<double>(preds.size());
}

// ---------------------------------------------------------------------------
// Ranking metrics. Ties everywhere break towards the lowest species index.
// ---------------------------------------------------------------------------

namespace detail {

// Indices of the k largest entries, ordered by (value desc, index asc).
inline std::vector<std::size_t> top_k_of(const float* row,
                                         const std::vector<std::size_t>& candidates,
                                         std::size_t k) {
    std::vector<std::size_t> order = candidates;
    std::sort(order.begin(), order.end(), [row](std::size_t a, std::size_t b) {
        if (row[a] != row[b]) return row[a] > row[b];
        return a < b;
    });
    order.resize(std::min(k, order.size()));
    return order;
}

inline std::vector<std::size_t> nonzero_indices(const float* row, std::size_t n) {
    std::vector<std::size_t> out;
    for (std::size_t s = 0; s < n; ++s) {
        if (row[s] > 0.0f) out.push_back(s);
    }
    return out;
}

}  // namespace detail

// Overlap of the top-k predicted species with the top-k observed species,
// where observed candidates are restricted to nonzero true rates. Returns
// nothing when no species was observed (the row is skipped in aggregates).
inline std::optional<double> top_k_accuracy(const float* pred_row, const float* truth_row,
                                            std::size_t n, std::size_t k,
                                            const EvalConfig& config = {}) {
    if (k < 1) throw UsageError("top-k: k must be >= 1");
    if (k > n) throw UsageError("top-k: k = " + std::to_string(k) + " exceeds species count " +
                                std::to_string(n));
    const std::vector<std::size_t> observed = detail::nonzero_indices(truth_row, n);
    if (observed.empty()) return std::nullopt;

    std::vector<std::size_t> all(n);
    std::iota(all.begin(), all.end(), 0);
    const std::vector<std::size_t> pred_top = detail::top_k_of(pred_row, all, k);
    const std::vector<std::size_t> truth_top = detail::top_k_of(truth_row, observed, k);

    std::size_t hits = 0;
    for (std::size_t s : pred_top) {
        if (std::find(truth_top.begin(), truth_top.end(), s) != truth_top.end()) ++hits;
    }
    const std::size_t denom = config.topk_denominator == TopKDenominator::min_k_observed
                                  ? std::min(k, observed.size())
                                  : k;
    return static_cast<double>(hits) / static_cast<double>(denom);
}

// top-k with k = number of species observed at the hotspot.
inline std::optional<double> adaptive_top_k(const float* pred_row, const float* truth_row,
                                            std::size_t n, const EvalConfig& config = {}) {
    const std::vector<std::size_t> observed = detail::nonzero_indices(truth_row, n);
    if (observed.empty()) return std::nullopt;
    return top_k_accuracy(pred_row, truth_row, n, observed.size(), config);
}

// ---------------------------------------------------------------------------
// Per-species precision / recall
// ---------------------------------------------------------------------------

struct SpeciesScore {
    std::size_t species_index = 0;
    std::string species;
    std::optional<double> precision;  // absent when the species is never predicted
    double recall = 0.0;
    std::uint64_t occurrences = 0;  // hotspots with nonzero true rate
};

// Presence is operationalized through the adaptive top-k set: at each hotspot
// the predicted-present species are the top-k predictions for k = #observed,
// and the observed-present species are those with nonzero true rate. Species
// never observed anywhere are omitted (their recall is undefined).
inline std::vector<SpeciesScore> per_species_precision_recall(const EncounterTable& preds,
                                                              const EncounterTable& truth) {
    const std::size_t n = truth.cols();
    std::vector<std::uint64_t> tp(n, 0), fp(n, 0), fn(n, 0);
    std::vector<std::size_t> all(n);
    std::iota(all.begin(), all.end(), 0);

    for (std::size_t h = 0; h < truth.rows(); ++h) {
        const float* truth_row = truth.rates.data() + h * n;
        const float* pred_row = preds.rates.data() + h * n;
        const std::vector<std::size_t> observed = detail::nonzero_indices(truth_row, n);
        if (observed.empty()) continue;
        const std::vector<std::size_t> predicted =
            detail::top_k_of(pred_row, all, observed.size());

        std::vector<bool> in_predicted(n, false);
        for (std::size_t s : predicted) in_predicted[s] = true;
        std::vector<bool> in_observed(n, false);
        for (std::size_t s : observed) in_observed[s] = true;

        for (std::size_t s : predicted) {
            if (in_observed[s]) {
                tp[s] += 1;
            } else {
                fp[s] += 1;
            }
        }
        for (std::size_t s : observed) {
            if (!in_predicted[s]) fn[s] += 1;
        }
    }

    std::vector<SpeciesScore> out;
    for (std::size_t s = 0; s < n; ++s) {
        const std::uint64_t occurrences = tp[s] + fn[s];
        if (occurrences == 0) continue;
        SpeciesScore score;
        score.species_index = s;
        score.species = truth.species.names[s];
        score.occurrences = occurrences;
        score.recall = static_cast<double>(tp[s]) / static_cast<double>(occurrences);
        if (tp[s] + fp[s] > 0) {
            score.precision =
                static_cast<double>(tp[s]) / static_cast<double>(tp[s] + fp[s]);
        }
        out.push_back(std::move(score));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Aggregate report
// ---------------------------------------------------------------------------

struct HotspotScore {
    std::string hotspot_id;
    double lat = 0.0;
    double lon = 0.0;
    double adaptive_topk = 0.0;
    std::size_t k = 0;
};

struct EvalReport {
    std::size_t n_hotspots = 0;
    std::size_t n_species = 0;
    double mse = 0.0;
    double mae = 0.0;
    std::optional<double> top10;
    std::optional<double> top30;
    std::optional<double> adaptive_topk;
    std::size_t skipped_hotspots = 0;  // rows with no observed species
    std::vector<SpeciesScore> per_species;
    std::vector<HotspotScore> per_hotspot;
};

namespace detail {

inline std::optional<double> mean_over_rows(const EncounterTable& preds,
                                            const EncounterTable& truth, std::size_t k,
                                            const EvalConfig& config) {
    if (k > truth.cols()) return std::nullopt;  // not enough species for this k
    double acc = 0.0;
    std::size_t defined = 0;
    for (std::size_t h = 0; h < truth.rows(); ++h) {
        const auto v = top_k_accuracy(preds.rates.data() + h * truth.cols(),
                                      truth.rates.data() + h * truth.cols(), truth.cols(), k,
                                      config);
        if (v) {
            acc += *v;
            ++defined;
        }
    }
    if (defined == 0) return std::nullopt;
    return acc / static_cast<double>(defined);
}

}  // namespace detail

inline void check_aligned(const EncounterTable& preds, const EncounterTable& truth) {
    if (preds.rows() != truth.rows() || preds.cols() != truth.cols()) {
        throw DataError("evaluation: prediction/truth shape mismatch");
    }
    if (preds.species.names != truth.species.names) {
        throw DataError("evaluation: species lists differ");
    }
    for (std::size_t h = 0; h < truth.rows(); ++h) {
        if (preds.hotspots[h].id != truth.hotspots[h].id) {
            throw DataError("evaluation: hotspot order mismatch at row " + std::to_string(h) +
                            " (" + preds.hotspots[h].id + " vs " + truth.hotspots[h].id + ")");
        }
    }
}

inline EvalReport evaluate(const EncounterTable& preds, const EncounterTable& truth,
                           const EvalConfig& config = {}) {
    check_aligned(preds, truth);
    EvalReport report;
    report.n_hotspots = truth.rows();
    report.n_species = truth.cols();
    report.mse = mse(preds.rates, truth.rates);
    report.mae = mae(preds.rates, truth.rates);
    report.top10 = detail::mean_over_rows(preds, truth, 10, config);
    report.top30 = detail::mean_over_rows(preds, truth, 30, config);

    double adaptive_acc = 0.0;
    std::size_t defined = 0;
    const std::size_t n = truth.cols();
    for (std::size_t h = 0; h < truth.rows(); ++h) {
        const float* truth_row = truth.rates.data() + h * n;
        const float* pred_row = preds.rates.data() + h * n;
        const std::vector<std::size_t> observed = detail::nonzero_indices(truth_row, n);
        if (observed.empty()) {
            report.skipped_hotspots += 1;
            continue;
        }
        const auto v = top_k_accuracy(pred_row, truth_row, n, observed.size(), config);
        adaptive_acc += *v;
        ++defined;
        report.per_hotspot.push_back(HotspotScore{truth.hotspots[h].id, truth.hotspots[h].lat,
                                                  truth.hotspots[h].lon, *v, observed.size()});
    }
    if (defined > 0) report.adaptive_topk = adaptive_acc / static_cast<double>(defined);
    report.per_species = per_species_precision_recall(preds, truth);
    return report;
}

// ---------------------------------------------------------------------------
// Report artifacts
// ---------------------------------------------------------------------------

inline nlohmann::json report_to_json(const EvalReport& report) {
    nlohmann::json j;
    j["n_hotspots"] = report.n_hotspots;
    j["n_species"] = report.n_species;
    j["mse"] = report.mse;
    j["mae"] = report.mae;
    j["top10"] = report.top10 ? nlohmann::json(*report.top10) : nlohmann::json();
    j["top30"] = report.top30 ? nlohmann::json(*report.top30) : nlohmann::json();
    j["adaptive_topk"] =
        report.adaptive_topk ? nlohmann::json(*report.adaptive_topk) : nlohmann::json();
    j["skipped_hotspots"] = report.skipped_hotspots;
    nlohmann::json species = nlohmann::json::array();
    for (const SpeciesScore& s : report.per_species) {
        species.push_back({{"species", s.species},
                           {"precision", s.precision ? nlohmann::json(*s.precision)
                                                     : nlohmann::json()},
                           {"recall", s.recall},
                           {"occurrences", s.occurrences}});
    }
    j["per_species"] = std::move(species);
    nlohmann::json hotspots = nlohmann::json::array();
    for (const HotspotScore& h : report.per_hotspot) {
        hotspots.push_back({{"hotspot_id", h.hotspot_id},
                            {"lat", h.lat},
                            {"lon", h.lon},
                            {"adaptive_topk", h.adaptive_topk},
                            {"k", h.k}});
    }
    j["per_hotspot"] = std::move(hotspots);
    return j;
}

inline void write_report_json(const EvalReport& report, const std::filesystem::path& path) {
    std::ofstream os = io::open_output(path);
    os << report_to_json(report).dump(2) << '\n';
}

inline nlohmann::json read_report_json(const std::filesystem::path& path) {
    std::ifstream is = io::open_input(path);
    nlohmann::json j;
    try {
        is >> j;
    } catch (const nlohmann::json::exception& e) {
        throw DataError("report.json: " + std::string(e.what()));
    }
    return j;
}

// per_species.csv sorted by recall descending, then species index.
inline void write_per_species_csv(const EvalReport& report, const std::filesystem::path& path) {
    std::vector<SpeciesScore> rows = report.per_species;
    std::sort(rows.begin(), rows.end(), [](const SpeciesScore& a, const SpeciesScore& b) {
        if (a.recall != b.recall) return a.recall > b.recall;
        return a.species_index < b.species_index;
    });
    std::ofstream os = io::open_output(path);
    os << "species,recall,precision,occurrences\n";
    for (const SpeciesScore& s : rows) {
        os << s.species << ',' << format_double(s.recall) << ','
           << (s.precision ? format_double(*s.precision) : "") << ',' << s.occurrences << '\n';
    }
    if (!os) throw DataError("failed writing " + path.string());
}

// One point feature per scored hotspot with [lon, lat] coordinates.
inline nlohmann::json performance_geojson(const EvalReport& report) {
    nlohmann::json features = nlohmann::json::array();
    for (const HotspotScore& h : report.per_hotspot) {
        features.push_back(
            {{"type", "Feature"},
             {"geometry", {{"type", "Point"}, {"coordinates", {h.lon, h.lat}}}},
             {"properties",
              {{"hotspot_id", h.hotspot_id}, {"adaptive_topk", h.adaptive_topk}, {"k", h.k}}}});
    }
    return {{"type", "FeatureCollection"}, {"features", std::move(features)}};
}

inline void write_performance_geojson(const EvalReport& report,
                                      const std::filesystem::path& path) {
    std::ofstream os = io::open_output(path);
    os << performance_geojson(report).dump(2) << '\n';
}

}  // namespace sdm
