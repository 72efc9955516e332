#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <numeric>
#include <string>
#include <thread>
#include <vector>

#include "sdm/checklist.hpp"
#include "sdm/common.hpp"

namespace sdm::gbrt {

// ---------------------------------------------------------------------------
// Baseline 1: per-species training-set mean
// ---------------------------------------------------------------------------

struct MeanRateModel {
    std::vector<double> values;  // one mean per species
};

inline MeanRateModel fit_mean_model(const EncounterTable& train) {
    if (train.rows() == 0) throw DataError("empty training split");
    MeanRateModel model;
    model.values.assign(train.cols(), 0.0);
    for (std::size_t h = 0; h < train.rows(); ++h) {
        for (std::size_t s = 0; s < train.cols(); ++s) {
            model.values[s] += train.rate(h, s);
        }
    }
    for (double& v : model.values) v /= static_cast<double>(train.rows());
    return model;
}

// ---------------------------------------------------------------------------
// Baseline 2: per-species gradient boosted regression trees, squared error
// ---------------------------------------------------------------------------

struct GbrtConfig {
    std::size_t rounds = 100;
    std::size_t max_depth = 4;
    double shrinkage = 0.1;
    std::size_t min_samples_leaf = 5;

    void validate() const {
        if (rounds == 0 || max_depth == 0 || min_samples_leaf == 0 || !(shrinkage > 0.0)) {
            throw UsageError("GBRT config values must be positive");
        }
    }
};

// Binary axis-aligned node. feature == -1 marks a leaf; interior nodes route
// x[feature] <= threshold to `left`. Nodes are stored in pre-order.
struct TreeNode {
    std::int32_t feature = -1;
    double threshold = 0.0;
    double value = 0.0;
    std::int32_t left = -1;
    std::int32_t right = -1;
};

struct RegressionTree {
    std::vector<TreeNode> nodes;

    double predict(const std::vector<double>& x) const {
        std::size_t i = 0;
        while (nodes[i].feature >= 0) {
            i = static_cast<std::size_t>(x[static_cast<std::size_t>(nodes[i].feature)] <=
                                                 nodes[i].threshold
                                             ? nodes[i].left
                                             : nodes[i].right);
        }
        return nodes[i].value;
    }
};

struct SpeciesEnsemble {
    double base = 0.0;  // F_0, the training mean
    std::vector<RegressionTree> trees;
};

struct GbrtEnsemble {
    GbrtConfig config;
    std::size_t n_features = 0;  // 0 = feature-free (pure mean model)
    std::vector<SpeciesEnsemble> species;

    std::size_t n_species() const { return species.size(); }
};

namespace detail {

struct BestSplit {
    double gain = 0.0;
    std::size_t feature = 0;
    double threshold = 0.0;
    bool found = false;
};

// Exact greedy variance-reduction split over sorted feature values. The scan
// goes feature-ascending with strictly-greater gain comparison, so ties fall
// to the lowest feature index and then the lowest threshold.
inline BestSplit find_best_split(const std::vector<std::vector<double>>& rows,
                                 const std::vector<double>& residuals,
                                 const std::vector<std::size_t>& indices,
                                 std::size_t n_features, std::size_t min_samples_leaf) {
    BestSplit best;
    const std::size_t n = indices.size();
    if (n < 2 * min_samples_leaf) return best;

    double total = 0.0;
    for (std::size_t idx : indices) total += residuals[idx];
    const double parent_score = total * total / static_cast<double>(n);

    std::vector<std::pair<double, std::size_t>> sorted(n);
    for (std::size_t f = 0; f < n_features; ++f) {
        for (std::size_t i = 0; i < n; ++i) {
            sorted[i] = {rows[indices[i]][f], indices[i]};
        }
        std::sort(sorted.begin(), sorted.end());

        double left_sum = 0.0;
        for (std::size_t i = 0; i + 1 < n; ++i) {
            left_sum += residuals[sorted[i].second];
            if (sorted[i].first == sorted[i + 1].first) continue;  // no boundary here
            const std::size_t n_left = i + 1, n_right = n - n_left;
            if (n_left < min_samples_leaf || n_right < min_samples_leaf) continue;
            const double right_sum = total - left_sum;
            const double gain = left_sum * left_sum / static_cast<double>(n_left) +
                                right_sum * right_sum / static_cast<double>(n_right) -
                                parent_score;
            if (gain > best.gain + 1e-12) {
                best.gain = gain;
                best.feature = f;
                best.threshold = 0.5 * (sorted[i].first + sorted[i + 1].first);
                best.found = true;
            }
        }
    }
    return best;
}

struct TreeBuilder {
    const std::vector<std::vector<double>>& rows;
    const std::vector<double>& residuals;
    std::size_t n_features;
    const GbrtConfig& config;
    RegressionTree tree;

    // Emits nodes in pre-order: parent, left subtree, right subtree.
    std::int32_t build(const std::vector<std::size_t>& indices, std::size_t depth) {
        const auto node_id = static_cast<std::int32_t>(tree.nodes.size());
        tree.nodes.emplace_back();

        double mean = 0.0;
        for (std::size_t idx : indices) mean += residuals[idx];
        mean /= static_cast<double>(indices.size());
        tree.nodes[node_id].value = mean;

        if (depth >= config.max_depth) return node_id;
        const BestSplit split = find_best_split(rows, residuals, indices, n_features,
                                                config.min_samples_leaf);
        if (!split.found) return node_id;

        std::vector<std::size_t> left_idx, right_idx;
        for (std::size_t idx : indices) {
            (rows[idx][split.feature] <= split.threshold ? left_idx : right_idx).push_back(idx);
        }
        tree.nodes[node_id].feature = static_cast<std::int32_t>(split.feature);
        tree.nodes[node_id].threshold = split.threshold;
        tree.nodes[node_id].left = build(left_idx, depth + 1);
        tree.nodes[node_id].right = build(right_idx, depth + 1);
        return node_id;
    }
};

inline void fit_one_species(const std::vector<std::vector<double>>& rows,
                            const EncounterTable& targets, std::size_t s,
                            const GbrtConfig& config, std::size_t n_features,
                            SpeciesEnsemble& out) {
    const std::size_t n = rows.size();
    std::vector<double> y(n);
    for (std::size_t i = 0; i < n; ++i) y[i] = targets.rate(i, s);

    double base = 0.0;
    for (double v : y) base += v;
    base /= static_cast<double>(n);
    out.base = base;

    std::vector<double> residuals(n);
    for (std::size_t i = 0; i < n; ++i) residuals[i] = y[i] - base;

    std::vector<std::size_t> all(n);
    std::iota(all.begin(), all.end(), 0);

    for (std::size_t round = 0; round < config.rounds; ++round) {
        detail::TreeBuilder builder{rows, residuals, n_features, config, {}};
        builder.build(all, 0);
        if (builder.tree.nodes.size() == 1) break;  // nothing left to split on
        for (std::size_t i = 0; i < n; ++i) {
            residuals[i] -= config.shrinkage * builder.tree.predict(rows[i]);
        }
        out.trees.push_back(std::move(builder.tree));
    }
}

}  // namespace detail

// Fits one squared-error boosting ensemble per species: F_0 is the training
// mean, each round adds a depth-bounded tree on the residuals scaled by the
// shrinkage rate. Species are independent; fitting runs in parallel with
// results assembled in species order.
inline GbrtEnsemble fit_gbrt(const std::vector<std::vector<double>>& feature_rows,
                             const EncounterTable& targets, const GbrtConfig& config) {
    config.validate();
    if (feature_rows.size() != targets.rows()) {
        throw DataError("feature rows (" + std::to_string(feature_rows.size()) +
                        ") do not align with target rows (" + std::to_string(targets.rows()) +
                        ")");
    }
    if (feature_rows.size() < 2 * config.min_samples_leaf) {
        throw DataError("too few samples to fit trees: need at least " +
                        std::to_string(2 * config.min_samples_leaf));
    }
    const std::size_t n_features = feature_rows.front().size();
    for (const auto& row : feature_rows) {
        if (row.size() != n_features) throw DataError("ragged feature rows");
    }

    GbrtEnsemble ensemble;
    ensemble.config = config;
    ensemble.n_features = n_features;
    ensemble.species.resize(targets.cols());

    const std::size_t n_workers =
        std::min<std::size_t>(thread_count(), std::max<std::size_t>(1, targets.cols()));
    if (n_workers <= 1 || targets.cols() <= 1) {
        for (std::size_t s = 0; s < targets.cols(); ++s) {
            detail::fit_one_species(feature_rows, targets, s, config, n_features,
                                    ensemble.species[s]);
        }
    } else {
        std::vector<std::thread> workers;
        for (std::size_t w = 0; w < n_workers; ++w) {
            workers.emplace_back([&, w] {
                for (std::size_t s = w; s < targets.cols(); s += n_workers) {
                    detail::fit_one_species(feature_rows, targets, s, config, n_features,
                                            ensemble.species[s]);
                }
            });
        }
        for (std::thread& t : workers) t.join();
    }
    return ensemble;
}

// clip_[0,1](F_0 + shrinkage * sum of trees), per species.
inline std::vector<double> predict_gbrt_row(const GbrtEnsemble& ensemble,
                                            const std::vector<double>& features) {
    if (ensemble.n_features > 0 && features.size() != ensemble.n_features) {
        throw DataError("feature length " + std::to_string(features.size()) +
                        " does not match ensemble trained on " +
                        std::to_string(ensemble.n_features));
    }
    std::vector<double> out(ensemble.n_species());
    for (std::size_t s = 0; s < ensemble.n_species(); ++s) {
        double acc = ensemble.species[s].base;
        for (const RegressionTree& tree : ensemble.species[s].trees) {
            acc += ensemble.config.shrinkage * tree.predict(features);
        }
        out[s] = std::clamp(acc, 0.0, 1.0);
    }
    return out;
}

inline std::vector<double> predict_gbrt(const GbrtEnsemble& ensemble,
                                        const std::vector<std::vector<double>>& feature_rows) {
    std::vector<double> out;
    out.reserve(feature_rows.size() * ensemble.n_species());
    for (const auto& row : feature_rows) {
        const std::vector<double> p = predict_gbrt_row(ensemble, row);
        out.insert(out.end(), p.begin(), p.end());
    }
    return out;
}

// A mean model as a zero-tree ensemble; the two predictors agree on every
// input, which keeps one prediction path in the pipeline.
inline GbrtEnsemble to_ensemble(const MeanRateModel& model) {
    GbrtEnsemble ensemble;
    ensemble.config.rounds = 0;
    ensemble.n_features = 0;
    ensemble.species.resize(model.values.size());
    for (std::size_t s = 0; s < model.values.size(); ++s) {
        ensemble.species[s].base = model.values[s];
    }
    return ensemble;
}

// ---------------------------------------------------------------------------
// SDMG container: magic "SDMG", u32 version, config block, per-species tree
// lists with nodes serialized in pre-order.
// ---------------------------------------------------------------------------

inline constexpr std::uint32_t kEnsembleFormatVersion = 1;

inline void write_ensemble(const GbrtEnsemble& ensemble, const std::filesystem::path& path) {
    std::ofstream os = io::open_output(path);
    io::write_bytes(os, "SDMG", 4);
    io::write_u32(os, kEnsembleFormatVersion);
    io::write_u32(os, static_cast<std::uint32_t>(ensemble.config.rounds));
    io::write_u32(os, static_cast<std::uint32_t>(ensemble.config.max_depth));
    io::write_f64(os, ensemble.config.shrinkage);
    io::write_u32(os, static_cast<std::uint32_t>(ensemble.config.min_samples_leaf));
    io::write_u32(os, static_cast<std::uint32_t>(ensemble.n_species()));
    io::write_u32(os, static_cast<std::uint32_t>(ensemble.n_features));
    for (const SpeciesEnsemble& sp : ensemble.species) {
        io::write_f64(os, sp.base);
        io::write_u32(os, static_cast<std::uint32_t>(sp.trees.size()));
        for (const RegressionTree& tree : sp.trees) {
            io::write_u32(os, static_cast<std::uint32_t>(tree.nodes.size()));
            for (const TreeNode& node : tree.nodes) {
                io::write_u32(os, static_cast<std::uint32_t>(node.feature));
                io::write_f64(os, node.threshold);
                io::write_f64(os, node.value);
                io::write_u32(os, static_cast<std::uint32_t>(node.left));
                io::write_u32(os, static_cast<std::uint32_t>(node.right));
            }
        }
    }
    if (!os) throw DataError("failed writing " + path.string());
}

inline GbrtEnsemble read_ensemble(const std::filesystem::path& path) {
    std::ifstream is = io::open_input(path);
    io::expect_magic(is, "SDMG", "SDMG");
    const std::uint32_t version = io::read_u32(is, "version");
    if (version != kEnsembleFormatVersion) {
        throw DataError("unsupported SDMG version " + std::to_string(version));
    }
    GbrtEnsemble ensemble;
    ensemble.config.rounds = io::read_u32(is, "rounds");
    ensemble.config.max_depth = io::read_u32(is, "max_depth");
    ensemble.config.shrinkage = io::read_f64(is, "shrinkage");
    ensemble.config.min_samples_leaf = io::read_u32(is, "min_samples_leaf");
    const auto n_species =
        io::checked_count(io::read_u32(is, "species count"), 1'000'000, "species");
    ensemble.n_features = io::read_u32(is, "feature count");
    ensemble.species.resize(n_species);
    for (SpeciesEnsemble& sp : ensemble.species) {
        sp.base = io::read_f64(is, "base");
        const auto n_trees = io::checked_count(io::read_u32(is, "tree count"), 1'000'000, "tree");
        sp.trees.resize(n_trees);
        for (RegressionTree& tree : sp.trees) {
            const auto n_nodes =
                io::checked_count(io::read_u32(is, "node count"), 100'000'000, "node");
            tree.nodes.resize(n_nodes);
            for (TreeNode& node : tree.nodes) {
                node.feature = static_cast<std::int32_t>(io::read_u32(is, "feature"));
                node.threshold = io::read_f64(is, "threshold");
                node.value = io::read_f64(is, "value");
                node.left = static_cast<std::int32_t>(io::read_u32(is, "left"));
                node.right = static_cast<std::int32_t>(io::read_u32(is, "right"));
            }
        }
    }
    return ensemble;
}

}  // namespace sdm::gbrt
