#include "sdm/gbrt.hpp"

#include <gtest/gtest.h>

#include <cmath>

#include "sdm/common.hpp"
#include "test_util.hpp"

using namespace sdm;
using namespace sdm::gbrt;

namespace {

EncounterTable table_from_rates(const std::vector<std::vector<float>>& rows) {
    EncounterTable t;
    std::vector<std::string> names;
    for (std::size_t s = 0; s < rows.front().size(); ++s) names.push_back("sp" + std::to_string(s));
    t.species = SpeciesIndex::from_names(names);
    for (std::size_t h = 0; h < rows.size(); ++h) {
        Hotspot hs;
        hs.id = "H" + std::to_string(h);
        hs.n_checklists = 5;
        t.hotspots.push_back(hs);
        for (float r : rows[h]) t.rates.push_back(r);
    }
    return t;
}

// ---------------------------------------------------------------------------
// Mean baseline
// ---------------------------------------------------------------------------

TEST(MeanModel, AveragesTrainingRates) {
    const EncounterTable t = table_from_rates({{0.0f}, {0.5f}, {1.0f}});
    const MeanRateModel m = fit_mean_model(t);
    EXPECT_DOUBLE_EQ(m.values[0], 0.5);
}

TEST(MeanModel, UnobservedSpeciesIsZero) {
    const EncounterTable t = table_from_rates({{0.3f, 0.0f}, {0.5f, 0.0f}});
    const MeanRateModel m = fit_mean_model(t);
    EXPECT_DOUBLE_EQ(m.values[1], 0.0);
}

TEST(MeanModel, ConstantPredictionsViaZeroTreeEnsemble) {
    const EncounterTable t = table_from_rates({{0.25f, 0.75f}, {0.5f, 0.5f}});
    const GbrtEnsemble e = to_ensemble(fit_mean_model(t));
    const std::vector<double> a = predict_gbrt_row(e, {});
    const std::vector<double> b = predict_gbrt_row(e, {});
    EXPECT_EQ(a, b);
    EXPECT_DOUBLE_EQ(a[0], 0.375);
    EXPECT_DOUBLE_EQ(a[1], 0.625);
}

// ---------------------------------------------------------------------------
// Boosting
// ---------------------------------------------------------------------------

TEST(Gbrt, OneRoundPerfectBinarySplit) {
    // one binary feature perfectly separating targets 0...0 / 1...1
    std::vector<std::vector<double>> features;
    std::vector<std::vector<float>> targets;
    for (int i = 0; i < 6; ++i) {
        features.push_back({i < 3 ? 0.0 : 1.0});
        targets.push_back({i < 3 ? 0.0f : 1.0f});
    }
    GbrtConfig cfg;
    cfg.rounds = 1;
    cfg.max_depth = 1;
    cfg.shrinkage = 1.0;
    cfg.min_samples_leaf = 1;
    const GbrtEnsemble e = fit_gbrt(features, table_from_rates(targets), cfg);
    EXPECT_DOUBLE_EQ(predict_gbrt_row(e, {0.0})[0], 0.0);
    EXPECT_DOUBLE_EQ(predict_gbrt_row(e, {1.0})[0], 1.0);
}

TEST(Gbrt, ConstantTargetsYieldNoTrees) {
    Rng rng(1);
    std::vector<std::vector<double>> features;
    std::vector<std::vector<float>> targets;
    for (int i = 0; i < 20; ++i) {
        features.push_back({rng.uniform(), rng.uniform()});
        targets.push_back({0.3f});
    }
    GbrtConfig cfg;
    cfg.rounds = 10;
    const GbrtEnsemble e = fit_gbrt(features, table_from_rates(targets), cfg);
    EXPECT_TRUE(e.species[0].trees.empty());
    EXPECT_FLOAT_EQ(static_cast<float>(predict_gbrt_row(e, {0.1, 0.9})[0]), 0.3f);
}

TEST(Gbrt, DegenerateFeaturesYieldMeanModel) {
    std::vector<std::vector<double>> features(12, std::vector<double>{1.0, 1.0});
    std::vector<std::vector<float>> targets;
    Rng rng(2);
    for (int i = 0; i < 12; ++i) targets.push_back({static_cast<float>(rng.uniform())});
    GbrtConfig cfg;
    cfg.rounds = 5;
    const GbrtEnsemble e = fit_gbrt(features, table_from_rates(targets), cfg);
    EXPECT_TRUE(e.species[0].trees.empty());
    double mean = 0.0;
    for (const auto& row : targets) mean += row[0];
    mean /= 12.0;
    EXPECT_NEAR(predict_gbrt_row(e, {5.0, -3.0})[0], mean, 1e-12);
}

// per-species training MSE never increases with more rounds
TEST(Gbrt, TrainMseNonIncreasingInRounds) {
    Rng rng(3);
    const std::size_t n = 60;
    std::vector<std::vector<double>> features;
    std::vector<std::vector<float>> targets;
    for (std::size_t i = 0; i < n; ++i) {
        std::vector<double> f{rng.uniform(), rng.uniform(), rng.uniform()};
        const double y = 0.2 + 0.5 * f[0] + 0.2 * f[1] * f[2] + 0.05 * rng.normal();
        features.push_back(f);
        targets.push_back({static_cast<float>(std::clamp(y, 0.0, 1.0))});
    }
    GbrtConfig cfg;
    cfg.rounds = 30;
    cfg.max_depth = 3;
    cfg.min_samples_leaf = 3;
    const EncounterTable t = table_from_rates(targets);
    const GbrtEnsemble e = fit_gbrt(features, t, cfg);
    ASSERT_FALSE(e.species[0].trees.empty());

    // replay the boosting trajectory round by round
    std::vector<double> current(n, e.species[0].base);
    auto mse_now = [&] {
        double acc = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double d = current[i] - targets[i][0];
            acc += d * d;
        }
        return acc / static_cast<double>(n);
    };
    double prev = mse_now();
    for (const RegressionTree& tree : e.species[0].trees) {
        for (std::size_t i = 0; i < n; ++i) {
            current[i] += cfg.shrinkage * tree.predict(features[i]);
        }
        const double now = mse_now();
        EXPECT_LE(now, prev + 1e-12);
        prev = now;
    }
}

TEST(Gbrt, PredictionsClippedToUnitInterval) {
    // extreme shrinkage can overshoot; the clip keeps the output in range
    std::vector<std::vector<double>> features;
    std::vector<std::vector<float>> targets;
    for (int i = 0; i < 12; ++i) {
        features.push_back({static_cast<double>(i)});
        targets.push_back({i < 6 ? 0.0f : 1.0f});
    }
    GbrtConfig cfg;
    cfg.rounds = 50;
    cfg.shrinkage = 1.5;  // deliberate overshoot
    cfg.min_samples_leaf = 2;
    const GbrtEnsemble e = fit_gbrt(features, table_from_rates(targets), cfg);
    for (const auto& f : features) {
        const double p = predict_gbrt_row(e, f)[0];
        EXPECT_GE(p, 0.0);
        EXPECT_LE(p, 1.0);
    }
}

// independent recursive traversal of the serialized nodes
double traverse_oracle(const RegressionTree& tree, std::size_t node,
                       const std::vector<double>& x) {
    const TreeNode& n = tree.nodes[node];
    if (n.feature < 0) return n.value;
    return x[static_cast<std::size_t>(n.feature)] <= n.threshold
               ? traverse_oracle(tree, static_cast<std::size_t>(n.left), x)
               : traverse_oracle(tree, static_cast<std::size_t>(n.right), x);
}

TEST(Gbrt, MatchesTraversalOracle) {
    Rng rng(4);
    std::vector<std::vector<double>> features;
    std::vector<std::vector<float>> targets;
    for (int i = 0; i < 50; ++i) {
        features.push_back({rng.uniform(), rng.uniform(), rng.uniform(), rng.uniform()});
        targets.push_back({static_cast<float>(rng.uniform()),
                           static_cast<float>(rng.uniform())});
    }
    GbrtConfig cfg;
    cfg.rounds = 15;
    cfg.max_depth = 4;
    const GbrtEnsemble e = fit_gbrt(features, table_from_rates(targets), cfg);

    for (int q = 0; q < 20; ++q) {
        const std::vector<double> x{rng.uniform(), rng.uniform(), rng.uniform(),
                                    rng.uniform()};
        const std::vector<double> got = predict_gbrt_row(e, x);
        for (std::size_t s = 0; s < e.n_species(); ++s) {
            double acc = e.species[s].base;
            for (const RegressionTree& tree : e.species[s].trees) {
                acc += cfg.shrinkage * traverse_oracle(tree, 0, x);
            }
            EXPECT_DOUBLE_EQ(got[s], std::clamp(acc, 0.0, 1.0));
        }
    }
}

// axis-aligned splits only depend on the sort order, so positive rescaling
// of a feature leaves the model's predictions unchanged
TEST(Gbrt, ScaleCovariance) {
    Rng rng(5);
    std::vector<std::vector<double>> features, scaled;
    std::vector<std::vector<float>> targets;
    const double factor = 37.5;
    for (int i = 0; i < 40; ++i) {
        std::vector<double> f{rng.uniform(), rng.uniform()};
        features.push_back(f);
        scaled.push_back({f[0] * factor, f[1]});
        targets.push_back({static_cast<float>(rng.uniform())});
    }
    GbrtConfig cfg;
    cfg.rounds = 10;
    cfg.max_depth = 3;
    const EncounterTable t = table_from_rates(targets);
    const GbrtEnsemble plain = fit_gbrt(features, t, cfg);
    const GbrtEnsemble rescaled = fit_gbrt(scaled, t, cfg);
    for (int q = 0; q < 25; ++q) {
        const std::vector<double> x{rng.uniform(), rng.uniform()};
        EXPECT_DOUBLE_EQ(predict_gbrt_row(plain, x)[0],
                         predict_gbrt_row(rescaled, {x[0] * factor, x[1]})[0]);
    }
}

TEST(Gbrt, MisalignedInputsRejected) {
    GbrtConfig cfg;
    const EncounterTable t = table_from_rates({{0.1f}, {0.2f}});
    EXPECT_THROW(fit_gbrt({{0.0}}, t, cfg), DataError);
    EXPECT_THROW(fit_gbrt({{0.0}, {1.0}}, t, cfg), DataError);  // too few samples
}

TEST(Gbrt, FeatureLengthCheckedAtPrediction) {
    Rng rng(6);
    std::vector<std::vector<double>> features;
    std::vector<std::vector<float>> targets;
    for (int i = 0; i < 12; ++i) {
        features.push_back({rng.uniform(), rng.uniform()});
        targets.push_back({0.5f});
    }
    GbrtConfig cfg;
    const GbrtEnsemble e = fit_gbrt(features, table_from_rates(targets), cfg);
    EXPECT_THROW(predict_gbrt_row(e, {0.5}), DataError);
}

TEST(Gbrt, EnsembleFileRoundTrip) {
    testutil::TempDir dir("sdmg");
    Rng rng(7);
    std::vector<std::vector<double>> features;
    std::vector<std::vector<float>> targets;
    for (int i = 0; i < 30; ++i) {
        features.push_back({rng.uniform(), rng.uniform()});
        targets.push_back({static_cast<float>(rng.uniform()),
                           static_cast<float>(rng.uniform())});
    }
    GbrtConfig cfg;
    cfg.rounds = 8;
    const GbrtEnsemble e = fit_gbrt(features, table_from_rates(targets), cfg);
    write_ensemble(e, dir / "model.sdmg");
    const GbrtEnsemble back = read_ensemble(dir / "model.sdmg");
    ASSERT_EQ(back.n_species(), e.n_species());
    EXPECT_EQ(back.n_features, e.n_features);
    for (int q = 0; q < 10; ++q) {
        const std::vector<double> x{rng.uniform(), rng.uniform()};
        EXPECT_EQ(predict_gbrt_row(back, x), predict_gbrt_row(e, x));
    }
    write_ensemble(back, dir / "model2.sdmg");
    EXPECT_EQ(testutil::read_bytes(dir / "model.sdmg"),
              testutil::read_bytes(dir / "model2.sdmg"));
}

}  // namespace
