#include "sdm/metrics.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <set>

#include "sdm/common.hpp"
#include "test_util.hpp"

using namespace sdm;

namespace {

// ---------------------------------------------------------------------------
// MSE / MAE
// ---------------------------------------------------------------------------

TEST(Regression, PerfectPredictionsScoreZero) {
    const std::vector<float> v{0.1f, 0.5f, 0.9f};
    EXPECT_DOUBLE_EQ(mse(v, v), 0.0);
    EXPECT_DOUBLE_EQ(mae(v, v), 0.0);
}

TEST(Regression, SingleCellClosedForm) {
    EXPECT_NEAR(mse({0.2f}, {0.5f}), 0.09, 1e-7);
    EXPECT_NEAR(mae({0.2f}, {0.5f}), 0.3, 1e-7);
}

TEST(Regression, MatchesElementLoopOracle) {
    Rng rng(1);
    std::vector<float> a(35), b(35);  // 5 x 7
    for (std::size_t i = 0; i < a.size(); ++i) {
        a[i] = static_cast<float>(rng.uniform());
        b[i] = static_cast<float>(rng.uniform());
    }
    double se = 0.0, ae = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
        se += d * d;
        ae += std::abs(d);
    }
    EXPECT_NEAR(mse(a, b), se / 35.0, 1e-12);
    EXPECT_NEAR(mae(a, b), ae / 35.0, 1e-12);
}

TEST(Regression, ShapeMismatchRejected) {
    EXPECT_THROW(mse({0.1f}, {0.1f, 0.2f}), DataError);
}

// ---------------------------------------------------------------------------
// Top-k
// ---------------------------------------------------------------------------

TEST(TopK, SpecWorkedExample) {
    // species A,B,C,D; prediction ranking (A,D,B), observed nonzero {A,B,C}
    const std::vector<float> pred{0.9f, 0.5f, 0.1f, 0.8f};
    const std::vector<float> truth{0.5f, 0.4f, 0.3f, 0.0f};
    const auto v = top_k_accuracy(pred.data(), truth.data(), 4, 3);
    ASSERT_TRUE(v.has_value());
    EXPECT_DOUBLE_EQ(*v, 2.0 / 3.0);  // {A, B} of 3
}

TEST(TopK, IdenticalRowsWithEnoughSpecies) {
    const std::vector<float> row{0.9f, 0.7f, 0.5f, 0.3f, 0.1f};
    const auto v = top_k_accuracy(row.data(), row.data(), 5, 3);
    ASSERT_TRUE(v.has_value());
    EXPECT_DOUBLE_EQ(*v, 1.0);
}

TEST(TopK, AllZeroTruthIsUndefined) {
    const std::vector<float> pred{0.9f, 0.5f};
    const std::vector<float> truth{0.0f, 0.0f};
    EXPECT_FALSE(top_k_accuracy(pred.data(), truth.data(), 2, 1).has_value());
}

TEST(TopK, KLargerThanSpeciesCountRejected) {
    const std::vector<float> row{0.5f, 0.5f};
    EXPECT_THROW(top_k_accuracy(row.data(), row.data(), 2, 3), UsageError);
}

TEST(TopK, DenominatorRuleFlag) {
    // 2 observed species, k = 3: restricted denominator divides by 2, literal by 3
    const std::vector<float> pred{0.9f, 0.8f, 0.7f, 0.1f};
    const std::vector<float> truth{0.5f, 0.4f, 0.0f, 0.0f};
    EvalConfig min_rule;  // default
    EvalConfig k_rule;
    k_rule.topk_denominator = TopKDenominator::k;
    EXPECT_DOUBLE_EQ(*top_k_accuracy(pred.data(), truth.data(), 4, 3, min_rule), 1.0);
    EXPECT_DOUBLE_EQ(*top_k_accuracy(pred.data(), truth.data(), 4, 3, k_rule), 2.0 / 3.0);
}

TEST(TopK, TiesBreakTowardsLowestIndex) {
    // all predictions equal: the top-2 set is {0, 1} by the tie rule
    const std::vector<float> pred{0.5f, 0.5f, 0.5f};
    const std::vector<float> truth{0.0f, 0.3f, 0.3f};
    const auto v = top_k_accuracy(pred.data(), truth.data(), 3, 2);
    // predicted {0,1}, observed top-2 {1,2} -> intersection {1}
    EXPECT_DOUBLE_EQ(*v, 0.5);
}

TEST(AdaptiveTopK, SingleObservedSpecies) {
    const std::vector<float> truth{0.0f, 0.6f, 0.0f};
    const std::vector<float> hit{0.1f, 0.9f, 0.2f};
    const std::vector<float> miss{0.9f, 0.1f, 0.2f};
    EXPECT_DOUBLE_EQ(*adaptive_top_k(hit.data(), truth.data(), 3), 1.0);
    EXPECT_DOUBLE_EQ(*adaptive_top_k(miss.data(), truth.data(), 3), 0.0);
}

// independent oracle: recompute k, then do the set intersection by hand
TEST(AdaptiveTopK, MatchesBruteForceOracle) {
    Rng rng(2);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t n = 8 + rng.uniform_index(10);
        std::vector<float> pred(n), truth(n);
        for (std::size_t s = 0; s < n; ++s) {
            pred[s] = static_cast<float>(rng.uniform());
            truth[s] = rng.bernoulli(0.4) ? static_cast<float>(rng.uniform(0.01, 1.0)) : 0.0f;
        }
        const auto got = adaptive_top_k(pred.data(), truth.data(), n);

        std::vector<std::size_t> observed;
        for (std::size_t s = 0; s < n; ++s) {
            if (truth[s] > 0.0f) observed.push_back(s);
        }
        if (observed.empty()) {
            EXPECT_FALSE(got.has_value());
            continue;
        }
        const std::size_t k = observed.size();
        // top-k of predictions by repeated argmax
        std::vector<std::size_t> pred_top;
        std::set<std::size_t> used;
        for (std::size_t round = 0; round < k; ++round) {
            std::size_t best = n;
            for (std::size_t s = 0; s < n; ++s) {
                if (used.count(s)) continue;
                if (best == n || pred[s] > pred[best]) best = s;
            }
            pred_top.push_back(best);
            used.insert(best);
        }
        // observed top-k = all observed (k = #observed)
        std::size_t hits = 0;
        for (std::size_t s : pred_top) {
            hits += std::count(observed.begin(), observed.end(), s);
        }
        ASSERT_TRUE(got.has_value());
        EXPECT_DOUBLE_EQ(*got, static_cast<double>(hits) / static_cast<double>(k));
    }
}

// strictly increasing transforms of the predictions leave rank metrics alone
TEST(RankMetrics, InvariantUnderMonotoneTransforms) {
    Rng rng(3);
    const std::size_t n = 12;
    std::vector<float> pred(n), truth(n);
    for (std::size_t s = 0; s < n; ++s) {
        pred[s] = static_cast<float>(rng.uniform(0.01, 0.99));
        truth[s] = rng.bernoulli(0.5) ? static_cast<float>(rng.uniform()) : 0.0f;
    }
    std::vector<float> squashed(n), shifted(n);
    for (std::size_t s = 0; s < n; ++s) {
        squashed[s] = pred[s] * pred[s];               // monotone on (0,1)
        shifted[s] = 0.5f * pred[s] + 0.2f;
    }
    for (std::size_t k : {std::size_t{1}, std::size_t{3}, std::size_t{7}}) {
        EXPECT_EQ(top_k_accuracy(pred.data(), truth.data(), n, k),
                  top_k_accuracy(squashed.data(), truth.data(), n, k));
        EXPECT_EQ(top_k_accuracy(pred.data(), truth.data(), n, k),
                  top_k_accuracy(shifted.data(), truth.data(), n, k));
    }
    EXPECT_EQ(adaptive_top_k(pred.data(), truth.data(), n),
              adaptive_top_k(squashed.data(), truth.data(), n));
}

// ---------------------------------------------------------------------------
// Per-species precision / recall
// ---------------------------------------------------------------------------

EncounterTable with_rates(std::vector<std::vector<float>> rows) {
    EncounterTable t;
    std::vector<std::string> names;
    for (std::size_t s = 0; s < rows.front().size(); ++s) {
        names.push_back("sp" + std::to_string(s));
    }
    t.species = SpeciesIndex::from_names(names);
    for (std::size_t h = 0; h < rows.size(); ++h) {
        Hotspot hs;
        hs.id = "H" + std::to_string(h);
        hs.lat = 30.0 + h;
        hs.lon = -100.0 - static_cast<double>(h);
        t.hotspots.push_back(hs);
        for (float r : rows[h]) t.rates.push_back(r);
    }
    return t;
}

TEST(PerSpecies, PerfectPredictionsScoreOne) {
    const EncounterTable truth = with_rates({{0.5f, 0.0f, 0.3f}, {0.0f, 0.4f, 0.2f}});
    const auto scores = per_species_precision_recall(truth, truth);
    for (const SpeciesScore& s : scores) {
        ASSERT_TRUE(s.precision.has_value());
        EXPECT_DOUBLE_EQ(*s.precision, 1.0);
        EXPECT_DOUBLE_EQ(s.recall, 1.0);
    }
}

TEST(PerSpecies, NeverPredictedSpeciesHasZeroRecall) {
    // species 0 observed at 4 hotspots but never makes the predicted set
    std::vector<std::vector<float>> truth_rows, pred_rows;
    for (int h = 0; h < 4; ++h) {
        truth_rows.push_back({0.9f, 0.5f, 0.0f});   // species 0 and 1 observed
        pred_rows.push_back({0.0f, 0.9f, 0.8f});    // top-2 predicted = {1, 2}
    }
    const auto scores =
        per_species_precision_recall(with_rates(pred_rows), with_rates(truth_rows));
    ASSERT_EQ(scores.size(), 2u);  // species 2 never observed -> omitted
    EXPECT_EQ(scores[0].species, "sp0");
    EXPECT_DOUBLE_EQ(scores[0].recall, 0.0);
    EXPECT_EQ(scores[0].occurrences, 4u);
    EXPECT_FALSE(scores[0].precision.has_value());  // never predicted anywhere
    EXPECT_DOUBLE_EQ(scores[1].recall, 1.0);
}

TEST(PerSpecies, MatchesConfusionMatrixOracle) {
    Rng rng(4);
    const std::size_t n_hotspots = 25, n_species = 9;
    std::vector<std::vector<float>> truth_rows(n_hotspots), pred_rows(n_hotspots);
    for (std::size_t h = 0; h < n_hotspots; ++h) {
        for (std::size_t s = 0; s < n_species; ++s) {
            truth_rows[h].push_back(rng.bernoulli(0.35)
                                        ? static_cast<float>(rng.uniform(0.05, 1.0))
                                        : 0.0f);
            pred_rows[h].push_back(static_cast<float>(rng.uniform()));
        }
    }
    const EncounterTable truth = with_rates(truth_rows);
    const EncounterTable preds = with_rates(pred_rows);
    const auto scores = per_species_precision_recall(preds, truth);

    // oracle tally
    std::vector<std::uint64_t> tp(n_species, 0), fp(n_species, 0), fn(n_species, 0);
    for (std::size_t h = 0; h < n_hotspots; ++h) {
        std::vector<std::size_t> observed;
        for (std::size_t s = 0; s < n_species; ++s) {
            if (truth_rows[h][s] > 0.0f) observed.push_back(s);
        }
        if (observed.empty()) continue;
        // predicted-present = adaptive top-k of the prediction row
        std::vector<std::size_t> order(n_species);
        std::iota(order.begin(), order.end(), 0);
        std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
            if (pred_rows[h][a] != pred_rows[h][b]) return pred_rows[h][a] > pred_rows[h][b];
            return a < b;
        });
        const std::set<std::size_t> predicted(order.begin(),
                                              order.begin() + observed.size());
        const std::set<std::size_t> observed_set(observed.begin(), observed.end());
        for (std::size_t s = 0; s < n_species; ++s) {
            const bool p = predicted.count(s) > 0, o = observed_set.count(s) > 0;
            tp[s] += p && o;
            fp[s] += p && !o;
            fn[s] += !p && o;
        }
    }
    for (const SpeciesScore& score : scores) {
        const std::size_t s = score.species_index;
        EXPECT_EQ(score.occurrences, tp[s] + fn[s]);
        EXPECT_DOUBLE_EQ(score.recall,
                         static_cast<double>(tp[s]) / static_cast<double>(tp[s] + fn[s]));
        if (tp[s] + fp[s] > 0) {
            ASSERT_TRUE(score.precision.has_value());
            EXPECT_DOUBLE_EQ(*score.precision,
                             static_cast<double>(tp[s]) / static_cast<double>(tp[s] + fp[s]));
        } else {
            EXPECT_FALSE(score.precision.has_value());
        }
    }
}

TEST(PerSpecies, FullPredictionSetHasPerfectRecall) {
    // degenerate check: if every species is predicted present (k = n at each
    // hotspot can't happen through adaptive top-k unless all species are
    // observed, so emulate with truth = everything observed)
    Rng rng(5);
    std::vector<std::vector<float>> truth_rows(6), pred_rows(6);
    for (std::size_t h = 0; h < 6; ++h) {
        for (std::size_t s = 0; s < 5; ++s) {
            truth_rows[h].push_back(static_cast<float>(rng.uniform(0.05, 1.0)));
            pred_rows[h].push_back(static_cast<float>(rng.uniform()));
        }
    }
    const auto scores =
        per_species_precision_recall(with_rates(pred_rows), with_rates(truth_rows));
    for (const SpeciesScore& s : scores) EXPECT_DOUBLE_EQ(s.recall, 1.0);
}

// ---------------------------------------------------------------------------
// Aggregate report
// ---------------------------------------------------------------------------

TEST(Evaluate, PerfectPredictions) {
    EncounterTable truth = testutil::random_table(20, 31, 6, 0.4);
    const EvalReport report = evaluate(truth, truth);
    EXPECT_DOUBLE_EQ(report.mse, 0.0);
    EXPECT_DOUBLE_EQ(report.mae, 0.0);
    ASSERT_TRUE(report.adaptive_topk.has_value());
    EXPECT_DOUBLE_EQ(*report.adaptive_topk, 1.0);
    ASSERT_TRUE(report.top10.has_value());
    EXPECT_DOUBLE_EQ(*report.top10, 1.0);
    ASSERT_TRUE(report.top30.has_value());
    EXPECT_DOUBLE_EQ(*report.top30, 1.0);
}

TEST(Evaluate, AggregatesMatchPerHotspotEntries) {
    const EncounterTable truth = testutil::random_table(30, 31, 7, 0.5);
    const EncounterTable preds = testutil::random_table(30, 31, 8, 0.0);
    const EvalReport report = evaluate(preds, truth);
    ASSERT_TRUE(report.adaptive_topk.has_value());
    double acc = 0.0;
    for (const HotspotScore& h : report.per_hotspot) acc += h.adaptive_topk;
    EXPECT_NEAR(*report.adaptive_topk, acc / static_cast<double>(report.per_hotspot.size()),
                1e-12);
    EXPECT_EQ(report.per_hotspot.size() + report.skipped_hotspots, truth.rows());
}

TEST(Evaluate, SkipsAllZeroRowsAndCounts) {
    EncounterTable truth = testutil::random_table(3, 5, 9, 0.0);
    for (std::size_t s = 0; s < 5; ++s) truth.rate(1, s) = 0.0f;  // row 1 has no species
    const EncounterTable preds = testutil::random_table(3, 5, 10, 0.0);
    const EvalReport report = evaluate(preds, truth);
    EXPECT_EQ(report.skipped_hotspots, 1u);
    EXPECT_EQ(report.per_hotspot.size(), 2u);
}

TEST(Evaluate, MisalignmentRejected) {
    const EncounterTable truth = testutil::random_table(4, 3, 11);
    EncounterTable preds = truth;
    std::swap(preds.hotspots[0], preds.hotspots[1]);
    EXPECT_THROW(evaluate(preds, truth), DataError);
}

TEST(Evaluate, SmallSpeciesCountDisablesFixedK) {
    const EncounterTable truth = testutil::random_table(4, 5, 12, 0.3);
    const EvalReport report = evaluate(truth, truth);
    EXPECT_FALSE(report.top10.has_value());  // only 5 species
    EXPECT_FALSE(report.top30.has_value());
}

// permuting species columns identically on both sides changes nothing
TEST(Evaluate, PermutationInvariance) {
    const std::size_t n = 31;
    const EncounterTable truth = testutil::random_table(15, n, 13, 0.5);
    const EncounterTable preds = testutil::random_table(15, n, 14, 0.0);
    const EvalReport base = evaluate(preds, truth);

    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    Rng rng(15);
    rng.shuffle(perm);

    auto permute = [&](const EncounterTable& t) {
        EncounterTable out = t;
        std::vector<std::string> names(n);
        for (std::size_t s = 0; s < n; ++s) names[perm[s]] = t.species.names[s];
        out.species = SpeciesIndex::from_names(names);
        for (std::size_t h = 0; h < t.rows(); ++h) {
            for (std::size_t s = 0; s < n; ++s) {
                out.rates[h * n + perm[s]] = t.rates[h * n + s];
            }
        }
        return out;
    };
    const EvalReport permuted = evaluate(permute(preds), permute(truth));
    EXPECT_DOUBLE_EQ(permuted.mse, base.mse);
    EXPECT_DOUBLE_EQ(permuted.mae, base.mae);
    EXPECT_EQ(permuted.top10, base.top10);
    EXPECT_EQ(permuted.top30, base.top30);
    EXPECT_EQ(permuted.adaptive_topk, base.adaptive_topk);
}

TEST(Evaluate, DeterministicReport) {
    const EncounterTable truth = testutil::random_table(10, 31, 16, 0.5);
    const EncounterTable preds = testutil::random_table(10, 31, 17, 0.0);
    const nlohmann::json a = report_to_json(evaluate(preds, truth));
    const nlohmann::json b = report_to_json(evaluate(preds, truth));
    EXPECT_EQ(a.dump(), b.dump());
}

// ---------------------------------------------------------------------------
// Artifacts
// ---------------------------------------------------------------------------

TEST(GeoJson, OneFeaturePerHotspotWithLonLatOrder) {
    const EncounterTable truth = with_rates({{0.5f}, {0.6f}, {0.7f}});
    const EvalReport report = evaluate(truth, truth);
    const nlohmann::json geo = performance_geojson(report);
    EXPECT_EQ(geo.at("type"), "FeatureCollection");
    ASSERT_EQ(geo.at("features").size(), 3u);
    const auto& feature = geo.at("features")[1];
    EXPECT_EQ(feature.at("geometry").at("type"), "Point");
    // coordinates are [lon, lat]
    EXPECT_DOUBLE_EQ(feature.at("geometry").at("coordinates")[0].get<double>(),
                     truth.hotspots[1].lon);
    EXPECT_DOUBLE_EQ(feature.at("geometry").at("coordinates")[1].get<double>(),
                     truth.hotspots[1].lat);
    EXPECT_EQ(feature.at("properties").at("hotspot_id"), "H1");
}

TEST(GeoJson, FileRoundTripPreservesValues) {
    testutil::TempDir dir("geojson");
    const EncounterTable truth = with_rates({{0.5f, 0.2f}, {0.0f, 0.9f}});
    const EvalReport report = evaluate(truth, truth);
    write_performance_geojson(report, dir / "perf.geojson");
    std::ifstream is(dir / "perf.geojson");
    nlohmann::json parsed;
    is >> parsed;
    EXPECT_EQ(parsed, performance_geojson(report));
}

TEST(PerSpeciesCsv, SortedByRecallThenIndex) {
    testutil::TempDir dir("per_species");
    EvalReport report;
    report.per_species = {
        SpeciesScore{0, "alpha", 0.5, 0.25, 4},
        SpeciesScore{1, "beta", 1.0, 1.0, 2},
        SpeciesScore{2, "gamma", std::nullopt, 0.25, 8},
    };
    write_per_species_csv(report, dir / "per_species.csv");
    const std::string text = testutil::read_text(dir / "per_species.csv");
    const auto lines = split(text, '\n');
    EXPECT_EQ(lines[0], "species,recall,precision,occurrences");
    EXPECT_EQ(lines[1], "beta,1,1,2");
    EXPECT_EQ(lines[2], "alpha,0.25,0.5,4");   // index 0 before index 2 at equal recall
    EXPECT_EQ(lines[3], "gamma,0.25,,8");      // absent precision stays empty
}

TEST(ReportJson, NullsForUndefinedAggregates) {
    testutil::TempDir dir("report");
    const EncounterTable truth = with_rates({{0.5f, 0.1f}});  // 2 species -> no top10/top30
    const EvalReport report = evaluate(truth, truth);
    write_report_json(report, dir / "report.json");
    const nlohmann::json j = read_report_json(dir / "report.json");
    EXPECT_TRUE(j.at("top10").is_null());
    EXPECT_TRUE(j.at("top30").is_null());
    EXPECT_DOUBLE_EQ(j.at("adaptive_topk").get<double>(), 1.0);
}

}  // namespace
