#include "sdm/masking.hpp"

#include <gtest/gtest.h>

#include <set>

#include "sdm/common.hpp"
#include "test_util.hpp"

using namespace sdm;

namespace {

Checklist cl(const std::string& hotspot, std::set<std::size_t> species) {
    return Checklist{hotspot, std::move(species), "2021-06-01"};
}

Hotspot hs(const std::string& id, const std::string& region) {
    Hotspot h;
    h.id = id;
    h.region_id = region;
    h.n_checklists = 0;
    return h;
}

// ---------------------------------------------------------------------------
// Hard masking
// ---------------------------------------------------------------------------

TEST(HardMask, ZeroesDisallowedPredictions) {
    EncounterTable preds = testutil::random_table(2, 2, 1);
    preds.hotspots[0].region_id = "R_out";
    preds.hotspots[1].region_id = "R_in";
    preds.rate(0, 0) = 0.3f;
    preds.rate(1, 0) = 0.4f;
    RangeMap map;
    map.species_index = 0;
    map.available = true;
    map.allowed_regions = {"R_in"};
    const EncounterTable out = hard_mask(preds, {map, RangeMap{1, {}, false}});
    EXPECT_EQ(out.rate(0, 0), 0.0f);
    EXPECT_EQ(out.rate(1, 0), 0.4f);
    EXPECT_EQ(out.rate(0, 1), preds.rate(0, 1));  // unavailable map untouched
}

TEST(HardMask, Idempotent) {
    EncounterTable preds = testutil::random_table(5, 3, 2);
    std::vector<RangeMap> maps(3);
    maps[0] = RangeMap{0, {"R0"}, true};
    maps[2] = RangeMap{2, {"R1", "R2"}, true};
    const EncounterTable once = hard_mask(preds, maps);
    const EncounterTable twice = hard_mask(once, maps);
    EXPECT_EQ(once.rates, twice.rates);
}

// ---------------------------------------------------------------------------
// Soft-mask factors
// ---------------------------------------------------------------------------

TEST(SoftMask, FactorFromPrevalenceRatio) {
    // region R0: 4 of 10 checklists report the species; global: 10 of 100
    const SpeciesIndex species = SpeciesIndex::from_names({"A"});
    std::vector<Hotspot> hotspots = {hs("H_r", "R0"), hs("H_w", "R1")};
    std::vector<Checklist> checklists;
    for (int i = 0; i < 10; ++i) checklists.push_back(cl("H_r", i < 4 ? std::set<std::size_t>{0} : std::set<std::size_t>{}));
    for (int i = 0; i < 90; ++i) checklists.push_back(cl("H_w", i < 6 ? std::set<std::size_t>{0} : std::set<std::size_t>{}));
    const SoftMaskFactors f =
        compute_soft_mask_factors(checklists, hotspots, species, {"R0", "R1"});
    EXPECT_DOUBLE_EQ(f.factors.at("R0")[0], (4.0 / 10.0) / (10.0 / 100.0));  // 4.0
    EXPECT_EQ(f.total_checklists, 100u);
    EXPECT_EQ(f.region_checklists.at("R0"), 10u);
}

TEST(SoftMask, EqualPrevalenceIsNeutral) {
    const SpeciesIndex species = SpeciesIndex::from_names({"A"});
    std::vector<Hotspot> hotspots = {hs("H_r", "R0"), hs("H_w", "R1")};
    std::vector<Checklist> checklists;
    // both regions report at rate 1/2
    for (int i = 0; i < 10; ++i) checklists.push_back(cl("H_r", i % 2 ? std::set<std::size_t>{0} : std::set<std::size_t>{}));
    for (int i = 0; i < 30; ++i) checklists.push_back(cl("H_w", i % 2 ? std::set<std::size_t>{0} : std::set<std::size_t>{}));
    const SoftMaskFactors f =
        compute_soft_mask_factors(checklists, hotspots, species, {"R0", "R1"});
    EXPECT_DOUBLE_EQ(f.factors.at("R0")[0], 1.0);
    EXPECT_DOUBLE_EQ(f.factors.at("R1")[0], 1.0);
}

TEST(SoftMask, ZeroDenominatorConventions) {
    const SpeciesIndex species = SpeciesIndex::from_names({"never_seen", "seen"});
    std::vector<Hotspot> hotspots = {hs("H0", "R0")};
    std::vector<Checklist> checklists = {cl("H0", {1}), cl("H0", {})};
    const SoftMaskFactors f =
        compute_soft_mask_factors(checklists, hotspots, species, {"R0", "R_empty"});
    // species with zero global reports: c = 0
    EXPECT_DOUBLE_EQ(f.factors.at("R0")[0], 0.0);
    // region with zero checklists: neutral c = 1
    EXPECT_DOUBLE_EQ(f.factors.at("R_empty")[0], 1.0);
    EXPECT_DOUBLE_EQ(f.factors.at("R_empty")[1], 1.0);
}

TEST(SoftMask, EmptyTrainingSetRejected) {
    const SpeciesIndex species = SpeciesIndex::from_names({"A"});
    EXPECT_THROW(compute_soft_mask_factors({}, {}, species, {"R0"}), DataError);
}

// brute-force recount of both fractions on a random checklist set
TEST(SoftMask, MatchesTallyOracle) {
    Rng rng(11);
    const std::size_t n_species = 6, n_regions = 3, n_hotspots = 12;
    std::vector<std::string> names;
    for (std::size_t s = 0; s < n_species; ++s) names.push_back("sp" + std::to_string(s));
    const SpeciesIndex species = SpeciesIndex::from_names(names);

    std::vector<Hotspot> hotspots;
    std::set<std::string> regions;
    for (std::size_t h = 0; h < n_hotspots; ++h) {
        const std::string region = "R" + std::to_string(h % n_regions);
        hotspots.push_back(hs("H" + std::to_string(h), region));
        regions.insert(region);
    }
    std::vector<Checklist> checklists;
    for (int i = 0; i < 400; ++i) {
        Checklist c;
        c.hotspot_id = "H" + std::to_string(rng.uniform_index(n_hotspots));
        for (std::size_t s = 0; s < n_species; ++s) {
            if (rng.bernoulli(0.2)) c.species_reported.insert(s);
        }
        checklists.push_back(c);
    }

    const SoftMaskFactors f = compute_soft_mask_factors(checklists, hotspots, species, regions);

    for (const std::string& region : regions) {
        for (std::size_t s = 0; s < n_species; ++s) {
            std::uint64_t in_region = 0, region_reports = 0, global_reports = 0;
            for (const Checklist& c : checklists) {
                const std::string& r = hotspots[std::stoul(c.hotspot_id.substr(1))].region_id;
                const bool reports = c.species_reported.count(s) > 0;
                global_reports += reports;
                if (r == region) {
                    ++in_region;
                    region_reports += reports;
                }
            }
            double expected;
            if (global_reports == 0) {
                expected = 0.0;
            } else if (in_region == 0) {
                expected = 1.0;
            } else {
                expected = (static_cast<double>(region_reports) / static_cast<double>(in_region)) /
                           (static_cast<double>(global_reports) /
                            static_cast<double>(checklists.size()));
            }
            EXPECT_EQ(f.factors.at(region)[s], expected) << region << " sp" << s;
        }
    }
}

// ---------------------------------------------------------------------------
// Applying the soft mask
// ---------------------------------------------------------------------------

SoftMaskFactors single_factor(const std::string& region, std::vector<double> c) {
    SoftMaskFactors f;
    f.n_species = c.size();
    f.factors[region] = std::move(c);
    return f;
}

TEST(SoftMask, ClipsAtOne) {
    EncounterTable preds = testutil::random_table(1, 1, 3);
    preds.hotspots[0].region_id = "R0";
    preds.rate(0, 0) = 0.6f;
    const EncounterTable out = apply_soft_mask(preds, single_factor("R0", {2.0}));
    EXPECT_EQ(out.rate(0, 0), 1.0f);
}

TEST(SoftMask, NeutralFactorIsIdentity) {
    EncounterTable preds = testutil::random_table(4, 3, 4);
    for (Hotspot& h : preds.hotspots) h.region_id = "R0";
    const EncounterTable out = apply_soft_mask(preds, single_factor("R0", {1.0, 1.0, 1.0}));
    EXPECT_EQ(out.rates, preds.rates);
}

TEST(SoftMask, ZeroFactorZeroesPrediction) {
    EncounterTable preds = testutil::random_table(2, 1, 5);
    for (Hotspot& h : preds.hotspots) h.region_id = "R0";
    const EncounterTable out = apply_soft_mask(preds, single_factor("R0", {0.0}));
    for (float r : out.rates) EXPECT_EQ(r, 0.0f);
}

TEST(SoftMask, UnknownRegionLeftUntouched) {
    EncounterTable preds = testutil::random_table(1, 1, 6);
    preds.hotspots[0].region_id = "R_unknown";
    const EncounterTable out = apply_soft_mask(preds, single_factor("R0", {0.0}));
    EXPECT_EQ(out.rates, preds.rates);
}

TEST(SoftMask, OutputAlwaysInUnitInterval) {
    Rng rng(12);
    EncounterTable preds = testutil::random_table(10, 4, 7);
    SoftMaskFactors f;
    f.n_species = 4;
    for (const std::string& region : {"R0", "R1", "R2"}) {
        std::vector<double> c(4);
        for (double& v : c) v = rng.uniform(0.0, 3.0);
        f.factors[region] = c;
    }
    const EncounterTable out = apply_soft_mask(preds, f);
    for (float r : out.rates) {
        EXPECT_GE(r, 0.0f);
        EXPECT_LE(r, 1.0f);
    }
}

// monotone in the prediction for fixed nonnegative factors
TEST(SoftMask, MonotoneInPrediction) {
    EncounterTable lo = testutil::random_table(1, 1, 8);
    EncounterTable hi = lo;
    lo.hotspots[0].region_id = hi.hotspots[0].region_id = "R0";
    lo.rate(0, 0) = 0.2f;
    hi.rate(0, 0) = 0.5f;
    for (double c : {0.0, 0.5, 1.0, 2.5}) {
        const float a = apply_soft_mask(lo, single_factor("R0", {c})).rate(0, 0);
        const float b = apply_soft_mask(hi, single_factor("R0", {c})).rate(0, 0);
        EXPECT_LE(a, b);
    }
}

// a species never reported in a region gets c = 0 there: the soft mask
// reproduces hard zeroing for never-seen species
TEST(SoftMask, NeverSeenInRegionMeansZero) {
    const SpeciesIndex species = SpeciesIndex::from_names({"A", "B"});
    std::vector<Hotspot> hotspots = {hs("H0", "R0"), hs("H1", "R1")};
    std::vector<Checklist> checklists;
    for (int i = 0; i < 5; ++i) checklists.push_back(cl("H0", {0}));        // A only in R0
    for (int i = 0; i < 5; ++i) checklists.push_back(cl("H1", {1}));        // B only in R1
    const SoftMaskFactors f =
        compute_soft_mask_factors(checklists, hotspots, species, {"R0", "R1"});
    EXPECT_DOUBLE_EQ(f.factors.at("R1")[0], 0.0);
    EXPECT_DOUBLE_EQ(f.factors.at("R0")[1], 0.0);

    EncounterTable preds = testutil::random_table(1, 2, 9);
    preds.hotspots[0].region_id = "R1";
    preds.rate(0, 0) = 0.9f;
    const EncounterTable out = apply_soft_mask(preds, f);
    EXPECT_EQ(out.rate(0, 0), 0.0f);
}

TEST(FactorsCsv, RoundTrip) {
    testutil::TempDir dir("factors");
    const SpeciesIndex species = SpeciesIndex::from_names({"A", "B", "C"});
    SoftMaskFactors f;
    f.n_species = 3;
    f.factors["R0"] = {0.0, 1.25, 2.0};
    f.factors["R1"] = {1.0, 0.5, 0.75};
    write_factors_csv(f, species, dir / "factors.csv");
    const SoftMaskFactors back = read_factors_csv(dir / "factors.csv", species);
    EXPECT_EQ(back.factors.at("R0"), f.factors.at("R0"));
    EXPECT_EQ(back.factors.at("R1"), f.factors.at("R1"));
}

}  // namespace
