#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "sdm/common.hpp"
#include "sdm/raster.hpp"

namespace sdm {

// Habitat archetype: band means plus a species affinity vector. A hotspot of
// archetype a reports species s with probability affinity[s] per checklist.
struct Archetype {
    std::vector<double> image_means;        // one per image band
    std::vector<double> env_means;          // one per environmental band
    std::vector<double> affinity;           // per species, in [0,1]
    std::size_t dominant_landcover = 0;
};

struct SyntheticWorldSpec {
    std::size_t n_hotspots = 100;
    std::size_t n_species = 20;
    std::size_t n_regions = 4;
    std::size_t n_archetypes = 4;
    std::size_t patch_px = 16;   // image/landcover grid
    std::size_t env_px = 8;      // coarser environmental grid
    double resolution_m = 10.0;
    std::uint32_t min_checklists = 5;
    std::uint32_t max_checklists = 30;
    double image_noise = 0.1;
    double env_noise = 0.1;
    double grid_spacing_deg = 0.2;  // about 22 km between grid neighbours
    double position_jitter = 0.0;   // fraction of the spacing, uniform
    // When set, consecutive archetype pairs share one environmental profile,
    // so only the image bands separate the pair members.
    bool env_shared_by_pairs = false;
    // When set, each species is restricted to a random region subset:
    // out-of-range reports are suppressed and rangemaps.csv lists the subset.
    bool regional_exclusivity = false;
    double range_map_coverage = 1.0;  // fraction of species with a published map
    std::uint64_t seed = 0;
};

struct SyntheticWorldPaths {
    std::filesystem::path checklists_csv;
    std::filesystem::path species_txt;
    std::filesystem::path rangemaps_csv;
    std::filesystem::path patches_dir;
    // generation metadata, handy for verifying the world carries signal
    std::vector<std::string> hotspot_ids;
    std::vector<std::size_t> archetype_of_hotspot;
};

namespace detail {

inline std::string zero_pad(std::size_t v, int width) {
    std::string s = std::to_string(v);
    while (static_cast<int>(s.size()) < width) s.insert(s.begin(), '0');
    return s;
}

}  // namespace detail

// Writes checklists.csv, species.txt, rangemaps.csv and the patches
// directory under out_dir. Byte-identical output for a fixed spec.
inline SyntheticWorldPaths generate_synthetic_world(const SyntheticWorldSpec& spec,
                                                    const std::filesystem::path& out_dir) {
    if (spec.n_hotspots == 0) throw UsageError("synthetic world needs at least one hotspot");
    if (spec.n_species == 0 || spec.n_regions == 0 || spec.n_archetypes == 0) {
        throw UsageError("species, region and archetype counts must be positive");
    }
    if (spec.min_checklists < 1 || spec.max_checklists < spec.min_checklists) {
        throw UsageError("bad checklist count range");
    }
    if (spec.patch_px < 2 || spec.env_px < 1) throw UsageError("patch sizes too small");

    std::filesystem::create_directories(out_dir);
    const std::filesystem::path patches_dir = out_dir / "patches";
    std::filesystem::create_directories(patches_dir);

    const BandsManifest manifest = BandsManifest::standard();
    write_bands_manifest(manifest, patches_dir / "bands.json");

    // --- species + archetypes ---
    Rng rng_world(derive_seed(spec.seed, "world"));
    std::vector<std::string> species_names;
    for (std::size_t s = 0; s < spec.n_species; ++s) {
        species_names.push_back("species_" + detail::zero_pad(s, 3));
    }

    std::vector<Archetype> archetypes(spec.n_archetypes);
    std::vector<double> pair_base;  // shared community profile within an env pair
    for (std::size_t a = 0; a < spec.n_archetypes; ++a) {
        Archetype& arch = archetypes[a];
        arch.image_means.resize(manifest.image_bands.size());
        for (double& m : arch.image_means) m = rng_world.uniform(-1.0, 1.0);
        arch.env_means.resize(manifest.environmental_bands.size());
        if (spec.env_shared_by_pairs && a % 2 == 1) {
            arch.env_means = archetypes[a - 1].env_means;
        } else {
            for (double& m : arch.env_means) m = rng_world.uniform(-1.0, 1.0);
        }
        arch.affinity.resize(spec.n_species);
        if (spec.env_shared_by_pairs) {
            // archetypes sharing an env profile host similar communities;
            // the residual spread is visible only through the image bands
            if (a % 2 == 0) {
                pair_base.resize(spec.n_species);
                for (double& p : pair_base) p = rng_world.uniform(0.05, 0.95);
            }
            for (std::size_t s = 0; s < spec.n_species; ++s) {
                arch.affinity[s] = std::clamp(
                    pair_base[s] + rng_world.uniform(-0.35, 0.35), 0.01, 0.99);
            }
        } else {
            for (double& p : arch.affinity) p = rng_world.uniform(0.05, 0.95);
        }
        arch.dominant_landcover = a % kLandcoverClasses;
    }

    // --- species ranges ---
    std::vector<std::vector<bool>> allowed(spec.n_species,
                                           std::vector<bool>(spec.n_regions, true));
    std::vector<bool> has_map(spec.n_species, false);
    if (spec.regional_exclusivity) {
        Rng rng_range(derive_seed(spec.seed, "ranges"));
        for (std::size_t s = 0; s < spec.n_species; ++s) {
            bool any = false;
            for (std::size_t r = 0; r < spec.n_regions; ++r) {
                allowed[s][r] = rng_range.bernoulli(0.5);
                any = any || allowed[s][r];
            }
            if (!any) allowed[s][rng_range.uniform_index(spec.n_regions)] = true;
            has_map[s] = rng_range.uniform() < spec.range_map_coverage;
        }
    }

    // --- hotspots on a jittered grid, regions as longitude stripes ---
    const std::size_t cols =
        static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(spec.n_hotspots))));
    Rng rng_geo(derive_seed(spec.seed, "geo"));
    struct HotspotDraft {
        std::string id;
        double lat, lon;
        std::string region;
        std::size_t archetype;
    };
    std::vector<HotspotDraft> hotspots(spec.n_hotspots);
    for (std::size_t i = 0; i < spec.n_hotspots; ++i) {
        const std::size_t row = i / cols, col = i % cols;
        const double jitter = spec.position_jitter * spec.grid_spacing_deg;
        HotspotDraft& h = hotspots[i];
        h.id = "H" + detail::zero_pad(i, 5);
        h.lat = 30.0 + static_cast<double>(row) * spec.grid_spacing_deg +
                (jitter > 0.0 ? rng_geo.uniform(-jitter, jitter) : 0.0);
        h.lon = -110.0 + static_cast<double>(col) * spec.grid_spacing_deg +
                (jitter > 0.0 ? rng_geo.uniform(-jitter, jitter) : 0.0);
        h.region = "R" + std::to_string(col * spec.n_regions / cols);
        h.archetype = rng_geo.uniform_index(spec.n_archetypes);
    }

    // --- checklists ---
    SyntheticWorldPaths paths;
    paths.checklists_csv = out_dir / "checklists.csv";
    paths.species_txt = out_dir / "species.txt";
    paths.rangemaps_csv = out_dir / "rangemaps.csv";
    paths.patches_dir = patches_dir;
    for (const HotspotDraft& h : hotspots) {
        paths.hotspot_ids.push_back(h.id);
        paths.archetype_of_hotspot.push_back(h.archetype);
    }

    {
        std::ofstream os = io::open_output(paths.species_txt);
        for (const std::string& name : species_names) os << name << '\n';
    }
    {
        std::ofstream os = io::open_output(paths.rangemaps_csv);
        os << "species,region_id\n";
        for (std::size_t s = 0; s < spec.n_species; ++s) {
            if (!spec.regional_exclusivity || !has_map[s]) continue;
            for (std::size_t r = 0; r < spec.n_regions; ++r) {
                if (allowed[s][r]) {
                    os << species_names[s] << ",R" << r << '\n';
                }
            }
        }
    }
    {
        Rng rng_obs(derive_seed(spec.seed, "observations"));
        std::ofstream os = io::open_output(paths.checklists_csv);
        os << "hotspot_id,lat,lon,region_id,date,species\n";
        for (const HotspotDraft& h : hotspots) {
            const std::size_t region_idx =
                static_cast<std::size_t>(std::stoul(h.region.substr(1)));
            const Archetype& arch = archetypes[h.archetype];
            const std::uint32_t n_cl =
                spec.min_checklists +
                static_cast<std::uint32_t>(rng_obs.uniform_index(
                    spec.max_checklists - spec.min_checklists + 1));
            for (std::uint32_t c = 0; c < n_cl; ++c) {
                const std::size_t day = 1 + rng_obs.uniform_index(28);
                os << h.id << ',' << format_double(h.lat) << ',' << format_double(h.lon) << ','
                   << h.region << ",2021-06-" << detail::zero_pad(day, 2) << ',';
                bool first = true;
                for (std::size_t s = 0; s < spec.n_species; ++s) {
                    const bool in_range = !spec.regional_exclusivity || allowed[s][region_idx];
                    const bool reported = rng_obs.bernoulli(arch.affinity[s]) && in_range;
                    if (reported) {
                        if (!first) os << ';';
                        os << species_names[s];
                        first = false;
                    }
                }
                os << '\n';
            }
        }
    }

    // --- raster patches ---
    Rng rng_px(derive_seed(spec.seed, "pixels"));
    const double env_resolution =
        spec.resolution_m * static_cast<double>(spec.patch_px) /
        static_cast<double>(spec.env_px);
    for (const HotspotDraft& h : hotspots) {
        const Archetype& arch = archetypes[h.archetype];

        RasterPatch img;
        img.hotspot_id = h.id;
        img.band_names = manifest.image_bands;
        img.height = img.width = spec.patch_px;
        img.resolution_m = spec.resolution_m;
        img.data.resize(img.n_bands() * img.pixels());
        for (std::size_t b = 0; b < img.n_bands(); ++b) {
            for (std::size_t i = 0; i < img.pixels(); ++i) {
                img.data[b * img.pixels() + i] = static_cast<float>(
                    arch.image_means[b] + spec.image_noise * rng_px.normal());
            }
        }
        write_patch(img, image_patch_path(patches_dir, h.id));

        RasterPatch env;
        env.hotspot_id = h.id;
        env.band_names = manifest.environmental_bands;
        env.height = env.width = spec.env_px;
        env.resolution_m = env_resolution;
        env.data.resize(env.n_bands() * env.pixels());
        for (std::size_t b = 0; b < env.n_bands(); ++b) {
            for (std::size_t i = 0; i < env.pixels(); ++i) {
                env.data[b * env.pixels() + i] =
                    static_cast<float>(arch.env_means[b] + spec.env_noise * rng_px.normal());
            }
        }
        write_patch(env, env_patch_path(patches_dir, h.id));

        RasterPatch lc;
        lc.hotspot_id = h.id;
        lc.band_names = {kLandcoverBand};
        lc.height = lc.width = spec.patch_px;
        lc.resolution_m = spec.resolution_m;
        lc.data.resize(lc.pixels());
        for (std::size_t i = 0; i < lc.pixels(); ++i) {
            const std::size_t cls = rng_px.bernoulli(0.8)
                                        ? arch.dominant_landcover
                                        : rng_px.uniform_index(kLandcoverClasses);
            lc.data[i] = static_cast<float>(cls);
        }
        write_patch(lc, landcover_patch_path(patches_dir, h.id));
    }

    return paths;
}

}  // namespace sdm
