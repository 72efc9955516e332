#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "sdm/common.hpp"

namespace sdm {

inline constexpr std::size_t kLandcoverClasses = 10;
inline constexpr const char* kLandcoverBand = "landcover";

// Multi-band pixel grid centered on a hotspot. Data is stored as f32 in
// band-major [bands x H x W] order, matching the SDMP file layout.
struct RasterPatch {
    std::string hotspot_id;
    std::vector<std::string> band_names;
    std::size_t height = 0;
    std::size_t width = 0;
    double resolution_m = 0.0;
    std::vector<float> data;

    std::size_t n_bands() const { return band_names.size(); }
    std::size_t pixels() const { return height * width; }
    float& at(std::size_t band, std::size_t row, std::size_t col) {
        return data[(band * height + row) * width + col];
    }
    float at(std::size_t band, std::size_t row, std::size_t col) const {
        return data[(band * height + row) * width + col];
    }
    std::optional<std::size_t> band_index(const std::string& name) const {
        for (std::size_t b = 0; b < band_names.size(); ++b) {
            if (band_names[b] == name) return b;
        }
        return std::nullopt;
    }
};

// ---------------------------------------------------------------------------
// SDMP container: magic "SDMP", u32 version, hotspot id, band-name table,
// dims, resolution, f32 data.
// ---------------------------------------------------------------------------

inline constexpr std::uint32_t kPatchFormatVersion = 1;

inline void write_patch(const RasterPatch& patch, const std::filesystem::path& path) {
    std::ofstream os = io::open_output(path);
    io::write_bytes(os, "SDMP", 4);
    io::write_u32(os, kPatchFormatVersion);
    io::write_string(os, patch.hotspot_id);
    io::write_u32(os, static_cast<std::uint32_t>(patch.n_bands()));
    for (const std::string& b : patch.band_names) io::write_string(os, b);
    io::write_u32(os, static_cast<std::uint32_t>(patch.height));
    io::write_u32(os, static_cast<std::uint32_t>(patch.width));
    io::write_f64(os, patch.resolution_m);
    for (float v : patch.data) io::write_f32(os, v);
    if (!os) throw DataError("failed writing " + path.string());
}

inline RasterPatch read_patch(const std::filesystem::path& path) {
    std::ifstream is = io::open_input(path);
    io::expect_magic(is, "SDMP", "SDMP");
    const std::uint32_t version = io::read_u32(is, "version");
    if (version != kPatchFormatVersion) {
        throw DataError("unsupported SDMP version " + std::to_string(version));
    }
    RasterPatch patch;
    patch.hotspot_id = io::read_string(is, "hotspot id");
    const auto nb = io::checked_count(io::read_u32(is, "band count"), 100'000, "band");
    for (std::size_t b = 0; b < nb; ++b) patch.band_names.push_back(io::read_string(is, "band"));
    patch.height = io::checked_count(io::read_u32(is, "height"), 1'000'000, "row");
    patch.width = io::checked_count(io::read_u32(is, "width"), 1'000'000, "column");
    patch.resolution_m = io::read_f64(is, "resolution");
    patch.data.resize(patch.n_bands() * patch.pixels());
    for (float& v : patch.data) v = io::read_f32(is, "pixel");
    return patch;
}

// bands.json: the band-order manifest for a patches directory.
struct BandsManifest {
    std::vector<std::string> image_bands;          // e.g. R,G,B,NIR
    std::vector<std::string> environmental_bands;  // bio_* then soil_*
    std::size_t landcover_classes = kLandcoverClasses;

    static BandsManifest standard() {
        BandsManifest m;
        m.image_bands = {"R", "G", "B", "NIR"};
        for (int i = 1; i <= 19; ++i) m.environmental_bands.push_back("bio_" + std::to_string(i));
        for (int i = 1; i <= 8; ++i) m.environmental_bands.push_back("soil_" + std::to_string(i));
        return m;
    }
};

inline void write_bands_manifest(const BandsManifest& m, const std::filesystem::path& path) {
    nlohmann::json j;
    j["image"] = m.image_bands;
    j["environmental"] = m.environmental_bands;
    j["landcover_classes"] = m.landcover_classes;
    std::ofstream os = io::open_output(path);
    os << j.dump(2) << '\n';
}

inline BandsManifest read_bands_manifest(const std::filesystem::path& path) {
    std::ifstream is = io::open_input(path);
    nlohmann::json j;
    try {
        is >> j;
    } catch (const nlohmann::json::exception& e) {
        throw DataError("bands.json: " + std::string(e.what()));
    }
    BandsManifest m;
    m.image_bands = j.at("image").get<std::vector<std::string>>();
    m.environmental_bands = j.at("environmental").get<std::vector<std::string>>();
    m.landcover_classes = j.value("landcover_classes", kLandcoverClasses);
    return m;
}

// ---------------------------------------------------------------------------
// Geometric operations
// ---------------------------------------------------------------------------

inline RasterPatch center_crop(const RasterPatch& patch, std::size_t size) {
    if (patch.height < size || patch.width < size) {
        throw DataError("patch for hotspot " + patch.hotspot_id + " is " +
                        std::to_string(patch.height) + "x" + std::to_string(patch.width) +
                        ", smaller than crop size " + std::to_string(size));
    }
    if (patch.height == size && patch.width == size) return patch;
    const std::size_t r0 = (patch.height - size) / 2;
    const std::size_t c0 = (patch.width - size) / 2;
    RasterPatch out;
    out.hotspot_id = patch.hotspot_id;
    out.band_names = patch.band_names;
    out.height = size;
    out.width = size;
    out.resolution_m = patch.resolution_m;
    out.data.resize(out.n_bands() * size * size);
    for (std::size_t b = 0; b < out.n_bands(); ++b) {
        for (std::size_t r = 0; r < size; ++r) {
            for (std::size_t c = 0; c < size; ++c) {
                out.at(b, r, c) = patch.at(b, r0 + r, c0 + c);
            }
        }
    }
    return out;
}

namespace detail {

// In-place flip of band-major data; all channels move together.
template <typename T>
void flip_patch_data(T* data, std::size_t bands, std::size_t h, std::size_t w,
                     bool horizontal, bool vertical) {
    for (std::size_t b = 0; b < bands; ++b) {
        T* plane = data + b * h * w;
        if (horizontal) {
            for (std::size_t r = 0; r < h; ++r) {
                std::reverse(plane + r * w, plane + (r + 1) * w);
            }
        }
        if (vertical) {
            for (std::size_t r = 0; r < h / 2; ++r) {
                std::swap_ranges(plane + r * w, plane + (r + 1) * w,
                                 plane + (h - 1 - r) * w);
            }
        }
    }
}

}  // namespace detail

// Each flip is applied independently with probability 0.5. Two draws are
// consumed per call regardless of outcome, keeping downstream draws aligned.
inline RasterPatch augment_flip(RasterPatch patch, Rng& rng) {
    const bool horizontal = rng.bernoulli(0.5);
    const bool vertical = rng.bernoulli(0.5);
    detail::flip_patch_data(patch.data.data(), patch.n_bands(), patch.height, patch.width,
                            horizontal, vertical);
    return patch;
}

inline RasterPatch flip(RasterPatch patch, bool horizontal, bool vertical) {
    detail::flip_patch_data(patch.data.data(), patch.n_bands(), patch.height, patch.width,
                            horizontal, vertical);
    return patch;
}

// ---------------------------------------------------------------------------
// Normalization statistics (train split only)
// ---------------------------------------------------------------------------

struct BandStats {
    double mean = 0.0;
    double stddev = 0.0;
    bool constant = false;  // stddev flagged zero; normalization degrades to x - mean
};

struct NormalizationStats {
    std::map<std::string, BandStats> per_band;

    const BandStats& require(const std::string& band) const {
        auto it = per_band.find(band);
        if (it == per_band.end()) throw DataError("missing band stats for '" + band + "'");
        return it->second;
    }
};

// Per-band mean and population std over all pixels of all given patches.
// Callers pass train-split patches only. The landcover band is skipped; it
// is categorical and gets one-hot treatment at stacking time.
inline NormalizationStats compute_band_stats(const std::vector<RasterPatch>& train_patches) {
    if (train_patches.empty()) throw DataError("no train patches for statistics");

    std::map<std::string, std::pair<double, std::uint64_t>> sums;  // band -> (sum, count)
    for (const RasterPatch& p : train_patches) {
        for (std::size_t b = 0; b < p.n_bands(); ++b) {
            if (p.band_names[b] == kLandcoverBand) continue;
            auto& [sum, count] = sums[p.band_names[b]];
            const float* plane = p.data.data() + b * p.pixels();
            for (std::size_t i = 0; i < p.pixels(); ++i) sum += plane[i];
            count += p.pixels();
        }
    }

    NormalizationStats stats;
    for (const auto& [band, sc] : sums) {
        stats.per_band[band].mean = sc.first / static_cast<double>(sc.second);
    }
    // second pass for the variance
    std::map<std::string, double> sq;
    for (const RasterPatch& p : train_patches) {
        for (std::size_t b = 0; b < p.n_bands(); ++b) {
            if (p.band_names[b] == kLandcoverBand) continue;
            const double mean = stats.per_band[p.band_names[b]].mean;
            const float* plane = p.data.data() + b * p.pixels();
            double acc = 0.0;
            for (std::size_t i = 0; i < p.pixels(); ++i) {
                const double d = plane[i] - mean;
                acc += d * d;
            }
            sq[p.band_names[b]] += acc;
        }
    }
    for (auto& [band, bs] : stats.per_band) {
        const double var = sq[band] / static_cast<double>(sums[band].second);
        bs.stddev = std::sqrt(var);
        bs.constant = (bs.stddev == 0.0);
    }
    return stats;
}

// x := (x - mean) / std per band; constant bands shift only.
inline RasterPatch normalize(RasterPatch patch, const NormalizationStats& stats) {
    for (std::size_t b = 0; b < patch.n_bands(); ++b) {
        if (patch.band_names[b] == kLandcoverBand) continue;
        const BandStats& bs = stats.require(patch.band_names[b]);
        float* plane = patch.data.data() + b * patch.pixels();
        for (std::size_t i = 0; i < patch.pixels(); ++i) {
            const double x = plane[i] - bs.mean;
            plane[i] = static_cast<float>(bs.constant ? x : x / bs.stddev);
        }
    }
    return patch;
}

inline void write_stats_json(const NormalizationStats& stats,
                             const std::filesystem::path& path) {
    nlohmann::json j = nlohmann::json::object();
    for (const auto& [band, bs] : stats.per_band) {
        j[band] = {{"mean", bs.mean}, {"stddev", bs.stddev}, {"constant", bs.constant}};
    }
    std::ofstream os = io::open_output(path);
    os << j.dump(2) << '\n';
}

inline NormalizationStats read_stats_json(const std::filesystem::path& path) {
    std::ifstream is = io::open_input(path);
    nlohmann::json j;
    try {
        is >> j;
    } catch (const nlohmann::json::exception& e) {
        throw DataError("stats.json: " + std::string(e.what()));
    }
    NormalizationStats stats;
    for (auto it = j.begin(); it != j.end(); ++it) {
        BandStats bs;
        bs.mean = it.value().at("mean").get<double>();
        bs.stddev = it.value().at("stddev").get<double>();
        bs.constant = it.value().at("constant").get<bool>();
        stats.per_band[it.key()] = bs;
    }
    return stats;
}

// ---------------------------------------------------------------------------
// Channel stacking
// ---------------------------------------------------------------------------

namespace detail {

// Nearest-neighbor index on the source grid for a target pixel, with both
// grids centered on the same hotspot. Works in physical units so coarser
// rasters resample correctly.
inline std::size_t resample_index(std::size_t target_idx, std::size_t target_extent,
                                  double target_res, std::size_t source_extent,
                                  double source_res) {
    const double offset_m =
        (static_cast<double>(target_idx) - (static_cast<double>(target_extent) - 1.0) / 2.0) *
        target_res;
    const double src_center = (static_cast<double>(source_extent) - 1.0) / 2.0;
    const double src = src_center + offset_m / source_res;
    const long idx = std::lround(src);
    return static_cast<std::size_t>(
        std::clamp<long>(idx, 0, static_cast<long>(source_extent) - 1));
}

}  // namespace detail

// Resamples `source` onto the grid of `reference` (nearest neighbor,
// center-aligned). Identity when grids already match.
inline RasterPatch resample_to_grid(const RasterPatch& source, const RasterPatch& reference) {
    if (source.height == 0 || source.width == 0) {
        throw DataError("cannot resample empty patch for hotspot " + source.hotspot_id);
    }
    if (source.height == reference.height && source.width == reference.width &&
        source.resolution_m == reference.resolution_m) {
        return source;
    }
    RasterPatch out;
    out.hotspot_id = source.hotspot_id;
    out.band_names = source.band_names;
    out.height = reference.height;
    out.width = reference.width;
    out.resolution_m = reference.resolution_m;
    out.data.resize(out.n_bands() * out.pixels());
    for (std::size_t r = 0; r < out.height; ++r) {
        const std::size_t sr = detail::resample_index(r, out.height, out.resolution_m,
                                                      source.height, source.resolution_m);
        for (std::size_t c = 0; c < out.width; ++c) {
            const std::size_t sc = detail::resample_index(c, out.width, out.resolution_m,
                                                          source.width, source.resolution_m);
            for (std::size_t b = 0; b < out.n_bands(); ++b) {
                out.at(b, r, c) = source.at(b, sr, sc);
            }
        }
    }
    return out;
}

// Stacks image bands, then environmental bands in manifest order, then the
// landcover one-hot planes. Env and landcover are resampled to the image grid
// first. Channel count = image + env + 10 * [landcover present].
inline RasterPatch stack_channels(const RasterPatch& image, const RasterPatch* env,
                                  const RasterPatch* landcover, const BandsManifest& manifest) {
    RasterPatch out;
    out.hotspot_id = image.hotspot_id;
    out.height = image.height;
    out.width = image.width;
    out.resolution_m = image.resolution_m;
    out.band_names = image.band_names;
    out.data = image.data;

    if (env != nullptr) {
        if (env->hotspot_id != image.hotspot_id) {
            throw DataError("stack: env patch hotspot " + env->hotspot_id +
                            " does not match image hotspot " + image.hotspot_id);
        }
        const RasterPatch aligned = resample_to_grid(*env, image);
        for (const std::string& band : manifest.environmental_bands) {
            const auto b = aligned.band_index(band);
            if (!b) {
                throw DataError("stack: env patch for " + image.hotspot_id +
                                " lacks band '" + band + "'");
            }
            out.band_names.push_back(band);
            const float* plane = aligned.data.data() + *b * aligned.pixels();
            out.data.insert(out.data.end(), plane, plane + aligned.pixels());
        }
    }

    if (landcover != nullptr) {
        if (landcover->hotspot_id != image.hotspot_id) {
            throw DataError("stack: landcover patch hotspot " + landcover->hotspot_id +
                            " does not match image hotspot " + image.hotspot_id);
        }
        const RasterPatch aligned = resample_to_grid(*landcover, image);
        const auto b = aligned.band_index(kLandcoverBand);
        if (!b) {
            throw DataError("stack: landcover patch for " + image.hotspot_id +
                            " lacks band '" + std::string(kLandcoverBand) + "'");
        }
        const float* plane = aligned.data.data() + *b * aligned.pixels();
        const std::size_t base = out.data.size();
        out.data.resize(base + manifest.landcover_classes * aligned.pixels(), 0.0f);
        for (std::size_t k = 0; k < manifest.landcover_classes; ++k) {
            out.band_names.push_back("lc_" + std::to_string(k));
        }
        for (std::size_t i = 0; i < aligned.pixels(); ++i) {
            const long code = std::lround(plane[i]);
            if (code < 0 || code >= static_cast<long>(manifest.landcover_classes)) {
                throw DataError("landcover class code " + std::to_string(code) +
                                " out of range at hotspot " + image.hotspot_id);
            }
            out.data[base + static_cast<std::size_t>(code) * aligned.pixels() + i] = 1.0f;
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Point-sampled environmental features for the tree baseline
// ---------------------------------------------------------------------------

struct FeatureVector {
    std::string hotspot_id;
    std::vector<double> values;  // manifest order, raw (un-normalized)
};

inline FeatureVector env_feature_vector(const RasterPatch& env, const BandsManifest& manifest) {
    if (env.height == 0 || env.width == 0) {
        throw DataError("empty env patch for hotspot " + env.hotspot_id);
    }
    const std::size_t r = env.height / 2;
    const std::size_t c = env.width / 2;
    FeatureVector fv;
    fv.hotspot_id = env.hotspot_id;
    fv.values.reserve(manifest.environmental_bands.size());
    for (const std::string& band : manifest.environmental_bands) {
        const auto b = env.band_index(band);
        if (!b) {
            throw DataError("env patch for " + env.hotspot_id + " lacks band '" + band + "'");
        }
        fv.values.push_back(env.at(*b, r, c));
    }
    return fv;
}

// Patch file naming inside a patches directory.
inline std::filesystem::path image_patch_path(const std::filesystem::path& dir,
                                              const std::string& hotspot_id) {
    return dir / (hotspot_id + ".img.sdmp");
}
inline std::filesystem::path env_patch_path(const std::filesystem::path& dir,
                                            const std::string& hotspot_id) {
    return dir / (hotspot_id + ".env.sdmp");
}
inline std::filesystem::path landcover_patch_path(const std::filesystem::path& dir,
                                                  const std::string& hotspot_id) {
    return dir / (hotspot_id + ".lc.sdmp");
}

}  // namespace sdm
