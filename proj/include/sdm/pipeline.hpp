#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "sdm/checklist.hpp"
#include "sdm/common.hpp"
#include "sdm/gbrt.hpp"
#include "sdm/masking.hpp"
#include "sdm/metrics.hpp"
#include "sdm/nn.hpp"
#include "sdm/raster.hpp"
#include "sdm/split.hpp"
#include "sdm/synth.hpp"

namespace sdm {

// ---------------------------------------------------------------------------
// Declarative run configuration (INI-style: [section] + key = value)
// ---------------------------------------------------------------------------

struct PipelineConfig {
    // [paths]
    std::filesystem::path checklists;
    std::filesystem::path species;
    std::filesystem::path patches;
    std::filesystem::path rangemaps;  // optional
    std::filesystem::path output;
    // [data]
    std::uint32_t min_checklists = 5;
    bool vagrant_correction = false;
    std::string date_from;
    std::string date_to;
    // [split]
    double min_dist_km = 5.0;
    std::array<double, 3> ratios{0.7, 0.2, 0.1};
    // [features]
    std::size_t crop = 64;
    bool use_env = true;
    bool use_landcover = false;
    bool use_location = false;
    // [model]
    std::string model = "cnn";  // mean | gbrt | cnn
    std::vector<std::size_t> conv_channels{16, 32};
    std::size_t kernel = 3;
    std::size_t loc_width = 256;
    std::size_t loc_blocks = 4;
    double dropout = 0.5;
    // [train]
    nn::TrainConfig train;
    // [gbrt]
    gbrt::GbrtConfig gbrt;
    // [mask]
    std::string mask_mode = "none";  // none | hard | soft
    // [eval]
    std::string eval_split = "test";
    std::string topk_denominator = "min";
    // [run]
    std::uint64_t seed = 0;

    void validate() const {
        if (model != "mean" && model != "gbrt" && model != "cnn") {
            throw UsageError("model must be mean, gbrt or cnn (got '" + model + "')");
        }
        if (mask_mode != "none" && mask_mode != "hard" && mask_mode != "soft") {
            throw UsageError("mask mode must be none, hard or soft (got '" + mask_mode + "')");
        }
        if (mask_mode == "hard" && rangemaps.empty()) {
            throw UsageError("hard masking requires a rangemaps file");
        }
        if (model == "gbrt" && !use_env) {
            throw UsageError("the tree baseline needs environmental features (use_env)");
        }
        if (output.empty()) throw UsageError("output directory not set");
        parse_split(eval_split);
        parse_topk_denominator(topk_denominator);
        train.validate();
        gbrt.validate();
    }

    std::size_t stacked_channels() const {
        return 4 + (use_env ? 27 : 0) + (use_landcover ? kLandcoverClasses : 0);
    }

    // Deterministic serialization; its hash identifies a run.
    std::string canonical() const {
        std::string s;
        auto kv = [&s](const std::string& k, const std::string& v) { s += k + "=" + v + "\n"; };
        kv("paths.checklists", checklists.string());
        kv("paths.species", species.string());
        kv("paths.patches", patches.string());
        kv("paths.rangemaps", rangemaps.string());
        kv("paths.output", output.string());
        kv("data.min_checklists", std::to_string(min_checklists));
        kv("data.vagrant_correction", vagrant_correction ? "true" : "false");
        kv("data.date_from", date_from);
        kv("data.date_to", date_to);
        kv("split.min_dist_km", format_double(min_dist_km));
        kv("split.ratios", format_double(ratios[0]) + "," + format_double(ratios[1]) + "," +
                               format_double(ratios[2]));
        kv("features.crop", std::to_string(crop));
        kv("features.use_env", use_env ? "true" : "false");
        kv("features.use_landcover", use_landcover ? "true" : "false");
        kv("features.use_location", use_location ? "true" : "false");
        kv("model.type", model);
        {
            std::string cc;
            for (std::size_t c : conv_channels) cc += (cc.empty() ? "" : ",") + std::to_string(c);
            kv("model.conv_channels", cc);
        }
        kv("model.kernel", std::to_string(kernel));
        kv("model.loc_width", std::to_string(loc_width));
        kv("model.loc_blocks", std::to_string(loc_blocks));
        kv("model.dropout", format_double(dropout));
        kv("train.batch_size", std::to_string(train.batch_size));
        kv("train.learning_rate", format_double(train.learning_rate));
        kv("train.epochs", std::to_string(train.epochs));
        kv("train.loss_weight", nn::weight_fn_name(train.weight_fn));
        kv("train.augment", train.augment ? "true" : "false");
        kv("train.plateau_factor", format_double(train.plateau_factor));
        kv("train.plateau_patience", std::to_string(train.plateau_patience));
        kv("train.min_learning_rate", format_double(train.min_learning_rate));
        kv("gbrt.rounds", std::to_string(gbrt.rounds));
        kv("gbrt.depth", std::to_string(gbrt.max_depth));
        kv("gbrt.shrinkage", format_double(gbrt.shrinkage));
        kv("gbrt.min_samples_leaf", std::to_string(gbrt.min_samples_leaf));
        kv("mask.mode", mask_mode);
        kv("eval.split", eval_split);
        kv("eval.topk_denominator", topk_denominator);
        kv("run.seed", std::to_string(seed));
        return s;
    }

    std::string hash_hex() const {
        const std::string c = canonical();
        char buf[17];
        std::snprintf(buf, sizeof(buf), "%016llx",
                      static_cast<unsigned long long>(fnv1a64(c)));
        return buf;
    }
};

namespace detail {

using IniSections = std::map<std::string, std::map<std::string, std::string>>;

inline IniSections parse_ini(const std::filesystem::path& path) {
    std::ifstream is = io::open_input(path);
    IniSections sections;
    std::string line, section;
    std::size_t line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        const std::size_t comment = line.find_first_of("#;");
        if (comment != std::string::npos) line.erase(comment);
        const std::string t = trim(line);
        if (t.empty()) continue;
        if (t.front() == '[') {
            if (t.back() != ']') {
                throw UsageError("config line " + std::to_string(line_no) + ": bad section");
            }
            section = trim(t.substr(1, t.size() - 2));
            continue;
        }
        const std::size_t eq = t.find('=');
        if (eq == std::string::npos) {
            throw UsageError("config line " + std::to_string(line_no) + ": expected key = value");
        }
        sections[section][trim(t.substr(0, eq))] = trim(t.substr(eq + 1));
    }
    return sections;
}

inline bool parse_bool(const std::string& v, const std::string& key) {
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw UsageError("config key " + key + ": expected boolean, got '" + v + "'");
}

inline double parse_number(const std::string& v, const std::string& key) {
    char* end = nullptr;
    const double x = std::strtod(v.c_str(), &end);
    if (end == v.c_str() || *end != '\0') {
        throw UsageError("config key " + key + ": expected number, got '" + v + "'");
    }
    return x;
}

inline std::uint64_t parse_unsigned(const std::string& v, const std::string& key) {
    char* end = nullptr;
    const unsigned long long x = std::strtoull(v.c_str(), &end, 10);
    if (end == v.c_str() || *end != '\0') {
        throw UsageError("config key " + key + ": expected non-negative integer, got '" + v +
                         "'");
    }
    return x;
}

inline std::array<double, 3> parse_ratios(const std::string& v) {
    const auto parts = split(v, ',');
    if (parts.size() != 3) throw UsageError("ratios must be three comma-separated numbers");
    return {parse_number(trim(parts[0]), "ratios"), parse_number(trim(parts[1]), "ratios"),
            parse_number(trim(parts[2]), "ratios")};
}

inline std::vector<std::size_t> parse_size_list(const std::string& v) {
    std::vector<std::size_t> out;
    for (const std::string& p : split(v, ',')) {
        out.push_back(static_cast<std::size_t>(parse_unsigned(trim(p), "size list")));
    }
    return out;
}

}  // namespace detail

inline PipelineConfig parse_pipeline_config(const std::filesystem::path& path) {
    const detail::IniSections ini = detail::parse_ini(path);
    PipelineConfig cfg;
    const std::filesystem::path base = path.parent_path();
    auto resolve = [&base](const std::string& p) {
        const std::filesystem::path fp(p);
        return fp.is_absolute() ? fp : base / fp;
    };

    for (const auto& [section, kvs] : ini) {
        for (const auto& [key, value] : kvs) {
            const std::string full = section + "." + key;
            if (full == "paths.checklists") cfg.checklists = resolve(value);
            else if (full == "paths.species") cfg.species = resolve(value);
            else if (full == "paths.patches") cfg.patches = resolve(value);
            else if (full == "paths.rangemaps") cfg.rangemaps = resolve(value);
            else if (full == "paths.output") cfg.output = resolve(value);
            else if (full == "data.min_checklists")
                cfg.min_checklists = detail::parse_unsigned(value, full);
            else if (full == "data.vagrant_correction")
                cfg.vagrant_correction = detail::parse_bool(value, full);
            else if (full == "data.date_from") cfg.date_from = value;
            else if (full == "data.date_to") cfg.date_to = value;
            else if (full == "split.min_dist_km")
                cfg.min_dist_km = detail::parse_number(value, full);
            else if (full == "split.ratios") cfg.ratios = detail::parse_ratios(value);
            else if (full == "features.crop") cfg.crop = detail::parse_unsigned(value, full);
            else if (full == "features.use_env") cfg.use_env = detail::parse_bool(value, full);
            else if (full == "features.use_landcover")
                cfg.use_landcover = detail::parse_bool(value, full);
            else if (full == "features.use_location")
                cfg.use_location = detail::parse_bool(value, full);
            else if (full == "model.type") cfg.model = value;
            else if (full == "model.conv_channels")
                cfg.conv_channels = detail::parse_size_list(value);
            else if (full == "model.kernel") cfg.kernel = detail::parse_unsigned(value, full);
            else if (full == "model.loc_width")
                cfg.loc_width = detail::parse_unsigned(value, full);
            else if (full == "model.loc_blocks")
                cfg.loc_blocks = detail::parse_unsigned(value, full);
            else if (full == "model.dropout") cfg.dropout = detail::parse_number(value, full);
            else if (full == "train.batch_size")
                cfg.train.batch_size = detail::parse_unsigned(value, full);
            else if (full == "train.learning_rate")
                cfg.train.learning_rate = detail::parse_number(value, full);
            else if (full == "train.epochs")
                cfg.train.epochs = detail::parse_unsigned(value, full);
            else if (full == "train.loss_weight")
                cfg.train.weight_fn = nn::parse_weight_fn(value);
            else if (full == "train.augment") cfg.train.augment = detail::parse_bool(value, full);
            else if (full == "train.plateau_factor")
                cfg.train.plateau_factor = detail::parse_number(value, full);
            else if (full == "train.plateau_patience")
                cfg.train.plateau_patience = detail::parse_unsigned(value, full);
            else if (full == "train.min_learning_rate")
                cfg.train.min_learning_rate = detail::parse_number(value, full);
            else if (full == "gbrt.rounds") cfg.gbrt.rounds = detail::parse_unsigned(value, full);
            else if (full == "gbrt.depth")
                cfg.gbrt.max_depth = detail::parse_unsigned(value, full);
            else if (full == "gbrt.shrinkage")
                cfg.gbrt.shrinkage = detail::parse_number(value, full);
            else if (full == "gbrt.min_samples_leaf")
                cfg.gbrt.min_samples_leaf = detail::parse_unsigned(value, full);
            else if (full == "mask.mode") cfg.mask_mode = value;
            else if (full == "eval.split") cfg.eval_split = value;
            else if (full == "eval.topk_denominator") cfg.topk_denominator = value;
            else if (full == "run.seed") cfg.seed = detail::parse_unsigned(value, full);
            else throw UsageError("unknown config key: " + full);
        }
    }
    return cfg;
}

// ---------------------------------------------------------------------------
// Run directory layout + manifest
// ---------------------------------------------------------------------------

struct RunPaths {
    std::filesystem::path dir;
    std::filesystem::path table, splits_csv, stats, model_gbrt, model_cnn, train_log;
    std::filesystem::path predictions_raw, predictions, factors;
    std::filesystem::path report, per_species, geojson, manifest;

    explicit RunPaths(const std::filesystem::path& out) : dir(out) {
        table = dir / "table.sdmt";
        splits_csv = dir / "splits.csv";
        stats = dir / "stats.json";
        model_gbrt = dir / "model.sdmg";
        model_cnn = dir / "model.sdmc";
        train_log = dir / "train_log.csv";
        predictions_raw = dir / "predictions_raw.sdmt";
        predictions = dir / "predictions.sdmt";
        factors = dir / "factors.csv";
        report = dir / "report.json";
        per_species = dir / "per_species.csv";
        geojson = dir / "performance.geojson";
        manifest = dir / "manifest.json";
    }
};

// Guards an output directory against concurrent runs.
class DirLock {
public:
    explicit DirLock(const std::filesystem::path& dir) : path_(dir / ".lock") {
        std::error_code ec;
        if (!std::filesystem::create_directory(path_, ec) || ec) {
            throw DataError("output directory " + dir.string() +
                            " is locked by another run (remove .lock if stale)");
        }
    }
    ~DirLock() {
        std::error_code ec;
        std::filesystem::remove(path_, ec);
    }
    DirLock(const DirLock&) = delete;
    DirLock& operator=(const DirLock&) = delete;

private:
    std::filesystem::path path_;
};

class Manifest {
public:
    static Manifest load_or_create(const RunPaths& paths, const std::string& config_hash,
                                   std::uint64_t seed) {
        Manifest m;
        m.path_ = paths.manifest;
        if (std::filesystem::exists(m.path_)) {
            std::ifstream is(m.path_);
            try {
                is >> m.doc_;
            } catch (const nlohmann::json::exception&) {
                m.doc_ = nlohmann::json::object();
            }
        }
        if (!m.doc_.is_object() || m.doc_.value("config_hash", "") != config_hash) {
            m.doc_ = {{"config_hash", config_hash},
                      {"seed", seed},
                      {"stages", nlohmann::json::object()}};
        }
        return m;
    }

    bool stage_done(const std::string& stage,
                    const std::vector<std::filesystem::path>& outputs) const {
        const auto& stages = doc_.at("stages");
        if (!stages.contains(stage)) return false;
        const auto& entry = stages.at(stage);
        if (entry.value("status", "") != "ok") return false;
        for (const auto& p : outputs) {
            if (!std::filesystem::exists(p)) return false;
            const std::string recorded =
                entry.at("outputs").value(p.filename().string(), "");
            if (recorded != hash_hex(p)) return false;
        }
        return true;
    }

    void record_ok(const std::string& stage,
                   const std::vector<std::filesystem::path>& outputs) {
        nlohmann::json files = nlohmann::json::object();
        for (const auto& p : outputs) files[p.filename().string()] = hash_hex(p);
        doc_["stages"][stage] = {{"status", "ok"}, {"outputs", std::move(files)}};
        save();
    }

    void record_failed(const std::string& stage) {
        doc_["stages"][stage] = {{"status", "invalid"},
                                 {"outputs", nlohmann::json::object()}};
        save();
    }

    static std::string hash_hex(const std::filesystem::path& p) {
        char buf[17];
        std::snprintf(buf, sizeof(buf), "%016llx",
                      static_cast<unsigned long long>(io::hash_file(p)));
        return buf;
    }

private:
    void save() const {
        std::ofstream os = io::open_output(path_);
        os << doc_.dump(2) << '\n';
    }

    std::filesystem::path path_;
    nlohmann::json doc_;
};

// ---------------------------------------------------------------------------
// Stage implementations. Each is the body behind one CLI subcommand; the
// full pipeline chains them with the same inputs, so a stage run on its own
// produces byte-identical artifacts.
// ---------------------------------------------------------------------------

namespace stages {

inline void build(const PipelineConfig& cfg) {
    const RunPaths paths(cfg.output);
    std::filesystem::create_directories(paths.dir);
    IngestOptions opt;
    opt.date_from = cfg.date_from;
    opt.date_to = cfg.date_to;
    const IngestResult ingested = ingest_checklists(cfg.checklists, cfg.species, opt);
    EncounterTable table = compute_encounter_rates(ingested.checklists, ingested.hotspots,
                                                   ingested.species, cfg.min_checklists);
    if (cfg.vagrant_correction) {
        if (cfg.rangemaps.empty()) {
            throw UsageError("vagrant correction requires a rangemaps file");
        }
        table = apply_vagrant_correction(std::move(table),
                                         load_range_maps(cfg.rangemaps, table.species));
    }
    write_encounter_table(table, paths.table);
}

inline void split_stage(const PipelineConfig& cfg) {
    const RunPaths paths(cfg.output);
    const EncounterTable table = read_encounter_table(paths.table);
    const std::vector<Cluster> clusters = cluster_hotspots(table.hotspots, cfg.min_dist_km);
    const SplitAssignment assignment =
        assign_splits(clusters, cfg.ratios, derive_seed(cfg.seed, "split"));
    write_split_csv(assignment, paths.splits_csv);
}

namespace detail {

inline BandsManifest load_manifest(const PipelineConfig& cfg) {
    return read_bands_manifest(cfg.patches / "bands.json");
}

// Cropped, normalized, stacked patches plus targets for one split.
inline nn::Dataset load_nn_dataset(const PipelineConfig& cfg, const EncounterTable& table,
                                   const SplitAssignment& splits, Split which,
                                   const NormalizationStats& stats,
                                   const BandsManifest& manifest) {
    nn::Dataset data;
    data.n_species = table.cols();
    data.with_location = cfg.use_location;
    const EncounterTable rows = filter_table(table, splits, which);
    for (std::size_t h = 0; h < rows.rows(); ++h) {
        const Hotspot& hotspot = rows.hotspots[h];
        RasterPatch img = normalize(
            center_crop(read_patch(image_patch_path(cfg.patches, hotspot.id)), cfg.crop),
            stats);
        RasterPatch env, lc;
        const RasterPatch* env_ptr = nullptr;
        const RasterPatch* lc_ptr = nullptr;
        if (cfg.use_env) {
            env = normalize(read_patch(env_patch_path(cfg.patches, hotspot.id)), stats);
            env_ptr = &env;
        }
        if (cfg.use_landcover) {
            lc = read_patch(landcover_patch_path(cfg.patches, hotspot.id));
            lc_ptr = &lc;
        }
        const RasterPatch stacked = stack_channels(img, env_ptr, lc_ptr, manifest);
        if (data.samples.empty()) {
            data.channels = stacked.n_bands();
            data.height = stacked.height;
            data.width = stacked.width;
        }
        nn::Sample sample;
        sample.hotspot_id = hotspot.id;
        sample.patch = stacked.data;
        sample.target.assign(rows.rates.begin() + h * rows.cols(),
                             rows.rates.begin() + (h + 1) * rows.cols());
        sample.n_checklists = hotspot.n_checklists;
        if (cfg.use_location) {
            sample.location = nn::coordinate_embedding(
                nn::LocationInput::from_degrees(hotspot.lat, hotspot.lon));
        }
        data.samples.push_back(std::move(sample));
    }
    return data;
}

inline std::vector<std::vector<double>> load_env_features(const PipelineConfig& cfg,
                                                          const EncounterTable& rows,
                                                          const BandsManifest& manifest) {
    std::vector<std::vector<double>> features;
    features.reserve(rows.rows());
    for (const Hotspot& hotspot : rows.hotspots) {
        features.push_back(
            env_feature_vector(read_patch(env_patch_path(cfg.patches, hotspot.id)), manifest)
                .values);
    }
    return features;
}

inline NormalizationStats compute_pipeline_stats(const PipelineConfig& cfg,
                                                 const EncounterTable& table,
                                                 const SplitAssignment& splits) {
    const EncounterTable train_rows = filter_table(table, splits, Split::train);
    std::vector<RasterPatch> image_patches;
    image_patches.reserve(train_rows.rows());
    for (const Hotspot& hotspot : train_rows.hotspots) {
        image_patches.push_back(
            center_crop(read_patch(image_patch_path(cfg.patches, hotspot.id)), cfg.crop));
    }
    NormalizationStats stats = compute_band_stats(image_patches);
    if (cfg.use_env) {
        std::vector<RasterPatch> env_patches;
        env_patches.reserve(train_rows.rows());
        for (const Hotspot& hotspot : train_rows.hotspots) {
            env_patches.push_back(read_patch(env_patch_path(cfg.patches, hotspot.id)));
        }
        const NormalizationStats env_stats = compute_band_stats(env_patches);
        for (const auto& [band, bs] : env_stats.per_band) stats.per_band[band] = bs;
    }
    return stats;
}

}  // namespace detail

inline void train_stage(const PipelineConfig& cfg) {
    const RunPaths paths(cfg.output);
    const EncounterTable table = read_encounter_table(paths.table);
    const SplitAssignment splits = read_split_csv(paths.splits_csv);

    if (cfg.model == "mean") {
        const EncounterTable train_rows = filter_table(table, splits, Split::train);
        gbrt::write_ensemble(gbrt::to_ensemble(gbrt::fit_mean_model(train_rows)),
                             paths.model_gbrt);
        return;
    }
    if (cfg.model == "gbrt") {
        const BandsManifest manifest = detail::load_manifest(cfg);
        const EncounterTable train_rows = filter_table(table, splits, Split::train);
        const auto features = detail::load_env_features(cfg, train_rows, manifest);
        gbrt::write_ensemble(gbrt::fit_gbrt(features, train_rows, cfg.gbrt), paths.model_gbrt);
        return;
    }

    // cnn
    const BandsManifest manifest = detail::load_manifest(cfg);
    const NormalizationStats stats = detail::compute_pipeline_stats(cfg, table, splits);
    write_stats_json(stats, paths.stats);
    const nn::Dataset train_set =
        detail::load_nn_dataset(cfg, table, splits, Split::train, stats, manifest);
    const nn::Dataset val_set =
        detail::load_nn_dataset(cfg, table, splits, Split::val, stats, manifest);

    nn::ArchDescriptor arch;
    arch.in_channels = cfg.stacked_channels();
    arch.n_species = table.cols();
    arch.conv_channels = cfg.conv_channels;
    arch.kernel = cfg.kernel;
    arch.use_location = cfg.use_location;
    arch.loc_width = cfg.loc_width;
    arch.loc_blocks = cfg.loc_blocks;
    arch.dropout = cfg.dropout;

    nn::ModelParams model = nn::build_cnn(arch, derive_seed(cfg.seed, "cnn-init"));
    nn::TrainConfig train_cfg = cfg.train;
    train_cfg.seed = derive_seed(cfg.seed, "cnn-train");
    const std::vector<nn::TrainLogEntry> log = nn::train(model, train_set, val_set, train_cfg);
    nn::write_train_log(log, paths.train_log);
    nn::write_checkpoint(model, paths.model_cnn);
}

inline void predict_stage(const PipelineConfig& cfg) {
    const RunPaths paths(cfg.output);
    const EncounterTable table = read_encounter_table(paths.table);
    const SplitAssignment splits = read_split_csv(paths.splits_csv);
    const EncounterTable eval_rows = filter_table(table, splits, parse_split(cfg.eval_split));
    if (eval_rows.rows() == 0) {
        throw DataError("no hotspots in the '" + cfg.eval_split + "' split");
    }

    std::vector<double> pred_values;
    if (cfg.model == "cnn") {
        const BandsManifest manifest = detail::load_manifest(cfg);
        const NormalizationStats stats = read_stats_json(paths.stats);
        const nn::ModelParams model = nn::read_checkpoint(paths.model_cnn);
        const nn::Dataset data = detail::load_nn_dataset(
            cfg, table, splits, parse_split(cfg.eval_split), stats, manifest);
        pred_values = nn::predict(model, data, cfg.train.batch_size);
    } else {
        const gbrt::GbrtEnsemble ensemble = gbrt::read_ensemble(paths.model_gbrt);
        if (ensemble.n_features == 0) {
            for (std::size_t h = 0; h < eval_rows.rows(); ++h) {
                const std::vector<double> row = gbrt::predict_gbrt_row(ensemble, {});
                pred_values.insert(pred_values.end(), row.begin(), row.end());
            }
        } else {
            const BandsManifest manifest = detail::load_manifest(cfg);
            const auto features = detail::load_env_features(cfg, eval_rows, manifest);
            pred_values = gbrt::predict_gbrt(ensemble, features);
        }
    }

    EncounterTable preds;
    preds.hotspots = eval_rows.hotspots;
    preds.species = eval_rows.species;
    preds.rates.reserve(pred_values.size());
    for (double v : pred_values) preds.rates.push_back(static_cast<float>(v));
    write_encounter_table(preds, paths.predictions_raw);
}

inline void mask_stage(const PipelineConfig& cfg) {
    const RunPaths paths(cfg.output);
    EncounterTable preds = read_encounter_table(paths.predictions_raw);

    if (cfg.mask_mode == "hard") {
        preds = hard_mask(std::move(preds), load_range_maps(cfg.rangemaps, preds.species));
    } else if (cfg.mask_mode == "soft") {
        const EncounterTable table = read_encounter_table(paths.table);
        const SplitAssignment splits = read_split_csv(paths.splits_csv);
        IngestOptions opt;
        opt.date_from = cfg.date_from;
        opt.date_to = cfg.date_to;
        const IngestResult ingested = ingest_checklists(cfg.checklists, cfg.species, opt);
        std::set<std::string> regions;
        for (const Hotspot& h : table.hotspots) regions.insert(h.region_id);
        const SoftMaskFactors factors = compute_soft_mask_factors(
            train_split_checklists(ingested.checklists, splits), ingested.hotspots,
            table.species, regions);
        write_factors_csv(factors, table.species, paths.factors);
        preds = apply_soft_mask(std::move(preds), factors);
    }
    write_encounter_table(preds, paths.predictions);
}

// Artifacts consumed by eval must still match the hashes the manifest
// recorded when they were produced.
inline void verify_against_manifest(const RunPaths& paths) {
    if (!std::filesystem::exists(paths.manifest)) return;
    std::ifstream is(paths.manifest);
    nlohmann::json doc;
    try {
        is >> doc;
    } catch (const nlohmann::json::exception&) {
        return;  // unreadable manifest: nothing to verify against
    }
    if (!doc.contains("stages")) return;
    const std::vector<std::pair<std::string, std::filesystem::path>> inputs = {
        {"mask", paths.predictions}, {"build", paths.table}};
    for (const auto& [producer, artifact] : inputs) {
        if (!doc.at("stages").contains(producer)) continue;
        const std::string recorded = doc.at("stages").at(producer)
                                         .value("outputs", nlohmann::json::object())
                                         .value(artifact.filename().string(), "");
        if (!recorded.empty() && std::filesystem::exists(artifact) &&
            recorded != Manifest::hash_hex(artifact)) {
            throw DataError("eval: " + artifact.filename().string() +
                            " does not match the manifest hash; regenerate it or rerun "
                            "with --force");
        }
    }
}

inline EvalReport eval_stage(const PipelineConfig& cfg) {
    const RunPaths paths(cfg.output);
    verify_against_manifest(paths);
    const EncounterTable preds = read_encounter_table(paths.predictions);
    const EncounterTable table = read_encounter_table(paths.table);
    const SplitAssignment splits = read_split_csv(paths.splits_csv);
    const EncounterTable truth = filter_table(table, splits, parse_split(cfg.eval_split));

    EvalConfig eval_cfg;
    eval_cfg.topk_denominator = parse_topk_denominator(cfg.topk_denominator);
    const EvalReport report = evaluate(preds, truth, eval_cfg);
    write_report_json(report, paths.report);
    write_per_species_csv(report, paths.per_species);
    write_performance_geojson(report, paths.geojson);
    return report;
}

}  // namespace stages

// ---------------------------------------------------------------------------
// Full pipeline
// ---------------------------------------------------------------------------

namespace detail {

template <typename Fn>
void run_stage(Manifest& manifest, const std::string& name, Fn&& fn) {
    try {
        fn();
    } catch (UsageError& e) {
        manifest.record_failed(name);
        throw UsageError("stage " + name + ": " + e.what());
    } catch (MissingInputError& e) {
        manifest.record_failed(name);
        throw MissingInputError("stage " + name + ": " + e.what());
    } catch (NumericError& e) {
        manifest.record_failed(name);
        throw NumericError("stage " + name + ": " + e.what());
    } catch (SdmError& e) {
        manifest.record_failed(name);
        throw DataError("stage " + name + ": " + e.what());
    }
}

}  // namespace detail

// build -> split -> train -> predict -> mask -> eval. Completed stages are
// skipped on re-runs with the same config hash unless force is set. Returns
// the parsed report.json.
inline nlohmann::json run_pipeline(const PipelineConfig& cfg, bool force = false) {
    cfg.validate();
    const RunPaths paths(cfg.output);
    std::filesystem::create_directories(paths.dir);
    DirLock lock(paths.dir);
    Manifest manifest = Manifest::load_or_create(paths, cfg.hash_hex(), cfg.seed);

    struct Stage {
        std::string name;
        std::vector<std::filesystem::path> outputs;
        std::function<void()> run;
    };
    const std::vector<Stage> plan = {
        {"build", {paths.table}, [&] { stages::build(cfg); }},
        {"split", {paths.splits_csv}, [&] { stages::split_stage(cfg); }},
        {"train",
         cfg.model == "cnn"
             ? std::vector<std::filesystem::path>{paths.model_cnn, paths.stats, paths.train_log}
             : std::vector<std::filesystem::path>{paths.model_gbrt},
         [&] { stages::train_stage(cfg); }},
        {"predict", {paths.predictions_raw}, [&] { stages::predict_stage(cfg); }},
        {"mask",
         cfg.mask_mode == "soft"
             ? std::vector<std::filesystem::path>{paths.predictions, paths.factors}
             : std::vector<std::filesystem::path>{paths.predictions},
         [&] { stages::mask_stage(cfg); }},
        {"eval",
         {paths.report, paths.per_species, paths.geojson},
         [&] { stages::eval_stage(cfg); }},
    };

    for (const Stage& stage : plan) {
        if (!force && manifest.stage_done(stage.name, stage.outputs)) continue;
        detail::run_stage(manifest, stage.name, stage.run);
        manifest.record_ok(stage.name, stage.outputs);
    }
    return read_report_json(paths.report);
}

// ---------------------------------------------------------------------------
// Summary rows in the column layout used for reporting: MSE x 1e3,
// MAE x 1e2, accuracies as percentages.
// ---------------------------------------------------------------------------

inline std::string report_summary_header() {
    char buf[160];
    std::snprintf(buf, sizeof(buf), "%-24s %10s %10s %8s %8s %8s", "run", "MSE[1e-3]",
                  "MAE[1e-2]", "Top-k", "Top-30", "Top-10");
    return buf;
}

inline std::string report_summary_row(const std::string& name, const nlohmann::json& report) {
    auto pct = [&report](const char* key) -> std::string {
        if (!report.contains(key) || report.at(key).is_null()) return "-";
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%.2f", report.at(key).get<double>() * 100.0);
        return buf;
    };
    if (!report.contains("mse") || !report.contains("mae")) {
        throw DataError("report is missing the regression aggregates");
    }
    char buf[160];
    std::snprintf(buf, sizeof(buf), "%-24s %10.3f %10.3f %8s %8s %8s", name.c_str(),
                  report.at("mse").get<double>() * 1e3, report.at("mae").get<double>() * 1e2,
                  pct("adaptive_topk").c_str(), pct("top30").c_str(), pct("top10").c_str());
    return buf;
}

}  // namespace sdm
