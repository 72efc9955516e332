// Command-line front end: synth, build, split, train, predict, mask, eval,
// report, run. Exit codes: 0 ok, 2 usage, 3 missing input, 4 data error,
// 5 numeric failure.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "sdm/sdm.hpp"

namespace {

struct CommonOpts {
    std::string config_path;
    std::int64_t seed_override = -1;

    sdm::PipelineConfig load() const {
        sdm::PipelineConfig cfg = sdm::parse_pipeline_config(config_path);
        if (seed_override >= 0) cfg.seed = static_cast<std::uint64_t>(seed_override);
        return cfg;
    }
};

void add_common(CLI::App* cmd, CommonOpts& opts) {
    cmd->add_option("--config", opts.config_path, "run configuration file")->required();
    cmd->add_option("--seed", opts.seed_override, "override the configured seed");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"encounter-rate toolkit: checklists + raster patches -> "
                 "multi-species predictors"};
    app.require_subcommand(1);

    // ---- synth ----
    sdm::SyntheticWorldSpec spec;
    std::string synth_out;
    auto* synth = app.add_subcommand("synth", "generate a synthetic world");
    synth->add_option("--out", synth_out, "output directory")->required();
    synth->add_option("--hotspots", spec.n_hotspots, "number of hotspots");
    synth->add_option("--species", spec.n_species, "number of species");
    synth->add_option("--regions", spec.n_regions, "number of regions");
    synth->add_option("--archetypes", spec.n_archetypes, "number of habitat archetypes");
    synth->add_option("--patch", spec.patch_px, "image/landcover patch size in pixels");
    synth->add_option("--env-patch", spec.env_px, "environmental patch size in pixels");
    synth->add_option("--min-checklists", spec.min_checklists, "min checklists per hotspot");
    synth->add_option("--max-checklists", spec.max_checklists, "max checklists per hotspot");
    synth->add_option("--image-noise", spec.image_noise, "image band noise sigma");
    synth->add_option("--env-noise", spec.env_noise, "environmental band noise sigma");
    synth->add_option("--jitter", spec.position_jitter, "grid position jitter fraction");
    synth->add_flag("--shared-env-pairs", spec.env_shared_by_pairs,
                    "archetype pairs share environmental profiles");
    synth->add_flag("--exclusive-ranges", spec.regional_exclusivity,
                    "restrict species to random region subsets");
    synth->add_option("--map-coverage", spec.range_map_coverage,
                      "fraction of species with published range maps");
    synth->add_option("--seed", spec.seed, "world seed");
    synth->callback([&] { sdm::generate_synthetic_world(spec, synth_out); });

    // ---- build ----
    CommonOpts build_opts;
    auto* build = app.add_subcommand("build", "ingest checklists into an encounter table");
    add_common(build, build_opts);
    build->callback([&] {
        const sdm::PipelineConfig cfg = build_opts.load();
        sdm::stages::build(cfg);
        const sdm::EncounterTable table =
            sdm::read_encounter_table(sdm::RunPaths(cfg.output).table);
        const sdm::SpeciesCountHistogram hist = sdm::species_count_histogram(table);
        std::cout << table.rows() << " hotspots x " << table.cols()
                  << " species; mean species with nonzero rate per hotspot: "
                  << sdm::format_double(hist.mean_species_per_hotspot) << '\n';
    });

    // ---- split ----
    CommonOpts split_opts;
    double min_dist_override = -1.0;
    std::string ratios_override;
    auto* split_cmd = app.add_subcommand("split", "spatially separated train/val/test split");
    add_common(split_cmd, split_opts);
    split_cmd->add_option("--min-dist-km", min_dist_override,
                          "minimum inter-cluster distance in km");
    split_cmd->add_option("--ratios", ratios_override, "train,val,test fractions");
    split_cmd->callback([&] {
        sdm::PipelineConfig cfg = split_opts.load();
        if (min_dist_override > 0.0) cfg.min_dist_km = min_dist_override;
        if (!ratios_override.empty()) cfg.ratios = sdm::detail::parse_ratios(ratios_override);
        sdm::stages::split_stage(cfg);
    });

    // ---- train ----
    CommonOpts train_opts;
    std::string model_override;
    std::int64_t rounds_override = -1, depth_override = -1, epochs_override = -1;
    double shrinkage_override = -1.0;
    auto* train = app.add_subcommand("train", "fit the configured model");
    add_common(train, train_opts);
    train->add_option("--model", model_override, "mean, gbrt or cnn");
    train->add_option("--rounds", rounds_override, "boosting rounds");
    train->add_option("--depth", depth_override, "max tree depth");
    train->add_option("--shrinkage", shrinkage_override, "boosting shrinkage");
    train->add_option("--epochs", epochs_override, "training epochs");
    train->callback([&] {
        sdm::PipelineConfig cfg = train_opts.load();
        if (!model_override.empty()) cfg.model = model_override;
        if (rounds_override >= 0) cfg.gbrt.rounds = static_cast<std::size_t>(rounds_override);
        if (depth_override > 0) cfg.gbrt.max_depth = static_cast<std::size_t>(depth_override);
        if (shrinkage_override > 0.0) cfg.gbrt.shrinkage = shrinkage_override;
        if (epochs_override > 0) cfg.train.epochs = static_cast<std::size_t>(epochs_override);
        cfg.validate();
        sdm::stages::train_stage(cfg);
    });

    // ---- predict ----
    CommonOpts predict_opts;
    auto* predict = app.add_subcommand("predict", "predict encounter rates for the eval split");
    add_common(predict, predict_opts);
    predict->callback([&] { sdm::stages::predict_stage(predict_opts.load()); });

    // ---- mask ----
    CommonOpts mask_opts;
    std::string mode_override;
    auto* mask = app.add_subcommand("mask", "geographic correction of predictions");
    add_common(mask, mask_opts);
    mask->add_option("--mode", mode_override, "none, hard or soft");
    mask->callback([&] {
        sdm::PipelineConfig cfg = mask_opts.load();
        if (!mode_override.empty()) cfg.mask_mode = mode_override;
        cfg.validate();
        sdm::stages::mask_stage(cfg);
    });

    // ---- eval ----
    CommonOpts eval_opts;
    std::string eval_split_override;
    auto* eval = app.add_subcommand("eval", "score predictions against held-out targets");
    add_common(eval, eval_opts);
    eval->add_option("--split", eval_split_override, "split to evaluate (train/val/test)");
    eval->callback([&] {
        sdm::PipelineConfig cfg = eval_opts.load();
        if (!eval_split_override.empty()) cfg.eval_split = eval_split_override;
        const sdm::EvalReport report = sdm::stages::eval_stage(cfg);
        std::cout << sdm::report_summary_header() << '\n'
                  << sdm::report_summary_row(cfg.output.filename().string(),
                                             sdm::report_to_json(report))
                  << '\n';
    });

    // ---- report ----
    std::vector<std::string> run_dirs;
    auto* report = app.add_subcommand("report", "summarize one or more runs");
    report->add_option("runs", run_dirs, "run directories containing report.json")->required();
    report->callback([&] {
        std::cout << sdm::report_summary_header() << '\n';
        for (const std::string& dir : run_dirs) {
            const sdm::RunPaths paths{std::filesystem::path(dir)};
            const nlohmann::json j = sdm::read_report_json(paths.report);
            std::cout << sdm::report_summary_row(paths.dir.filename().string(), j) << '\n';
        }
    });

    // ---- run ----
    CommonOpts run_opts;
    bool force = false;
    auto* run = app.add_subcommand("run", "execute the full pipeline");
    add_common(run, run_opts);
    run->add_flag("--force", force, "rerun all stages even if artifacts are current");
    run->callback([&] {
        const sdm::PipelineConfig cfg = run_opts.load();
        const nlohmann::json j = sdm::run_pipeline(cfg, force);
        std::cout << sdm::report_summary_header() << '\n'
                  << sdm::report_summary_row(cfg.output.filename().string(), j) << '\n';
    });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    } catch (const sdm::UsageError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const sdm::MissingInputError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 3;
    } catch (const sdm::NumericError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 5;
    } catch (const sdm::SdmError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
