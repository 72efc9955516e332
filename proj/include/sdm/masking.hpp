#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "sdm/checklist.hpp"
#include "sdm/common.hpp"
#include "sdm/split.hpp"

namespace sdm {

// Post-hoc hard masking: zero the predictions of species whose available
// range map excludes the hotspot's region. Same rule the vagrant correction
// applies to targets, here applied to model output.
inline EncounterTable hard_mask(EncounterTable preds, const std::vector<RangeMap>& maps) {
    return apply_vagrant_correction(std::move(preds), maps);
}

// ---------------------------------------------------------------------------
// Soft masking: regional prevalence correction factors
// ---------------------------------------------------------------------------

// c[region][species] = (fraction of region checklists reporting the species)
//                    / (fraction of all checklists reporting it).
struct SoftMaskFactors {
    std::map<std::string, std::vector<double>> factors;        // region -> per-species c
    std::map<std::string, std::uint64_t> region_checklists;    // |C_R|
    std::uint64_t total_checklists = 0;                        // |C_W|
    std::size_t n_species = 0;
};

// Factors from training-split checklists only. Conventions for empty
// denominators: a species never reported anywhere gets c = 0 in every
// region; a region with no training checklists gets the neutral c = 1.
inline SoftMaskFactors compute_soft_mask_factors(const std::vector<Checklist>& train_checklists,
                                                 const std::vector<Hotspot>& hotspots,
                                                 const SpeciesIndex& species,
                                                 const std::set<std::string>& region_universe) {
    if (train_checklists.empty()) throw DataError("soft mask: empty training set");

    std::map<std::string, std::string> region_of;
    for (const Hotspot& h : hotspots) region_of[h.id] = h.region_id;

    const std::size_t n = species.size();
    std::vector<std::uint64_t> global_reports(n, 0);
    std::map<std::string, std::vector<std::uint64_t>> region_reports;
    std::map<std::string, std::uint64_t> region_counts;
    for (const std::string& r : region_universe) {
        region_reports.emplace(r, std::vector<std::uint64_t>(n, 0));
        region_counts.emplace(r, 0);
    }

    for (const Checklist& cl : train_checklists) {
        auto it = region_of.find(cl.hotspot_id);
        if (it == region_of.end()) {
            throw DataError("soft mask: checklist references unknown hotspot " + cl.hotspot_id);
        }
        const std::string& region = it->second;
        auto rr = region_reports.find(region);
        if (rr == region_reports.end()) {
            throw DataError("soft mask: region '" + region + "' missing from region universe");
        }
        region_counts[region] += 1;
        for (std::size_t s : cl.species_reported) {
            global_reports[s] += 1;
            rr->second[s] += 1;
        }
    }

    SoftMaskFactors out;
    out.n_species = n;
    out.total_checklists = train_checklists.size();
    out.region_checklists = region_counts;
    const double total = static_cast<double>(train_checklists.size());
    for (const std::string& region : region_universe) {
        std::vector<double> c(n, 1.0);
        const std::uint64_t in_region = region_counts[region];
        if (in_region > 0) {
            const std::vector<std::uint64_t>& reports = region_reports[region];
            for (std::size_t s = 0; s < n; ++s) {
                if (global_reports[s] == 0) {
                    c[s] = 0.0;
                } else {
                    const double regional =
                        static_cast<double>(reports[s]) / static_cast<double>(in_region);
                    const double global = static_cast<double>(global_reports[s]) / total;
                    c[s] = regional / global;
                }
            }
        }
        out.factors.emplace(region, std::move(c));
    }
    return out;
}

// pred := clip_[0,1](c * pred); hotspots whose region has no factor row are
// left untouched (neutral factor).
inline EncounterTable apply_soft_mask(EncounterTable preds, const SoftMaskFactors& factors) {
    const std::size_t n = preds.cols();
    if (factors.n_species != n) {
        throw DataError("soft mask: factor table covers " + std::to_string(factors.n_species) +
                        " species, predictions have " + std::to_string(n));
    }
    for (std::size_t h = 0; h < preds.rows(); ++h) {
        auto it = factors.factors.find(preds.hotspots[h].region_id);
        if (it == factors.factors.end()) continue;
        for (std::size_t s = 0; s < n; ++s) {
            const double v = it->second[s] * static_cast<double>(preds.rate(h, s));
            preds.rate(h, s) = static_cast<float>(std::clamp(v, 0.0, 1.0));
        }
    }
    return preds;
}

// factors.csv: header `region_id,species,factor`, one row per pair.
inline void write_factors_csv(const SoftMaskFactors& factors, const SpeciesIndex& species,
                              const std::filesystem::path& path) {
    std::ofstream os = io::open_output(path);
    os << "region_id,species,factor\n";
    for (const auto& [region, c] : factors.factors) {
        for (std::size_t s = 0; s < c.size(); ++s) {
            os << region << ',' << species.names[s] << ',' << format_double(c[s]) << '\n';
        }
    }
    if (!os) throw DataError("failed writing " + path.string());
}

inline SoftMaskFactors read_factors_csv(const std::filesystem::path& path,
                                        const SpeciesIndex& species) {
    std::ifstream is = io::open_input(path);
    SoftMaskFactors out;
    out.n_species = species.size();
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line_no == 1) {
            if (line != "region_id,species,factor") {
                throw DataError("factors.csv: unexpected header: " + line);
            }
            continue;
        }
        if (trim(line).empty()) continue;
        const auto fields = split(line, ',');
        if (fields.size() != 3) {
            throw DataError("factors.csv line " + std::to_string(line_no) + ": expected 3 fields");
        }
        auto it = species.id_of.find(trim(fields[1]));
        if (it == species.id_of.end()) {
            throw DataError("factors.csv line " + std::to_string(line_no) +
                            ": unknown species '" + fields[1] + "'");
        }
        auto [row, inserted] =
            out.factors.emplace(fields[0], std::vector<double>(species.size(), 1.0));
        char* end = nullptr;
        const double c = std::strtod(fields[2].c_str(), &end);
        if (end == fields[2].c_str() || *end != '\0' || c < 0.0) {
            throw DataError("factors.csv line " + std::to_string(line_no) +
                            ": bad factor '" + fields[2] + "'");
        }
        row->second[it->second] = c;
    }
    return out;
}

// Training-split checklists for a split assignment; feeds the factor
// computation so that held-out data never leaks into the correction.
inline std::vector<Checklist> train_split_checklists(const std::vector<Checklist>& all,
                                                     const SplitAssignment& assignment) {
    std::vector<Checklist> out;
    for (const Checklist& cl : all) {
        auto it = assignment.of_hotspot.find(cl.hotspot_id);
        if (it != assignment.of_hotspot.end() && it->second == Split::train) {
            out.push_back(cl);
        }
    }
    return out;
}

}  // namespace sdm
