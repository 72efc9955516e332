#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "sdm/common.hpp"

namespace sdm {

// ---------------------------------------------------------------------------
// Domain types
// ---------------------------------------------------------------------------

// Dense, stable species numbering. Index = line number in the species list.
struct SpeciesIndex {
    std::vector<std::string> names;
    std::map<std::string, std::size_t> id_of;

    std::size_t size() const { return names.size(); }

    static SpeciesIndex from_names(std::vector<std::string> list) {
        SpeciesIndex idx;
        idx.names = std::move(list);
        for (std::size_t i = 0; i < idx.names.size(); ++i) {
            if (!idx.id_of.emplace(idx.names[i], i).second) {
                throw DataError("duplicate species name: " + idx.names[i]);
            }
        }
        if (idx.names.empty()) throw DataError("species list is empty");
        return idx;
    }
};

// One observer visit: the set of species reported at a hotspot on a date.
struct Checklist {
    std::string hotspot_id;
    std::set<std::size_t> species_reported;
    std::string date;  // ISO-8601 day, informational
};

struct Hotspot {
    std::string id;
    double lat = 0.0;
    double lon = 0.0;
    std::string region_id;
    std::uint32_t n_checklists = 0;
};

// hotspots x species matrix of encounter rates. Rates are stored as f32,
// matching the on-disk layout, so a write/read round-trip is bit-identical.
struct EncounterTable {
    std::vector<Hotspot> hotspots;
    SpeciesIndex species;
    std::vector<float> rates;  // row-major [hotspots.size() x species.size()]

    std::size_t rows() const { return hotspots.size(); }
    std::size_t cols() const { return species.size(); }
    float& rate(std::size_t h, std::size_t s) { return rates[h * cols() + s]; }
    float rate(std::size_t h, std::size_t s) const { return rates[h * cols() + s]; }
};

// Region-set range map for one species. Unavailable maps are a no-op.
struct RangeMap {
    std::size_t species_index = 0;
    std::set<std::string> allowed_regions;
    bool available = false;

    bool allows(const std::string& region) const {
        return !available || allowed_regions.count(region) > 0;
    }
};

struct IngestOptions {
    // Inclusive ISO date bounds; empty string = unbounded. Default accepts all.
    std::string date_from;
    std::string date_to;
};

struct IngestResult {
    SpeciesIndex species;
    std::vector<Checklist> checklists;
    std::vector<Hotspot> hotspots;  // order of first appearance
};

// ---------------------------------------------------------------------------
// File readers
// ---------------------------------------------------------------------------

// species.txt: one name per line, line number (0-based) is the dense index.
inline SpeciesIndex load_species_list(const std::filesystem::path& path) {
    std::ifstream is = io::open_input(path);
    std::vector<std::string> names;
    std::string line;
    while (std::getline(is, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (trim(line).empty()) continue;
        names.push_back(trim(line));
    }
    return SpeciesIndex::from_names(std::move(names));
}

namespace detail {

inline void check_coordinates(double lat, double lon, std::size_t line_no) {
    if (!(lat >= -90.0 && lat <= 90.0) || !(lon >= -180.0 && lon <= 180.0)) {
        throw DataError("checklists.csv line " + std::to_string(line_no) +
                        ": coordinates out of range (lat " + format_double(lat) +
                        ", lon " + format_double(lon) + ")");
    }
}

}  // namespace detail

// checklists.csv: header `hotspot_id,lat,lon,region_id,date,species` where
// `species` is a `;`-separated list. Only the first five commas delimit
// fields, so the species column never needs quoting.
inline IngestResult ingest_checklists(const std::filesystem::path& checklists_csv,
                                      const std::filesystem::path& species_txt,
                                      const IngestOptions& opt = {}) {
    IngestResult out;
    out.species = load_species_list(species_txt);

    std::ifstream is = io::open_input(checklists_csv);
    std::string line;
    std::size_t line_no = 0;
    std::map<std::string, std::size_t> hotspot_pos;

    while (std::getline(is, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line_no == 1) {
            if (line != "hotspot_id,lat,lon,region_id,date,species") {
                throw DataError("checklists.csv: unexpected header: " + line);
            }
            continue;
        }
        if (trim(line).empty()) continue;

        // split into exactly six fields: the species list keeps its commas-free form
        std::vector<std::string> fields;
        std::size_t start = 0;
        for (int i = 0; i < 5; ++i) {
            const std::size_t pos = line.find(',', start);
            if (pos == std::string::npos) {
                throw DataError("checklists.csv line " + std::to_string(line_no) +
                                ": expected 6 fields");
            }
            fields.emplace_back(line.substr(start, pos - start));
            start = pos + 1;
        }
        fields.emplace_back(line.substr(start));

        const std::string& id = fields[0];
        if (id.empty()) {
            throw DataError("checklists.csv line " + std::to_string(line_no) +
                            ": empty hotspot_id");
        }
        char* end = nullptr;
        const double lat = std::strtod(fields[1].c_str(), &end);
        if (end == fields[1].c_str() || *end != '\0') {
            throw DataError("checklists.csv line " + std::to_string(line_no) +
                            ": malformed latitude '" + fields[1] + "'");
        }
        const double lon = std::strtod(fields[2].c_str(), &end);
        if (end == fields[2].c_str() || *end != '\0') {
            throw DataError("checklists.csv line " + std::to_string(line_no) +
                            ": malformed longitude '" + fields[2] + "'");
        }
        detail::check_coordinates(lat, lon, line_no);
        const std::string& region = fields[3];
        const std::string& date = fields[4];

        // ISO dates compare lexicographically
        if (!opt.date_from.empty() && date < opt.date_from) continue;
        if (!opt.date_to.empty() && date > opt.date_to) continue;

        Checklist cl;
        cl.hotspot_id = id;
        cl.date = date;
        if (!trim(fields[5]).empty()) {
            for (const std::string& name : split(fields[5], ';')) {
                const std::string sp = trim(name);
                if (sp.empty()) continue;
                auto it = out.species.id_of.find(sp);
                if (it == out.species.id_of.end()) {
                    throw DataError("checklists.csv line " + std::to_string(line_no) +
                                    ": unknown species '" + sp +
                                    "' (not in species list)");
                }
                cl.species_reported.insert(it->second);
            }
        }

        auto [it, inserted] = hotspot_pos.emplace(id, out.hotspots.size());
        if (inserted) {
            Hotspot h;
            h.id = id;
            h.lat = lat;
            h.lon = lon;
            h.region_id = region;
            out.hotspots.push_back(std::move(h));
        } else {
            const Hotspot& h = out.hotspots[it->second];
            if (h.lat != lat || h.lon != lon) {
                throw DataError("checklists.csv line " + std::to_string(line_no) +
                                ": inconsistent coordinates for hotspot " + id);
            }
            if (h.region_id != region) {
                throw DataError("checklists.csv line " + std::to_string(line_no) +
                                ": inconsistent region for hotspot " + id);
            }
        }
        out.hotspots[hotspot_pos[id]].n_checklists += 1;
        out.checklists.push_back(std::move(cl));
    }

    if (out.checklists.empty()) throw DataError("no checklists");
    return out;
}

// rangemaps.csv: header `species,region_id`, one row per allowed pair.
// Species absent from the file get an unavailable (no-op) map.
inline std::vector<RangeMap> load_range_maps(const std::filesystem::path& path,
                                             const SpeciesIndex& species) {
    std::vector<RangeMap> maps(species.size());
    for (std::size_t s = 0; s < species.size(); ++s) maps[s].species_index = s;

    std::ifstream is = io::open_input(path);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line_no == 1) {
            if (line != "species,region_id") {
                throw DataError("rangemaps.csv: unexpected header: " + line);
            }
            continue;
        }
        if (trim(line).empty()) continue;
        const auto fields = split(line, ',');
        if (fields.size() != 2) {
            throw DataError("rangemaps.csv line " + std::to_string(line_no) +
                            ": expected 2 fields");
        }
        auto it = species.id_of.find(trim(fields[0]));
        if (it == species.id_of.end()) {
            throw DataError("rangemaps.csv line " + std::to_string(line_no) +
                            ": unknown species '" + fields[0] + "'");
        }
        maps[it->second].available = true;
        maps[it->second].allowed_regions.insert(trim(fields[1]));
    }
    return maps;
}

// ---------------------------------------------------------------------------
// Encounter-rate construction
// ---------------------------------------------------------------------------

// Drops hotspots with fewer than min_checklists visits, then fills
// rate[h][s] = (#checklists at h reporting s) / n_h.
inline EncounterTable compute_encounter_rates(const std::vector<Checklist>& checklists,
                                              const std::vector<Hotspot>& hotspots,
                                              const SpeciesIndex& species,
                                              std::uint32_t min_checklists) {
    if (min_checklists < 1) throw UsageError("min_checklists must be >= 1");

    EncounterTable table;
    table.species = species;
    std::map<std::string, std::size_t> row_of;
    for (const Hotspot& h : hotspots) {
        if (h.n_checklists >= min_checklists) {
            row_of.emplace(h.id, table.hotspots.size());
            table.hotspots.push_back(h);
        }
    }
    if (table.hotspots.empty()) throw DataError("empty table: all hotspots filtered out");

    const std::size_t n = species.size();
    std::vector<std::uint64_t> counts(table.hotspots.size() * n, 0);
    for (const Checklist& cl : checklists) {
        auto it = row_of.find(cl.hotspot_id);
        if (it == row_of.end()) continue;
        for (std::size_t s : cl.species_reported) {
            if (s >= n) throw DataError("species index out of range in checklist");
            counts[it->second * n + s] += 1;
        }
    }

    table.rates.resize(counts.size());
    for (std::size_t h = 0; h < table.hotspots.size(); ++h) {
        const double denom = table.hotspots[h].n_checklists;
        for (std::size_t s = 0; s < n; ++s) {
            table.rates[h * n + s] =
                static_cast<float>(static_cast<double>(counts[h * n + s]) / denom);
        }
    }
    return table;
}

// Zeroes the rate of any species whose available range map excludes the
// hotspot's region. Unavailable maps leave rates untouched.
inline EncounterTable apply_vagrant_correction(EncounterTable table,
                                               const std::vector<RangeMap>& maps) {
    const std::size_t n = table.cols();
    for (std::size_t s = 0; s < std::min(n, maps.size()); ++s) {
        if (!maps[s].available) continue;
        for (std::size_t h = 0; h < table.rows(); ++h) {
            if (maps[s].allowed_regions.count(table.hotspots[h].region_id) == 0) {
                table.rate(h, s) = 0.0f;
            }
        }
    }
    return table;
}

// ---------------------------------------------------------------------------
// Target distribution summary
// ---------------------------------------------------------------------------

struct SpeciesCountHistogram {
    std::vector<std::uint64_t> bins;  // bins[k] = #hotspots with k nonzero species
    double mean_species_per_hotspot = 0.0;
};

inline SpeciesCountHistogram species_count_histogram(const EncounterTable& table) {
    if (table.rows() == 0) throw DataError("empty table");
    SpeciesCountHistogram hist;
    hist.bins.assign(table.cols() + 1, 0);
    std::uint64_t total = 0;
    for (std::size_t h = 0; h < table.rows(); ++h) {
        std::size_t nonzero = 0;
        for (std::size_t s = 0; s < table.cols(); ++s) {
            if (table.rate(h, s) > 0.0f) ++nonzero;
        }
        hist.bins[nonzero] += 1;
        total += nonzero;
    }
    hist.mean_species_per_hotspot =
        static_cast<double>(total) / static_cast<double>(table.rows());
    return hist;
}

// ---------------------------------------------------------------------------
// SDMT container: magic "SDMT", u32 version, hotspot metadata block, then
// rates as little-endian f32 in row-major order. Used both for targets and
// for persisted predictions.
// ---------------------------------------------------------------------------

inline constexpr std::uint32_t kTableFormatVersion = 1;

inline void write_encounter_table(const EncounterTable& table,
                                  const std::filesystem::path& path) {
    std::ofstream os = io::open_output(path);
    io::write_bytes(os, "SDMT", 4);
    io::write_u32(os, kTableFormatVersion);
    io::write_u32(os, static_cast<std::uint32_t>(table.rows()));
    io::write_u32(os, static_cast<std::uint32_t>(table.cols()));
    for (const std::string& name : table.species.names) io::write_string(os, name);
    for (const Hotspot& h : table.hotspots) {
        io::write_string(os, h.id);
        io::write_f64(os, h.lat);
        io::write_f64(os, h.lon);
        io::write_string(os, h.region_id);
        io::write_u32(os, h.n_checklists);
    }
    for (float r : table.rates) io::write_f32(os, r);
    if (!os) throw DataError("failed writing " + path.string());
}

inline EncounterTable read_encounter_table(const std::filesystem::path& path) {
    std::ifstream is = io::open_input(path);
    io::expect_magic(is, "SDMT", "SDMT");
    const std::uint32_t version = io::read_u32(is, "version");
    if (version != kTableFormatVersion) {
        throw DataError("unsupported SDMT version " + std::to_string(version));
    }
    const auto rows = io::checked_count(io::read_u32(is, "row count"), 50'000'000, "hotspot");
    const auto cols = io::checked_count(io::read_u32(is, "column count"), 1'000'000, "species");

    EncounterTable table;
    std::vector<std::string> names;
    names.reserve(cols);
    for (std::uint32_t s = 0; s < cols; ++s) names.push_back(io::read_string(is, "species name"));
    table.species = SpeciesIndex::from_names(std::move(names));
    table.hotspots.resize(rows);
    for (Hotspot& h : table.hotspots) {
        h.id = io::read_string(is, "hotspot id");
        h.lat = io::read_f64(is, "lat");
        h.lon = io::read_f64(is, "lon");
        h.region_id = io::read_string(is, "region");
        h.n_checklists = io::read_u32(is, "n_checklists");
    }
    table.rates.resize(static_cast<std::size_t>(rows) * cols);
    for (float& r : table.rates) r = io::read_f32(is, "rate");
    return table;
}

}  // namespace sdm
