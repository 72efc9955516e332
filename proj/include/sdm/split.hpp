#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include "sdm/checklist.hpp"
#include "sdm/common.hpp"

namespace sdm {

enum class Split : std::uint8_t { train = 0, val = 1, test = 2 };

inline const char* split_name(Split s) {
    switch (s) {
        case Split::train: return "train";
        case Split::val: return "val";
        case Split::test: return "test";
    }
    return "?";
}

inline Split parse_split(const std::string& s) {
    if (s == "train") return Split::train;
    if (s == "val") return Split::val;
    if (s == "test") return Split::test;
    throw DataError("unknown split name: " + s);
}

// Haversine distance on a sphere of mean Earth radius 6371.0 km.
inline double geodesic_distance_km(double lat_a, double lon_a, double lat_b, double lon_b) {
    constexpr double kEarthRadiusKm = 6371.0;
    constexpr double kDegToRad = M_PI / 180.0;
    const double phi_a = lat_a * kDegToRad;
    const double phi_b = lat_b * kDegToRad;
    const double dphi = (lat_b - lat_a) * kDegToRad;
    const double dlam = (lon_b - lon_a) * kDegToRad;
    const double s1 = std::sin(dphi / 2.0);
    const double s2 = std::sin(dlam / 2.0);
    const double a = s1 * s1 + std::cos(phi_a) * std::cos(phi_b) * s2 * s2;
    return 2.0 * kEarthRadiusKm * std::asin(std::min(1.0, std::sqrt(a)));
}

struct Cluster {
    std::size_t id = 0;
    std::vector<std::string> member_hotspot_ids;
};

// Single linkage: hotspots closer than min_dist_km merge transitively, so
// any two hotspots in different clusters end up >= min_dist_km apart.
inline std::vector<Cluster> cluster_hotspots(const std::vector<Hotspot>& hotspots,
                                             double min_dist_km) {
    if (hotspots.empty()) throw DataError("no hotspots to cluster");
    if (!(min_dist_km > 0.0)) throw UsageError("min_dist_km must be positive");

    const std::size_t n = hotspots.size();
    std::vector<std::size_t> parent(n);
    std::iota(parent.begin(), parent.end(), 0);
    auto find = [&](std::size_t x) {
        while (parent[x] != x) {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        return x;
    };

    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            if (geodesic_distance_km(hotspots[i].lat, hotspots[i].lon, hotspots[j].lat,
                                     hotspots[j].lon) < min_dist_km) {
                const std::size_t ri = find(i), rj = find(j);
                if (ri != rj) parent[std::max(ri, rj)] = std::min(ri, rj);
            }
        }
    }

    std::map<std::size_t, std::size_t> root_to_cluster;
    std::vector<Cluster> clusters;
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t r = find(i);
        auto [it, inserted] = root_to_cluster.emplace(r, clusters.size());
        if (inserted) {
            clusters.push_back(Cluster{clusters.size(), {}});
        }
        clusters[it->second].member_hotspot_ids.push_back(hotspots[i].id);
    }
    return clusters;
}

struct SplitAssignment {
    std::map<std::string, Split> of_hotspot;
    std::uint64_t seed = 0;
    std::array<double, 3> ratios{0.7, 0.2, 0.1};

    Split at(const std::string& hotspot_id) const {
        auto it = of_hotspot.find(hotspot_id);
        if (it == of_hotspot.end()) throw DataError("hotspot not assigned: " + hotspot_id);
        return it->second;
    }
};

// Shuffles clusters with the seeded generator, then hands each cluster to the
// split whose hotspot-count fraction lags its target ratio the most (ties go
// to the lower split index). Whole clusters stay together.
inline SplitAssignment assign_splits(const std::vector<Cluster>& clusters,
                                     std::array<double, 3> ratios, std::uint64_t seed) {
    for (double r : ratios) {
        if (!(r > 0.0)) throw UsageError("split ratios must be positive");
    }
    if (std::abs(ratios[0] + ratios[1] + ratios[2] - 1.0) > 1e-9) {
        throw UsageError("split ratios must sum to 1");
    }
    if (clusters.size() < 3) throw DataError("insufficient clusters");

    std::size_t total = 0;
    for (const Cluster& c : clusters) total += c.member_hotspot_ids.size();

    std::vector<std::size_t> order(clusters.size());
    std::iota(order.begin(), order.end(), 0);
    Rng rng(seed);
    rng.shuffle(order);

    SplitAssignment out;
    out.seed = seed;
    out.ratios = ratios;
    std::array<std::size_t, 3> counts{0, 0, 0};
    for (std::size_t ci : order) {
        std::size_t best = 0;
        double best_deficit = -1e300;
        for (std::size_t k = 0; k < 3; ++k) {
            const double deficit =
                ratios[k] - static_cast<double>(counts[k]) / static_cast<double>(total);
            if (deficit > best_deficit) {
                best_deficit = deficit;
                best = k;
            }
        }
        for (const std::string& id : clusters[ci].member_hotspot_ids) {
            out.of_hotspot.emplace(id, static_cast<Split>(best));
        }
        counts[best] += clusters[ci].member_hotspot_ids.size();
    }
    return out;
}

// splits.csv: header `hotspot_id,split`.
inline void write_split_csv(const SplitAssignment& assignment,
                            const std::filesystem::path& path) {
    std::ofstream os = io::open_output(path);
    os << "hotspot_id,split\n";
    for (const auto& [id, s] : assignment.of_hotspot) {
        os << id << ',' << split_name(s) << '\n';
    }
    if (!os) throw DataError("failed writing " + path.string());
}

inline SplitAssignment read_split_csv(const std::filesystem::path& path) {
    std::ifstream is = io::open_input(path);
    SplitAssignment out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line_no == 1) {
            if (line != "hotspot_id,split") {
                throw DataError("splits.csv: unexpected header: " + line);
            }
            continue;
        }
        if (trim(line).empty()) continue;
        const auto fields = split(line, ',');
        if (fields.size() != 2) {
            throw DataError("splits.csv line " + std::to_string(line_no) + ": expected 2 fields");
        }
        out.of_hotspot[fields[0]] = parse_split(trim(fields[1]));
    }
    return out;
}

// Rows of `table` whose hotspot belongs to `which`, in table order.
inline EncounterTable filter_table(const EncounterTable& table,
                                   const SplitAssignment& assignment, Split which) {
    EncounterTable out;
    out.species = table.species;
    for (std::size_t h = 0; h < table.rows(); ++h) {
        if (assignment.at(table.hotspots[h].id) != which) continue;
        out.hotspots.push_back(table.hotspots[h]);
        for (std::size_t s = 0; s < table.cols(); ++s) {
            out.rates.push_back(table.rate(h, s));
        }
    }
    return out;
}

}  // namespace sdm
