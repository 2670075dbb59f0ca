#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "hurpipe/errors.hpp"
#include "hurpipe/raster.hpp"

namespace hurpipe::spatialcv {

struct CountryRecord {
    std::string code;
    std::string name;
    double area_km2 = 0.0;
};

// Country -> fold id (1-based), plus the area-sorted order the assignment
// was derived from.
struct FoldAssignment {
    int k = 0;
    std::map<std::string, int> fold_of;
    std::vector<std::string> order; // codes, largest area first

    std::vector<std::string> members(int fold) const {
        std::vector<std::string> out;
        for (const auto& code : order)
            if (fold_of.at(code) == fold) out.push_back(code);
        return out;
    }
};

// Sorts countries by area descending (ties by code ascending) and deals them
// out cyclically, so fold sizes differ by at most one country.
inline FoldAssignment assign_folds(std::vector<CountryRecord> countries, int k) {
    if (k < 1) throw ConfigError("fold count must be positive");
    if (countries.size() < std::size_t(k))
        throw ConfigError("need at least as many countries as folds");
    std::set<std::string> seen;
    for (const auto& c : countries) {
        if (!seen.insert(c.code).second)
            throw DataError("duplicate country code: " + c.code);
        if (!(c.area_km2 > 0.0))
            throw DataError("country " + c.code + " has non-positive area");
    }
    std::sort(countries.begin(), countries.end(),
              [](const CountryRecord& a, const CountryRecord& b) {
                  if (a.area_km2 != b.area_km2) return a.area_km2 > b.area_km2;
                  return a.code < b.code;
              });
    FoldAssignment fa;
    fa.k = k;
    for (std::size_t i = 0; i < countries.size(); ++i) {
        fa.fold_of[countries[i].code] = int(i % std::size_t(k)) + 1;
        fa.order.push_back(countries[i].code);
    }
    return fa;
}

// One train/validation/test rotation. Train always holds k-2 folds.
struct FoldConfig {
    std::vector<int> train;
    int validation = 0;
    int test = 0;

    // "(123, 4, 5)"-style notation.
    std::string notation() const {
        std::string s = "(";
        for (int f : train) s += std::to_string(f);
        s += ", " + std::to_string(validation) + ", " + std::to_string(test) + ")";
        return s;
    }
};

inline std::vector<FoldConfig> fold_configs(int k) {
    if (k < 3) throw ConfigError("rotations need at least 3 folds");
    std::vector<FoldConfig> out;
    for (int r = 0; r < k; ++r) {
        FoldConfig fc;
        for (int j = 0; j < k - 2; ++j) fc.train.push_back((r + j) % k + 1);
        fc.validation = (r + k - 2) % k + 1;
        fc.test = (r + k - 1) % k + 1;
        out.push_back(std::move(fc));
    }
    return out;
}

inline std::string configs_notation(const std::vector<FoldConfig>& configs) {
    std::string s;
    for (std::size_t i = 0; i < configs.size(); ++i) {
        if (i) s += ", ";
        s += configs[i].notation();
    }
    return s;
}

struct SplitTiles {
    std::vector<raster::GridTile> train;
    std::vector<raster::GridTile> validation;
    std::vector<raster::GridTile> test;
};

// Routes every tile into exactly one of the three lists by its country's fold.
inline SplitTiles tiles_for_split(const raster::TileGrid& grid,
                                  const FoldAssignment& fa, const FoldConfig& fc) {
    SplitTiles out;
    for (const auto& tile : grid.tiles) {
        const auto it = fa.fold_of.find(tile.country);
        if (it == fa.fold_of.end())
            throw CoverageError("country " + tile.country + " missing from fold assignment");
        const int fold = it->second;
        if (fold == fc.test) out.test.push_back(tile);
        else if (fold == fc.validation) out.validation.push_back(tile);
        else out.train.push_back(tile);
    }
    return out;
}

// ---------------------------------------------------------------------------
// CSV / JSON interchange
// ---------------------------------------------------------------------------

namespace detail {

// Minimal quote-aware CSV line split.
inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string field;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
                field += '"';
                ++i;
            } else if (c == '"') {
                quoted = false;
            } else {
                field += c;
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            out.push_back(std::move(field));
            field.clear();
        } else if (c != '\r') {
            field += c;
        }
    }
    out.push_back(std::move(field));
    return out;
}

} // namespace detail

// Expects a header line "code,name,area_km2".
inline std::vector<CountryRecord> read_countries_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open countries file: " + path.string());
    std::vector<CountryRecord> out;
    std::string line;
    bool first = true;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto fields = detail::split_csv_line(line);
        if (first) {
            first = false;
            if (!fields.empty() && fields[0] == "code") continue; // header
        }
        if (fields.size() != 3)
            throw DataError("countries row needs code,name,area_km2: " + line);
        CountryRecord rec;
        rec.code = fields[0];
        rec.name = fields[1];
        try {
            rec.area_km2 = std::stod(fields[2]);
        } catch (const std::exception&) {
            throw DataError("bad area value in countries row: " + line);
        }
        out.push_back(std::move(rec));
    }
    return out;
}

inline void to_json(nlohmann::json& j, const FoldConfig& fc) {
    j = {{"train", fc.train}, {"validation", fc.validation}, {"test", fc.test}};
}
inline void from_json(const nlohmann::json& j, FoldConfig& fc) {
    fc.train = j.at("train").get<std::vector<int>>();
    fc.validation = j.at("validation").get<int>();
    fc.test = j.at("test").get<int>();
}

inline void to_json(nlohmann::json& j, const FoldAssignment& fa) {
    j = {{"k", fa.k}, {"assignment", fa.fold_of}, {"order", fa.order}};
}
inline void from_json(const nlohmann::json& j, FoldAssignment& fa) {
    fa.k = j.at("k").get<int>();
    fa.fold_of = j.at("assignment").get<std::map<std::string, int>>();
    fa.order = j.at("order").get<std::vector<std::string>>();
}

} // namespace hurpipe::spatialcv
