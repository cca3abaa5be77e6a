#pragma once

#include <algorithm>
#include <set>
#include <string>
#include <vector>

#include "lcnet/error.hpp"

namespace lcnet::hmd {

/// First and last calendar year of one HMD country series.
struct CountryCoverage {
    const char* country;
    int first_year;
    int last_year;
};

/// The 40 countries of the study with the period covered by their HMD files.
inline const std::vector<CountryCoverage>& study_coverage() {
    static const std::vector<CountryCoverage> rows = {
        {"AUS", 1950, 2018},     {"AUT", 1950, 2017},     {"BEL", 1950, 2018},     {"BGR", 1950, 2017},
        {"BLR", 1959, 2018},     {"CAN", 1950, 2018},     {"CHE", 1950, 2018},     {"CZE", 1950, 2018},
        {"DEUTE", 1956, 2017},   {"DEUTW", 1956, 2017},   {"DNK", 1950, 2019},     {"ESP", 1950, 2018},
        {"EST", 1959, 2017},     {"FIN", 1950, 2019},     {"FRATNP", 1950, 2018},  {"GBRTENW", 1950, 2018},
        {"GBR_NIR", 1950, 2018}, {"GBR_SCO", 1950, 2018}, {"GRC", 1981, 2017},     {"HUN", 1950, 2017},
        {"IRL", 1950, 2017},     {"ISL", 1950, 2018},     {"ISR", 1983, 2016},     {"ITA", 1950, 2017},
        {"JPN", 1950, 2019},     {"LTU", 1959, 2019},     {"LUX", 1960, 2019},     {"LVA", 1959, 2017},
        {"NLD", 1950, 2018},     {"NOR", 1950, 2018},     {"NZL_NM", 1950, 2008},  {"POL", 1958, 2018},
        {"PRT", 1950, 2018},     {"RUS", 1959, 2014},     {"SVK", 1950, 2017},     {"SVN", 1983, 2017},
        {"SWE", 1950, 2019},     {"TWN", 1970, 2019},     {"UKR", 1959, 2013},     {"USA", 1950, 2018},
    };
    return rows;
}

/// Countries without CAN ordered by population size in 2000, largest first.
inline const std::vector<std::string>& size_order_2000() {
    static const std::vector<std::string> order = {
        "USA",  "RUS", "JPN", "DEUTW", "FRATNP", "ITA", "GBRTENW", "UKR", "ESP", "POL",     "TWN",
        "AUS",  "NLD", "DEUTE", "GRC", "HUN",    "PRT", "BLR",     "CZE", "BEL", "SWE",     "AUT",
        "BGR",  "CHE", "ISR", "SVK",   "DNK",    "FIN", "GBR_SCO", "NOR", "IRL", "LTU",     "NZL_NM",
        "LVA",  "SVN", "GBR_NIR", "EST", "LUX",  "ISL",
    };
    return order;
}

/// Training curves (population x year pairs, both genders) with years in
/// [first_year, train_max_year], optionally leaving some countries out.
inline std::size_t training_curve_count(int first_year, int train_max_year, const std::set<std::string>& exclude = {}) {
    if (train_max_year < first_year) throw DomainError("training_curve_count: empty year window");
    std::size_t n = 0;
    for (const auto& c : study_coverage()) {
        if (exclude.count(c.country)) continue;
        const int lo = std::max(first_year, c.first_year), hi = std::min(train_max_year, c.last_year);
        if (hi >= lo) n += 2 * static_cast<std::size_t>(hi - lo + 1);
    }
    return n;
}

} // namespace lcnet::hmd
