#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <ostream>
#include <set>
#include <string>
#include <vector>

#include "lcnet/data.hpp"
#include "lcnet/error.hpp"

namespace lcnet {

/// Files are found anywhere below the directory by their HMD names:
/// <COUNTRY>.Mx_1x1.txt, <COUNTRY>.Deaths_1x1.txt, <COUNTRY>.Exposures_1x1.txt.
struct IngestOptions {
    SelectionRules rules;
    int train_max_year = 1999;
    int last_year = std::numeric_limits<int>::max();
    std::set<std::string> countries; ///< empty keeps every country found
};

struct IngestReport {
    std::vector<std::string> countries_found;
    std::vector<PopulationId> selected;
    std::map<PopulationId, std::size_t> imputed_cells;
    std::size_t training_curves = 0;

    std::size_t selected_countries() const {
        std::set<std::string> c;
        for (const auto& id : selected) c.insert(id.country);
        return c.size();
    }
};

struct IngestResult {
    PanelDataset panel;
    IngestReport report;
};

/// Map of country -> the HMD files found for it.
inline std::map<std::string, CountryData> read_hmd_directory(const std::filesystem::path& dir,
                                                             const std::set<std::string>& only = {}) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(dir)) throw Error("not a directory: " + dir.string());
    std::vector<fs::path> files;
    for (const auto& e : fs::recursive_directory_iterator(dir))
        if (e.is_regular_file()) files.push_back(e.path());
    std::sort(files.begin(), files.end());

    std::map<std::string, CountryData> out;
    for (const auto& path : files) {
        const std::string name = path.filename().string();
        const auto dot = name.find('.');
        if (dot == std::string::npos) continue;
        const std::string country = name.substr(0, dot), rest = name.substr(dot + 1);
        TableKind kind;
        if (rest == "Mx_1x1.txt") kind = TableKind::rates;
        else if (rest == "Deaths_1x1.txt") kind = TableKind::deaths;
        else if (rest == "Exposures_1x1.txt") kind = TableKind::exposures;
        else continue;
        if (!only.empty() && !only.count(country)) continue;
        std::ifstream in(path);
        if (!in) throw Error("cannot open " + path.string());
        CountryData& cd = out[country];
        cd.country = country;
        auto table = parse_hmd_table(in, country, kind, path.string());
        auto& slot = kind == TableKind::rates ? cd.rates : kind == TableKind::deaths ? cd.deaths : cd.exposures;
        if (slot) throw DomainError(country + ": more than one " + to_string(kind) + " file below " + dir.string());
        slot = std::move(table);
    }
    if (out.empty()) throw Error("no HMD 1x1 files found below " + dir.string());
    return out;
}

/// Select, build, impute and split a panel from parsed country data.
inline IngestResult ingest(const std::map<std::string, CountryData>& data, const IngestOptions& opt = {}) {
    IngestResult r;
    std::map<std::string, RawRateTable> selection;
    for (const auto& [country, cd] : data) {
        r.report.countries_found.push_back(country);
        selection.emplace(country, cd.selection_table());
    }
    r.report.selected = select_populations(selection, opt.rules);
    if (r.report.selected.empty()) throw DomainError("ingest: no population meets the selection rules");
    SurfaceOptions so;
    so.first_year = opt.rules.first_year;
    so.last_year = opt.last_year;
    so.max_age = opt.rules.max_age;
    SurfaceMap surfaces = impute_missing(build_surfaces(data, r.report.selected, so));
    for (const auto& [id, s] : surfaces) r.report.imputed_cells[id] = s.imputed.count();
    r.panel = assemble_panel(surfaces, opt.train_max_year, opt.rules.max_age + 1);
    r.report.training_curves = r.panel.training_example_count();
    return r;
}

inline IngestResult ingest_directory(const std::filesystem::path& dir, const IngestOptions& opt = {}) {
    return ingest(read_hmd_directory(dir, opt.countries), opt);
}

inline void write_ingest_report(std::ostream& out, const IngestReport& r) {
    out << "countries found: " << r.countries_found.size() << '\n';
    out << "countries selected: " << r.selected_countries() << '\n';
    out << "populations selected: " << r.selected.size() << '\n';
    out << "training curves: " << r.training_curves << '\n';
    std::size_t total = 0;
    for (const auto& [id, n] : r.imputed_cells) total += n;
    out << "imputed cells: " << total << '\n';
    for (const auto& [id, n] : r.imputed_cells)
        if (n > 0) out << "  " << id.label() << ": " << n << '\n';
}

} // namespace lcnet
