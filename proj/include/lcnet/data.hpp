#pragma once

#include <algorithm>
#include <cmath>
#include <compare>
#include <cstdint>
#include <istream>
#include <limits>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "lcnet/error.hpp"
#include "lcnet/format.hpp"
#include "lcnet/linalg.hpp"

namespace lcnet {

enum class Gender : std::uint8_t { female = 0, male = 1 };

inline constexpr int kGenderCount = 2;

inline std::string to_string(Gender g) { return g == Gender::female ? "female" : "male"; }

inline Gender parse_gender(const std::string& s) {
    if (s == "female" || s == "f" || s == "F") return Gender::female;
    if (s == "male" || s == "m" || s == "M") return Gender::male;
    throw DomainError("unknown gender label '" + s + "'");
}

struct PopulationId {
    std::string country;
    Gender gender = Gender::female;

    std::string label() const { return country + "_" + to_string(gender); }

    friend auto operator<=>(const PopulationId&, const PopulationId&) = default;
    friend bool operator==(const PopulationId&, const PopulationId&) = default;
};

// ---------------------------------------------------------------------------
// Raw HMD tables

enum class TableKind { rates, deaths, exposures };

inline std::string to_string(TableKind k) {
    switch (k) {
    case TableKind::rates: return "rates";
    case TableKind::deaths: return "deaths";
    case TableKind::exposures: return "exposures";
    }
    return "?";
}

/// Age label of the open interval in HMD 1x1 files ("110+").
inline constexpr int kOpenAge = 110;

struct RawRow {
    int year = 0;
    int age = 0;
    bool open_age = false;
    std::optional<double> female;
    std::optional<double> male;
    std::optional<double> total;

    const std::optional<double>& value(Gender g) const { return g == Gender::female ? female : male; }
};

/// One HMD period file (Mx_1x1, Deaths_1x1 or Exposures_1x1) for a country.
struct RawRateTable {
    std::string country;
    TableKind kind = TableKind::rates;
    std::vector<RawRow> rows;
};

namespace detail {

inline std::vector<std::string> split_ws(const std::string& line) {
    std::vector<std::string> out;
    std::istringstream is(line);
    std::string tok;
    while (is >> tok) out.push_back(tok);
    return out;
}

inline std::optional<double> parse_cell(const std::string& tok, const std::string& source, std::size_t line) {
    if (tok == ".") return std::nullopt;
    std::size_t used = 0;
    double v = 0.0;
    try {
        v = std::stod(tok, &used);
    } catch (const std::exception&) {
        throw ParseError(source, line, "non-numeric value '" + tok + "'");
    }
    if (used != tok.size()) throw ParseError(source, line, "non-numeric value '" + tok + "'");
    if (!std::isfinite(v) || v < 0.0) throw ParseError(source, line, "value must be finite and nonnegative: '" + tok + "'");
    return v;
}

inline int parse_int(const std::string& tok, const std::string& what, const std::string& source, std::size_t line) {
    std::size_t used = 0;
    int v = 0;
    try {
        v = std::stoi(tok, &used);
    } catch (const std::exception&) {
        throw ParseError(source, line, "invalid " + what + " '" + tok + "'");
    }
    if (used != tok.size()) throw ParseError(source, line, "invalid " + what + " '" + tok + "'");
    return v;
}

} // namespace detail

/// Parse an HMD 1x1 period table. Lines up to and including the column header
/// (first token "Year") are skipped; "." is a missing value; "110+" is the open age.
inline RawRateTable parse_hmd_table(std::istream& in, const std::string& country, TableKind kind,
                                    const std::string& source = "<stream>") {
    RawRateTable table{country, kind, {}};
    std::string line;
    std::size_t lineno = 0;
    bool in_body = false;
    std::map<int, int> last_year_by_age;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        const auto toks = detail::split_ws(line);
        if (!in_body) {
            if (!toks.empty() && toks.front() == "Year") {
                if (toks.size() != 5) throw ParseError(source, lineno, "expected columns Year Age Female Male Total");
                in_body = true;
            }
            continue;
        }
        if (toks.empty()) continue;
        if (toks.size() != 5)
            throw ParseError(source, lineno, "expected 5 columns, found " + std::to_string(toks.size()));
        RawRow row;
        row.year = detail::parse_int(toks[0], "year", source, lineno);
        if (toks[1].ends_with('+')) {
            row.age = detail::parse_int(toks[1].substr(0, toks[1].size() - 1), "age", source, lineno);
            row.open_age = true;
        } else {
            row.age = detail::parse_int(toks[1], "age", source, lineno);
        }
        if (row.age < 0) throw ParseError(source, lineno, "negative age");
        row.female = detail::parse_cell(toks[2], source, lineno);
        row.male = detail::parse_cell(toks[3], source, lineno);
        row.total = detail::parse_cell(toks[4], source, lineno);
        auto [it, fresh] = last_year_by_age.try_emplace(row.age, row.year);
        if (!fresh) {
            if (row.year <= it->second)
                throw ParseError(source, lineno, "years not strictly increasing for age " + std::to_string(row.age));
            it->second = row.year;
        }
        table.rows.push_back(row);
    }
    if (!in_body) throw ParseError(source, lineno, "no 'Year Age Female Male Total' column header found");
    return table;
}

inline RawRateTable parse_rate_file(std::istream& in, const std::string& country, const std::string& source = "<stream>") {
    return parse_hmd_table(in, country, TableKind::rates, source);
}

inline RawRateTable parse_exposure_file(std::istream& in, const std::string& country,
                                        const std::string& source = "<stream>") {
    return parse_hmd_table(in, country, TableKind::exposures, source);
}

inline RawRateTable parse_deaths_file(std::istream& in, const std::string& country, const std::string& source = "<stream>") {
    return parse_hmd_table(in, country, TableKind::deaths, source);
}

/// Write a table in HMD 1x1 layout (two header lines, then the column header).
inline void write_hmd_table(std::ostream& out, const RawRateTable& t) {
    out << t.country << ", " << to_string(t.kind) << " (period 1x1)\n\n";
    out << "  Year          Age             Female            Male           Total\n";
    auto cell = [&](const std::optional<double>& v) {
        std::ostringstream s;
        if (v) s << to_text(*v);
        else s << ".";
        return s.str();
    };
    for (const auto& r : t.rows) {
        out << "  " << r.year << "  " << r.age << (r.open_age ? "+" : "") << "  " << cell(r.female) << "  "
            << cell(r.male) << "  " << cell(r.total) << "\n";
    }
}

// ---------------------------------------------------------------------------
// Population selection

struct SelectionRules {
    int cutoff_year = 1999;
    int min_years = 10;
    int first_year = 1950;
    int max_age = 99;
};

/// (country, gender) pairs with at least `min_years` calendar years of data in
/// [first_year, cutoff_year]. Genders are judged independently.
inline std::vector<PopulationId> select_populations(const std::map<std::string, RawRateTable>& tables,
                                                    const SelectionRules& rules = {}) {
    if (tables.empty()) throw DomainError("select_populations: no tables supplied");
    if (rules.cutoff_year <= 0 || rules.min_years <= 0)
        throw DomainError("select_populations: cutoff_year and min_years must be positive");
    std::vector<PopulationId> out;
    for (const auto& [country, table] : tables) {
        for (Gender g : {Gender::female, Gender::male}) {
            std::set<int> years;
            for (const auto& r : table.rows) {
                if (r.year < rules.first_year || r.year > rules.cutoff_year) continue;
                if (r.age > rules.max_age) continue;
                if (r.value(g)) years.insert(r.year);
            }
            if (static_cast<int>(years.size()) >= rules.min_years) out.push_back({country, g});
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Surfaces

/// Row-major boolean grid matching a Matrix layout.
struct MaskMatrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<std::uint8_t> data;

    MaskMatrix() = default;
    MaskMatrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0) {}

    bool operator()(std::size_t r, std::size_t c) const { return data[r * cols + c] != 0; }
    void set(std::size_t r, std::size_t c, bool v) { data[r * cols + c] = v ? 1 : 0; }
    std::size_t count() const { return static_cast<std::size_t>(std::count(data.begin(), data.end(), 1)); }

    friend bool operator==(const MaskMatrix&, const MaskMatrix&) = default;
};

/// One population's age x year data. Missing or zero rates are NaN in
/// `log_rates` until imputation.
struct MortalitySurface {
    PopulationId id;
    std::vector<int> ages;
    std::vector<int> years;
    Matrix log_rates;
    std::optional<Matrix> deaths;
    std::optional<Matrix> exposures;
    MaskMatrix imputed;

    std::size_t year_index(int year) const {
        auto it = std::lower_bound(years.begin(), years.end(), year);
        if (it == years.end() || *it != year)
            throw DomainError(id.label() + ": year " + std::to_string(year) + " not present");
        return static_cast<std::size_t>(it - years.begin());
    }

    bool has_year(int year) const { return std::binary_search(years.begin(), years.end(), year); }

    bool has_counts() const { return deaths.has_value() && exposures.has_value(); }

    /// Columns of `m` for the requested years.
    Matrix columns(const Matrix& m, const std::vector<int>& ys) const {
        Matrix out(m.rows(), ys.size());
        for (std::size_t j = 0; j < ys.size(); ++j) {
            const std::size_t c = year_index(ys[j]);
            for (std::size_t r = 0; r < m.rows(); ++r) out(r, j) = m(r, c);
        }
        return out;
    }
};

using SurfaceMap = std::map<PopulationId, MortalitySurface>;

/// The files available for one country. Any subset may be present, but the
/// surface needs either a rate table or both deaths and exposures.
struct CountryData {
    std::string country;
    std::optional<RawRateTable> rates;
    std::optional<RawRateTable> deaths;
    std::optional<RawRateTable> exposures;

    /// Table used for population selection.
    RawRateTable selection_table() const;
};

/// Rates D/E derived from counts (missing where either is missing or E == 0).
inline RawRateTable derive_rate_table(const RawRateTable& deaths, const RawRateTable& exposures) {
    if (deaths.rows.size() != exposures.rows.size())
        throw DomainError(deaths.country + ": deaths and exposures grids differ");
    RawRateTable out{deaths.country, TableKind::rates, {}};
    out.rows.reserve(deaths.rows.size());
    auto ratio = [](const std::optional<double>& d, const std::optional<double>& e) -> std::optional<double> {
        if (!d || !e || *e <= 0.0) return std::nullopt;
        return *d / *e;
    };
    for (std::size_t i = 0; i < deaths.rows.size(); ++i) {
        const auto& d = deaths.rows[i];
        const auto& e = exposures.rows[i];
        if (d.year != e.year || d.age != e.age)
            throw DomainError(deaths.country + ": deaths and exposures grids differ at row " + std::to_string(i));
        RawRow r{d.year, d.age, d.open_age, ratio(d.female, e.female), ratio(d.male, e.male), ratio(d.total, e.total)};
        out.rows.push_back(r);
    }
    return out;
}

inline RawRateTable CountryData::selection_table() const {
    if (rates) return *rates;
    if (deaths && exposures) return derive_rate_table(*deaths, *exposures);
    throw DomainError(country + ": neither a rate table nor deaths+exposures available");
}

struct SurfaceOptions {
    int first_year = 1950;
    int last_year = std::numeric_limits<int>::max();
    int max_age = 99;
};

namespace detail {

using CellKey = std::pair<int, int>; // (year, age)

inline std::map<CellKey, const RawRow*> index_table(const RawRateTable& t, const SurfaceOptions& opt) {
    std::map<CellKey, const RawRow*> idx;
    for (const auto& r : t.rows) {
        if (r.year < opt.first_year || r.year > opt.last_year || r.age > opt.max_age || r.open_age) continue;
        if (!idx.emplace(CellKey{r.year, r.age}, &r).second)
            throw DomainError(t.country + " " + to_string(t.kind) + ": duplicate cell year " + std::to_string(r.year) +
                              " age " + std::to_string(r.age));
    }
    return idx;
}

inline bool same_grid(const std::map<CellKey, const RawRow*>& a, const std::map<CellKey, const RawRow*>& b) {
    if (a.size() != b.size()) return false;
    return std::equal(a.begin(), a.end(), b.begin(), [](const auto& x, const auto& y) { return x.first == y.first; });
}

} // namespace detail

/// Build per-population surfaces. Rates come from D/E when both counts are
/// available, otherwise from the rate table. Zero and missing rates become NaN
/// and are flagged for imputation. Grid mismatches between files are errors.
inline SurfaceMap build_surfaces(const std::map<std::string, CountryData>& countries,
                                 const std::vector<PopulationId>& populations, const SurfaceOptions& opt = {}) {
    SurfaceMap out;
    for (const auto& pop : populations) {
        auto cit = countries.find(pop.country);
        if (cit == countries.end()) throw DomainError("no data for country " + pop.country);
        const CountryData& cd = cit->second;

        using Index = std::map<detail::CellKey, const RawRow*>;
        std::optional<Index> rate_idx, death_idx, exposure_idx;
        if (cd.rates) rate_idx = detail::index_table(*cd.rates, opt);
        if (cd.deaths) death_idx = detail::index_table(*cd.deaths, opt);
        if (cd.exposures) exposure_idx = detail::index_table(*cd.exposures, opt);
        std::vector<std::pair<TableKind, const Index*>> present;
        if (rate_idx) present.emplace_back(TableKind::rates, &*rate_idx);
        if (death_idx) present.emplace_back(TableKind::deaths, &*death_idx);
        if (exposure_idx) present.emplace_back(TableKind::exposures, &*exposure_idx);
        if (present.empty()) throw DomainError(pop.country + ": no tables");
        for (std::size_t i = 1; i < present.size(); ++i)
            if (!detail::same_grid(*present[0].second, *present[i].second))
                throw DomainError(pop.country + ": year/age grid of " + to_string(present[i].first) +
                                  " file does not match " + to_string(present[0].first) + " file");
        const bool counts = death_idx && exposure_idx;
        if (!rate_idx && !counts) throw DomainError(pop.country + ": need a rate table or deaths and exposures");

        const Index& grid = *present[0].second;
        std::set<int> year_set;
        for (const auto& [key, row] : grid) year_set.insert(key.first);
        MortalitySurface s;
        s.id = pop;
        s.years.assign(year_set.begin(), year_set.end());
        for (int a = 0; a <= opt.max_age; ++a) s.ages.push_back(a);
        const std::size_t nx = s.ages.size(), nt = s.years.size();
        if (nt == 0) throw DomainError(pop.label() + ": no years in the selected window");
        s.log_rates = Matrix(nx, nt, std::numeric_limits<double>::quiet_NaN());
        s.imputed = MaskMatrix(nx, nt);
        if (counts) {
            s.deaths = Matrix(nx, nt, std::numeric_limits<double>::quiet_NaN());
            s.exposures = Matrix(nx, nt, std::numeric_limits<double>::quiet_NaN());
        }
        for (std::size_t j = 0; j < nt; ++j) {
            for (std::size_t i = 0; i < nx; ++i) {
                const int year = s.years[j], age = s.ages[i];
                if (!grid.count({year, age}))
                    throw DomainError(pop.country + ": missing row for year " + std::to_string(year) + " age " +
                                      std::to_string(age));
                std::optional<double> rate;
                if (counts) {
                    const RawRow* d = death_idx->at({year, age});
                    const RawRow* e = exposure_idx->at({year, age});
                    const auto& dv = d->value(pop.gender);
                    const auto& ev = e->value(pop.gender);
                    if (dv) (*s.deaths)(i, j) = *dv;
                    if (ev) (*s.exposures)(i, j) = *ev;
                    if (dv && ev && *ev > 0.0) rate = *dv / *ev;
                }
                if (!rate && rate_idx) rate = rate_idx->at({year, age})->value(pop.gender);
                if (rate && *rate > 0.0) s.log_rates(i, j) = std::log(*rate);
                else s.imputed.set(i, j, true);
            }
        }
        out.emplace(pop, std::move(s));
    }
    return out;
}

/// Replace zero/missing rates by the mean raw rate at the same age, gender and
/// year over all other surfaces holding an observed value there.
inline SurfaceMap impute_missing(SurfaceMap surfaces) {
    if (surfaces.empty()) return surfaces;
    const auto& ages = surfaces.begin()->second.ages;
    for (const auto& [id, s] : surfaces)
        if (s.ages != ages) throw DomainError("impute_missing: surfaces have different age grids");

    struct Fill {
        PopulationId id;
        std::size_t i, j;
        double rate;
    };
    std::vector<Fill> fills;
    for (const auto& [id, s] : surfaces) {
        for (std::size_t j = 0; j < s.years.size(); ++j) {
            for (std::size_t i = 0; i < s.ages.size(); ++i) {
                if (std::isfinite(s.log_rates(i, j))) continue;
                double total = 0.0;
                int n = 0;
                for (const auto& [did, donor] : surfaces) {
                    if (did.gender != id.gender || !donor.has_year(s.years[j])) continue;
                    const std::size_t dj = donor.year_index(s.years[j]);
                    const double v = donor.log_rates(i, dj);
                    if (donor.imputed(i, dj) || !std::isfinite(v)) continue;
                    total += std::exp(v);
                    ++n;
                }
                if (n == 0)
                    throw DomainError("impute_missing: no donor for age " + std::to_string(s.ages[i]) + ", gender " +
                                      to_string(id.gender) + ", year " + std::to_string(s.years[j]));
                fills.push_back({id, i, j, total / n});
            }
        }
    }
    for (const auto& f : fills) {
        auto& s = surfaces.at(f.id);
        s.log_rates(f.i, f.j) = std::log(f.rate);
        s.imputed.set(f.i, f.j, true);
    }
    return surfaces;
}

// ---------------------------------------------------------------------------
// Panel

struct Scaling {
    double y_min = 0.0;
    double y_max = 1.0;

    double range() const { return y_max - y_min; }
    double scale(double y) const { return (y - y_min) / (y_max - y_min); }
    double unscale(double s) const { return y_min + s * (y_max - y_min); }
};

/// Multi-population training/testing panel on a shared age grid.
struct PanelDataset {
    SurfaceMap surfaces;
    std::vector<int> ages;
    int train_max_year = 0;
    std::vector<int> train_years; ///< union over populations
    std::vector<int> test_years;  ///< union over populations
    std::optional<Scaling> scaling;

    std::vector<int> training_years(const PopulationId& id) const {
        std::vector<int> out;
        for (int y : surfaces.at(id).years)
            if (y <= train_max_year) out.push_back(y);
        return out;
    }

    std::vector<int> testing_years(const PopulationId& id) const {
        std::vector<int> out;
        for (int y : surfaces.at(id).years)
            if (y > train_max_year) out.push_back(y);
        return out;
    }

    std::vector<PopulationId> populations() const {
        std::vector<PopulationId> out;
        for (const auto& [id, s] : surfaces) out.push_back(id);
        return out;
    }

    /// Sorted distinct countries; the index in this list is the country label index.
    std::vector<std::string> countries() const {
        std::set<std::string> cs;
        for (const auto& [id, s] : surfaces) cs.insert(id.country);
        return {cs.begin(), cs.end()};
    }

    std::size_t training_example_count() const {
        std::size_t n = 0;
        for (const auto& [id, s] : surfaces) n += training_years(id).size();
        return n;
    }
};

/// Restrict to ages [0, n_ages) and split years at `train_max_year`.
inline PanelDataset assemble_panel(const SurfaceMap& surfaces, int train_max_year, int n_ages = 100) {
    if (surfaces.empty()) throw DomainError("assemble_panel: no surfaces");
    if (n_ages <= 0) throw DomainError("assemble_panel: n_ages must be positive");
    PanelDataset p;
    p.train_max_year = train_max_year;
    for (int a = 0; a < n_ages; ++a) p.ages.push_back(a);
    std::set<int> train, test;
    for (const auto& [id, s] : surfaces) {
        MortalitySurface t;
        t.id = id;
        t.ages = p.ages;
        t.years = s.years;
        std::vector<std::size_t> rows;
        for (int a : p.ages) {
            auto it = std::find(s.ages.begin(), s.ages.end(), a);
            if (it == s.ages.end()) throw DomainError(id.label() + ": age " + std::to_string(a) + " missing");
            rows.push_back(static_cast<std::size_t>(it - s.ages.begin()));
        }
        auto pick = [&](const Matrix& m) {
            Matrix out(rows.size(), m.cols());
            for (std::size_t i = 0; i < rows.size(); ++i)
                for (std::size_t j = 0; j < m.cols(); ++j) out(i, j) = m(rows[i], j);
            return out;
        };
        t.log_rates = pick(s.log_rates);
        if (!t.log_rates.all_finite())
            throw DomainError(id.label() + ": surface contains missing log-rates; impute before assembling");
        if (s.deaths) t.deaths = pick(*s.deaths);
        if (s.exposures) t.exposures = pick(*s.exposures);
        t.imputed = MaskMatrix(rows.size(), s.years.size());
        for (std::size_t i = 0; i < rows.size(); ++i)
            for (std::size_t j = 0; j < s.years.size(); ++j) t.imputed.set(i, j, s.imputed(rows[i], j));
        bool any_train = false;
        for (int y : s.years) {
            if (y <= train_max_year) {
                train.insert(y);
                any_train = true;
            } else {
                test.insert(y);
            }
        }
        if (!any_train) throw DomainError(id.label() + ": no training years up to " + std::to_string(train_max_year));
        p.surfaces.emplace(id, std::move(t));
    }
    p.train_years.assign(train.begin(), train.end());
    p.test_years.assign(test.begin(), test.end());
    return p;
}

/// Fit MinMax scaling on training cells only.
inline PanelDataset minmax_fit_transform(PanelDataset panel) {
    double lo = std::numeric_limits<double>::infinity();
    double hi = -std::numeric_limits<double>::infinity();
    for (const auto& [id, s] : panel.surfaces) {
        for (std::size_t j = 0; j < s.years.size(); ++j) {
            if (s.years[j] > panel.train_max_year) continue;
            for (std::size_t i = 0; i < s.ages.size(); ++i) {
                const double v = s.log_rates(i, j);
                if (!std::isfinite(v)) throw DomainError("minmax_fit_transform: non-finite training log-rate");
                lo = std::min(lo, v);
                hi = std::max(hi, v);
            }
        }
    }
    if (!(hi > lo)) throw DomainError("minmax_fit_transform: degenerate panel (y_max == y_min)");
    panel.scaling = Scaling{lo, hi};
    return panel;
}

struct PanelCell {
    PopulationId id;
    int age;
    int year;
    double log_rate;
    bool imputed;
};

/// Every (population, age, year) cell in population/year/age order.
inline std::vector<PanelCell> flatten(const PanelDataset& panel) {
    std::vector<PanelCell> out;
    for (const auto& [id, s] : panel.surfaces)
        for (std::size_t j = 0; j < s.years.size(); ++j)
            for (std::size_t i = 0; i < s.ages.size(); ++i)
                out.push_back({id, s.ages[i], s.years[j], s.log_rates(i, j), s.imputed(i, j)});
    return out;
}

/// Keep only the listed countries (or drop them when `exclude` is set).
inline PanelDataset filter_countries(const PanelDataset& panel, const std::set<std::string>& countries, bool exclude) {
    SurfaceMap kept;
    for (const auto& [id, s] : panel.surfaces)
        if (countries.count(id.country) != 0 ? !exclude : exclude) kept.emplace(id, s);
    if (kept.empty()) throw DomainError("filter_countries: no populations left");
    PanelDataset out = assemble_panel(kept, panel.train_max_year, static_cast<int>(panel.ages.size()));
    if (panel.scaling) out = minmax_fit_transform(std::move(out));
    return out;
}

} // namespace lcnet
