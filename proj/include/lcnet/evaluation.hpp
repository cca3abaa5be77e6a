#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "lcnet/data.hpp"
#include "lcnet/error.hpp"
#include "lcnet/format.hpp"
#include "lcnet/lc_svd.hpp"
#include "lcnet/linalg.hpp"

namespace lcnet {

/// Sum of squared errors and cell count, on the rate and log-rate scales.
struct ErrorSum {
    double sse = 0.0;
    double log_sse = 0.0;
    std::size_t cells = 0;

    double mse() const { return cells == 0 ? 0.0 : sse / static_cast<double>(cells); }
    double log_mse() const { return cells == 0 ? 0.0 : log_sse / static_cast<double>(cells); }

    ErrorSum& operator+=(const ErrorSum& o) {
        sse += o.sse;
        log_sse += o.log_sse;
        cells += o.cells;
        return *this;
    }
};

/// Out-of-sample errors of one model run. MSEs are on rates m unless
/// the name says log.
struct EvaluationReport {
    std::string run_id;
    std::string model;
    std::vector<int> ages;
    ErrorSum total;
    std::map<PopulationId, ErrorSum> per_population;
    std::map<int, ErrorSum> per_age;
    std::map<PopulationId, std::vector<int>> years; ///< scored years per population

    double global_mse() const { return total.mse(); }
    double global_log_mse() const { return total.log_mse(); }
    double population_mse(const PopulationId& id) const { return per_population.at(id).mse(); }
    double age_mse(int age) const { return per_age.at(age).mse(); }

    /// Pooled MSE over a subset of populations.
    double subset_mse(const std::set<PopulationId>& ids) const {
        ErrorSum s;
        for (const auto& id : ids) {
            auto it = per_population.find(id);
            if (it == per_population.end()) throw DomainError("subset_mse: population " + id.label() + " not scored");
            s += it->second;
        }
        return s.mse();
    }

    bool same_grid(const EvaluationReport& o) const { return ages == o.ages && years == o.years; }
};

/// Score predicted log-rates (ages x test years, per population) against the
/// panel's test cells. Squared errors are taken on rates exp(log m).
inline EvaluationReport score(const std::map<PopulationId, Matrix>& predictions, const PanelDataset& actuals,
                              std::string run_id = {}, std::string model = {}) {
    EvaluationReport r;
    r.run_id = std::move(run_id);
    r.model = std::move(model);
    r.ages = actuals.ages;
    if (predictions.size() != actuals.surfaces.size())
        throw DimensionError("score: predictions cover " + std::to_string(predictions.size()) + " populations, panel has " +
                             std::to_string(actuals.surfaces.size()));
    for (int age : r.ages) r.per_age[age] = {};
    for (const auto& [id, s] : actuals.surfaces) {
        auto it = predictions.find(id);
        if (it == predictions.end()) throw DimensionError("score: no prediction for " + id.label());
        const Matrix& pred = it->second;
        const auto years = actuals.testing_years(id);
        if (pred.rows() != s.ages.size() || pred.cols() != years.size())
            throw DimensionError("score: prediction grid for " + id.label() + " is " + std::to_string(pred.rows()) + "x" +
                                 std::to_string(pred.cols()) + ", expected " + std::to_string(s.ages.size()) + "x" +
                                 std::to_string(years.size()));
        ErrorSum& pop = r.per_population[id];
        for (std::size_t j = 0; j < years.size(); ++j) {
            const std::size_t col = s.year_index(years[j]);
            for (std::size_t x = 0; x < s.ages.size(); ++x) {
                const double y = s.log_rates(x, col), yhat = pred(x, j);
                if (!std::isfinite(y) || !std::isfinite(yhat))
                    throw NumericError("score: non-finite value for " + id.label() + " age " + std::to_string(s.ages[x]) +
                                       " year " + std::to_string(years[j]));
                const double d = std::exp(yhat) - std::exp(y), dl = yhat - y;
                const ErrorSum cell{d * d, dl * dl, 1};
                pop += cell;
                r.per_age[s.ages[x]] += cell;
                r.total += cell;
            }
        }
        r.years[id] = years;
    }
    return r;
}

struct BeatCount {
    std::size_t populations_won = 0;
    std::size_t populations_total = 0;
    std::size_t ages_won = 0;
    std::size_t ages_total = 0;
};

/// Populations and ages where `a` has strictly lower MSE than `b`.
inline BeatCount beat_counts(const EvaluationReport& a, const EvaluationReport& b) {
    if (!a.same_grid(b)) throw DimensionError("beat_counts: reports are on different grids");
    BeatCount c;
    for (const auto& [id, e] : a.per_population) {
        ++c.populations_total;
        if (e.mse() < b.per_population.at(id).mse()) ++c.populations_won;
    }
    for (const auto& [age, e] : a.per_age) {
        ++c.ages_total;
        if (e.mse() < b.per_age.at(age).mse()) ++c.ages_won;
    }
    return c;
}

/// Country -> size used to order populations (largest first).
using PopulationSizes = std::map<std::string, double>;

/// CSV with a header and rows "country,size".
inline PopulationSizes read_population_sizes(std::istream& in, const std::string& source = "<sizes>") {
    PopulationSizes out;
    std::string line;
    std::size_t n = 0;
    while (std::getline(in, line)) {
        ++n;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        const auto comma = line.find(',');
        if (comma == std::string::npos) throw ParseError(source, n, "expected 'country,size'");
        const std::string country = line.substr(0, comma), value = line.substr(comma + 1);
        if (n == 1 && country == "country") continue;
        try {
            std::size_t used = 0;
            const double v = std::stod(value, &used);
            if (used != value.size() || !(v >= 0.0)) throw std::invalid_argument("size");
            out[country] = v;
        } catch (const std::exception&) {
            throw ParseError(source, n, "invalid size '" + value + "'");
        }
    }
    return out;
}

/// Countries sorted by size descending, ties broken by name.
inline std::vector<std::string> order_by_size(const std::vector<std::string>& countries, const PopulationSizes& sizes) {
    std::vector<std::string> out = countries;
    for (const auto& c : out)
        if (!sizes.count(c)) throw DomainError("no population size for country " + c);
    std::stable_sort(out.begin(), out.end(), [&](const std::string& x, const std::string& y) {
        const double sx = sizes.at(x), sy = sizes.at(y);
        return sx != sy ? sx > sy : x < y;
    });
    return out;
}

struct ComparisonRow {
    PopulationId id;
    std::vector<double> mse; ///< one per report
    std::size_t winner = 0;  ///< index of the lowest MSE (first on ties)
    bool tie = false;
};

struct SplitRow {
    std::string name; ///< "HP" or "LP"
    std::vector<std::string> countries;
    std::vector<double> mse; ///< pooled MSE per report
};

struct ComparisonTable {
    std::vector<std::string> models;
    std::vector<double> global_mse;
    std::vector<double> global_log_mse;
    std::vector<BeatCount> vs_baseline; ///< each report against report 0
    std::vector<ComparisonRow> rows;    ///< population order (size-ordered when sizes are given)
    std::vector<int> ages;
    std::vector<std::vector<double>> per_age; ///< [report][age index]
    std::vector<SplitRow> split;              ///< empty without sizes
};

/// Side-by-side comparison of runs on a shared grid; report 0 is the baseline.
/// With sizes, rows follow country size and the first ceil(n/2) countries
/// form the high-population group.
inline ComparisonTable compare(const std::vector<EvaluationReport>& reports,
                               const std::optional<PopulationSizes>& sizes = std::nullopt,
                               std::optional<std::size_t> hp_countries = std::nullopt) {
    if (reports.empty()) throw DomainError("compare: no reports");
    for (const auto& r : reports)
        if (!r.same_grid(reports.front())) throw DimensionError("compare: reports are on different grids");
    ComparisonTable t;
    t.ages = reports.front().ages;
    for (const auto& r : reports) {
        t.models.push_back(r.model.empty() ? r.run_id : r.model);
        t.global_mse.push_back(r.global_mse());
        t.global_log_mse.push_back(r.global_log_mse());
        t.vs_baseline.push_back(beat_counts(r, reports.front()));
        std::vector<double> curve;
        for (int age : t.ages) curve.push_back(r.age_mse(age));
        t.per_age.push_back(std::move(curve));
    }

    std::vector<PopulationId> order;
    std::set<std::string> country_set;
    for (const auto& [id, e] : reports.front().per_population) country_set.insert(id.country);
    std::vector<std::string> countries(country_set.begin(), country_set.end());
    if (sizes) countries = order_by_size(countries, *sizes);
    for (const auto& c : countries)
        for (Gender g : {Gender::male, Gender::female}) {
            PopulationId id{c, g};
            if (reports.front().per_population.count(id)) order.push_back(id);
        }
    for (const auto& id : order) {
        ComparisonRow row{id, {}, 0, false};
        for (const auto& r : reports) row.mse.push_back(r.population_mse(id));
        for (std::size_t i = 1; i < row.mse.size(); ++i)
            if (row.mse[i] < row.mse[row.winner]) row.winner = i;
        for (std::size_t i = 0; i < row.mse.size(); ++i)
            if (i != row.winner && row.mse[i] == row.mse[row.winner]) row.tie = true;
        t.rows.push_back(std::move(row));
    }

    if (sizes) {
        const std::size_t n_hp = std::min(countries.size(), hp_countries.value_or((countries.size() + 1) / 2));
        SplitRow lp{"LP", {countries.begin() + static_cast<std::ptrdiff_t>(n_hp), countries.end()}, {}};
        SplitRow hp{"HP", {countries.begin(), countries.begin() + static_cast<std::ptrdiff_t>(n_hp)}, {}};
        for (SplitRow* s : {&lp, &hp}) {
            std::set<PopulationId> ids;
            for (const auto& id : order)
                if (std::find(s->countries.begin(), s->countries.end(), id.country) != s->countries.end()) ids.insert(id);
            for (const auto& r : reports) s->mse.push_back(ids.empty() ? 0.0 : r.subset_mse(ids));
        }
        t.split = {lp, hp};
    }
    return t;
}

// ---------------------------------------------------------------------------
// Run-to-run variability

/// Type-7 sample quantile of already sorted data.
inline double quantile_sorted(const std::vector<double>& v, double q) {
    if (v.empty()) throw DomainError("quantile: empty sample");
    const double h = (static_cast<double>(v.size()) - 1.0) * q;
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const std::size_t hi = std::min(lo + 1, v.size() - 1);
    return v[lo] + (h - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

struct BoxStats {
    double min = 0.0, q1 = 0.0, median = 0.0, q3 = 0.0, max = 0.0;
    std::size_t n = 0;
};

inline BoxStats box_stats(std::vector<double> v) {
    if (v.empty()) throw DomainError("box_stats: empty sample");
    std::sort(v.begin(), v.end());
    return {v.front(), quantile_sorted(v, 0.25), quantile_sorted(v, 0.5), quantile_sorted(v, 0.75), v.back(), v.size()};
}

/// Pointwise min/max across runs of one population's parameters.
struct ParameterEnvelope {
    Vector a_min, a_max, b_min, b_max, k_min, k_max;
};

struct VariabilitySummary {
    std::string model;
    BoxStats female, male, total; ///< of per-run MSEs
    std::map<PopulationId, ParameterEnvelope> envelopes;
};

/// Pooled MSE over the populations of one gender.
inline double gender_mse(const EvaluationReport& r, Gender g) {
    ErrorSum s;
    for (const auto& [id, e] : r.per_population)
        if (id.gender == g) s += e;
    return s.mse();
}

/// Boxplot statistics and parameter envelopes over repeated fits of one
/// model. `params[i]` and `reports[i]` belong to run i.
inline VariabilitySummary variability_summary(const std::vector<std::map<PopulationId, LcParameters>>& params,
                                              const std::vector<EvaluationReport>& reports, std::string model = {}) {
    if (params.size() < 2) throw DomainError("variability_summary: need at least two runs");
    if (params.size() != reports.size()) throw DimensionError("variability_summary: runs and reports differ in number");
    for (const auto& r : reports)
        if (!r.same_grid(reports.front())) throw DimensionError("variability_summary: reports on different grids");
    VariabilitySummary v;
    v.model = model.empty() ? reports.front().model : std::move(model);
    std::vector<double> f, m, t;
    for (const auto& r : reports) {
        f.push_back(gender_mse(r, Gender::female));
        m.push_back(gender_mse(r, Gender::male));
        t.push_back(r.global_mse());
    }
    v.female = box_stats(f);
    v.male = box_stats(m);
    v.total = box_stats(t);

    for (const auto& [id, p0] : params.front()) {
        ParameterEnvelope e{p0.a, p0.a, p0.b, p0.b, p0.k, p0.k};
        for (std::size_t i = 1; i < params.size(); ++i) {
            auto it = params[i].find(id);
            if (it == params[i].end()) throw DomainError("variability_summary: run lacks population " + id.label());
            const LcParameters& p = it->second;
            if (p.a.size() != p0.a.size() || p.k.size() != p0.k.size())
                throw DimensionError("variability_summary: parameter grids differ for " + id.label());
            auto widen = [](Vector& lo, Vector& hi, const Vector& x) {
                for (std::size_t j = 0; j < x.size(); ++j) {
                    lo[j] = std::min(lo[j], x[j]);
                    hi[j] = std::max(hi[j], x[j]);
                }
            };
            widen(e.a_min, e.a_max, p.a);
            widen(e.b_min, e.b_max, p.b);
            widen(e.k_min, e.k_max, p.k);
        }
        v.envelopes.emplace(id, std::move(e));
    }
    return v;
}

// ---------------------------------------------------------------------------
// Output

namespace detail {
inline std::string fixed(double v, int digits = 2) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", digits, v);
    return buf;
}
} // namespace detail

inline void write_report_csv(std::ostream& out, const EvaluationReport& r) {
    out << "run,model,scope,key,mse,log_mse,cells\n";
    out << r.run_id << ',' << r.model << ",global,all," << num(r.total.mse()) << ',' << num(r.total.log_mse()) << ','
        << r.total.cells << '\n';
    for (const auto& [id, e] : r.per_population)
        out << r.run_id << ',' << r.model << ",population," << id.label() << ',' << num(e.mse()) << ',' << num(e.log_mse()) << ','
            << e.cells << '\n';
    for (const auto& [age, e] : r.per_age)
        out << r.run_id << ',' << r.model << ",age," << age << ',' << num(e.mse()) << ',' << num(e.log_mse()) << ',' << e.cells
            << '\n';
}

/// Global MSE and beat counts against the baseline, one row per model.
inline void write_summary_csv(std::ostream& out, const ComparisonTable& t) {
    out << "model,mse,log_mse,populations_won,populations_total,ages_won,ages_total\n";
    for (std::size_t i = 0; i < t.models.size(); ++i)
        out << t.models[i] << ',' << num(t.global_mse[i]) << ',' << num(t.global_log_mse[i]) << ','
            << t.vs_baseline[i].populations_won << ',' << t.vs_baseline[i].populations_total << ','
            << t.vs_baseline[i].ages_won << ',' << t.vs_baseline[i].ages_total << '\n';
}

/// Per-population MSEs with the winner flagged.
inline void write_population_csv(std::ostream& out, const ComparisonTable& t) {
    out << "rank,country,gender";
    for (const auto& m : t.models) out << ',' << m;
    out << ",winner\n";
    std::map<std::string, std::size_t> rank;
    for (const auto& row : t.rows) rank.emplace(row.id.country, rank.size() + 1);
    for (const auto& row : t.rows) {
        out << rank.at(row.id.country) << ',' << row.id.country << ',' << to_string(row.id.gender);
        for (double v : row.mse) out << ',' << num(v);
        out << ',' << (row.tie ? std::string("tie") : t.models[row.winner]) << '\n';
    }
}

inline void write_age_csv(std::ostream& out, const ComparisonTable& t) {
    out << "age";
    for (const auto& m : t.models) out << ',' << m;
    out << '\n';
    for (std::size_t x = 0; x < t.ages.size(); ++x) {
        out << t.ages[x];
        for (const auto& curve : t.per_age) out << ',' << num(curve[x]);
        out << '\n';
    }
}

inline void write_split_csv(std::ostream& out, const ComparisonTable& t) {
    out << "group,countries";
    for (const auto& m : t.models) out << ',' << m;
    out << '\n';
    for (const auto& s : t.split) {
        out << s.name << ',' << s.countries.size();
        for (double v : s.mse) out << ',' << num(v);
        out << '\n';
    }
}

/// Human-readable summary with MSEs in units of 1e-4.
inline void print_comparison(std::ostream& out, const ComparisonTable& t) {
    std::size_t w = 8;
    for (const auto& m : t.models) w = std::max(w, m.size());
    auto pad = [](std::string s, std::size_t n) {
        if (s.size() < n) s.append(n - s.size(), ' ');
        return s;
    };
    out << pad("model", w) << "  MSE(1e-4)  pops won  ages won\n";
    for (std::size_t i = 0; i < t.models.size(); ++i) {
        const auto& b = t.vs_baseline[i];
        out << pad(t.models[i], w) << "  " << pad(detail::fixed(t.global_mse[i] * 1e4), 9) << "  "
            << pad(std::to_string(b.populations_won) + "/" + std::to_string(b.populations_total), 8) << "  "
            << b.ages_won << "/" << b.ages_total << '\n';
    }
    for (const auto& s : t.split) {
        out << s.name << " (" << s.countries.size() << " countries):";
        for (std::size_t i = 0; i < t.models.size(); ++i) out << ' ' << t.models[i] << '=' << detail::fixed(s.mse[i] * 1e4);
        out << '\n';
    }
}

} // namespace lcnet
