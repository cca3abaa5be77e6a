#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <openssl/evp.h>

#include "lcnet/data.hpp"
#include "lcnet/evaluation.hpp"
#include "lcnet/forecast.hpp"
#include "lcnet/lc_poisson.hpp"
#include "lcnet/lc_svd.hpp"
#include "lcnet/neural_lc.hpp"
#include "lcnet/serialize.hpp"

namespace lcnet {

// ---------------------------------------------------------------------------
// Digests

inline std::string sha256_hex(const std::string& bytes) {
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr) != 1)
        throw Error("SHA-256 computation failed");
    static constexpr char hex[] = "0123456789abcdef";
    std::string out;
    for (unsigned int i = 0; i < len; ++i) {
        out.push_back(hex[md[i] >> 4]);
        out.push_back(hex[md[i] & 0xF]);
    }
    return out;
}

inline std::string sha256_file(const std::filesystem::path& p) { return sha256_hex(io::read_text(p)); }

// ---------------------------------------------------------------------------
// Model names

inline const std::vector<std::string>& known_models() {
    static const std::vector<std::string> m = {"lc-svd",          "lc-poisson",      "nlc-fcn-mse",
                                               "nlc-lcn-mse",     "nlc-cnn-mse",     "nlc-fcn-poisson",
                                               "nlc-lcn-poisson", "nlc-cnn-poisson"};
    return m;
}

inline bool is_neural(const std::string& model) { return model.rfind("nlc-", 0) == 0; }

inline bool uses_counts(const std::string& model) { return model == "lc-poisson" || model.ends_with("-poisson"); }

/// Neural config for a model name such as "nlc-cnn-poisson".
inline NeuralLcConfig config_for(const std::string& model, NeuralLcConfig base) {
    if (!is_neural(model)) throw DomainError(model + " is not a neural model");
    const auto first = model.find('-', 4);
    if (first == std::string::npos) throw DomainError("unknown model '" + model + "'");
    base.variant = parse_variant(model.substr(4, first - 4));
    base.loss = parse_loss(model.substr(first + 1));
    return base;
}

inline void check_model_name(const std::string& m) {
    const auto& k = known_models();
    if (std::find(k.begin(), k.end(), m) == k.end()) throw DomainError("unknown model '" + m + "'");
}

// ---------------------------------------------------------------------------
// Fitting and forecasting helpers shared by the CLI and the runner

/// Classic per-population fits on the training years.
inline io::ClassicModel fit_classic(const PanelDataset& panel, const std::string& model) {
    io::ClassicModel out;
    out.model = model;
    out.train_max_year = panel.train_max_year;
    for (const auto& [id, s] : panel.surfaces) {
        const auto years = panel.training_years(id);
        if (model == "lc-svd") {
            LcParameters p = fit_lc_svd(s, years);
            const double sse = reconstruction_sse(p, s.columns(s.log_rates, years));
            out.parameters.emplace(id, std::move(p));
            out.diagnostics[id] = {sse, 0, true};
        } else if (model == "lc-poisson") {
            PoissonFit f = fit_lc_poisson(s, years);
            out.diagnostics[id] = {f.state.deviance, f.state.iteration, f.state.converged};
            out.parameters.emplace(id, std::move(f.params));
        } else {
            throw DomainError("fit_classic: unknown model '" + model + "'");
        }
    }
    return out;
}

/// Point forecasts of log-rates over each population's test years.
inline std::map<PopulationId, Matrix> forecast_panel(const std::map<PopulationId, LcParameters>& params,
                                                     const PanelDataset& panel) {
    std::map<PopulationId, Matrix> out;
    for (const auto& [id, s] : panel.surfaces) {
        auto it = params.find(id);
        if (it == params.end()) throw DomainError("forecast: no parameters for " + id.label());
        out.emplace(id, forecast_log_rates(it->second, panel.testing_years(id)));
    }
    return out;
}

/// Drop years after `last_year` from every surface.
inline PanelDataset truncate_years(const PanelDataset& panel, int last_year) {
    SurfaceMap kept;
    for (const auto& [id, s] : panel.surfaces) {
        std::vector<int> years;
        for (int y : s.years)
            if (y <= last_year) years.push_back(y);
        MortalitySurface t = s;
        t.years = years;
        t.log_rates = s.columns(s.log_rates, years);
        if (s.deaths) t.deaths = s.columns(*s.deaths, years);
        if (s.exposures) t.exposures = s.columns(*s.exposures, years);
        t.imputed = MaskMatrix(s.ages.size(), years.size());
        for (std::size_t j = 0; j < years.size(); ++j)
            for (std::size_t i = 0; i < s.ages.size(); ++i) t.imputed.set(i, j, s.imputed(i, s.year_index(years[j])));
        kept.emplace(id, std::move(t));
    }
    PanelDataset out = assemble_panel(kept, panel.train_max_year, static_cast<int>(panel.ages.size()));
    out.scaling = panel.scaling;
    return out;
}

/// Keep only the listed populations.
inline PanelDataset restrict_populations(const PanelDataset& panel, const std::set<PopulationId>& keep) {
    SurfaceMap kept;
    for (const auto& [id, s] : panel.surfaces)
        if (keep.count(id)) kept.emplace(id, s);
    if (kept.empty()) throw DomainError("restrict_populations: no populations left");
    PanelDataset out = assemble_panel(kept, panel.train_max_year, static_cast<int>(panel.ages.size()));
    out.scaling = panel.scaling;
    return out;
}

/// Variability over repeated trainings; the runs must differ only in their seed.
inline VariabilitySummary variability_summary(const std::vector<const TrainingRun*>& runs,
                                              const std::vector<EvaluationReport>& reports) {
    if (runs.empty()) throw DomainError("variability_summary: no runs");
    std::vector<std::map<PopulationId, LcParameters>> params;
    for (const auto* r : runs) {
        if (!r->config.same_except_seed(runs.front()->config))
            throw DomainError("variability_summary: runs differ in more than the seed");
        params.push_back(r->parameters);
    }
    return variability_summary(params, reports, runs.front()->model_name());
}

// ---------------------------------------------------------------------------
// Experiment runner

struct ExperimentConfig {
    std::vector<std::string> models;
    std::vector<std::uint64_t> seeds = {1};
    NeuralLcConfig neural;              ///< variant/loss/seed are set per run
    std::set<std::string> count_exclude; ///< countries left out of count-based (Poisson) models
    int horizon = 0;                     ///< 0 scores every test year
    std::optional<PopulationSizes> sizes;
    std::filesystem::path output;
    int workers = 1;
};

/// One (model, seed) unit of work.
struct RunKey {
    std::string model;
    std::optional<std::uint64_t> seed;

    std::string id() const { return seed ? model + "-s" + std::to_string(*seed) : model; }
};

inline std::vector<RunKey> plan_runs(const ExperimentConfig& cfg) {
    if (cfg.models.empty()) throw DomainError("experiment: at least one model is required");
    std::vector<RunKey> out;
    std::set<std::string> seen;
    for (const auto& m : cfg.models) {
        check_model_name(m);
        if (!seen.insert(m).second) throw DomainError("experiment: model '" + m + "' listed twice");
        if (is_neural(m)) {
            if (cfg.seeds.empty()) throw DomainError("experiment: neural models need at least one seed");
            std::set<std::uint64_t> s(cfg.seeds.begin(), cfg.seeds.end());
            if (s.size() != cfg.seeds.size()) throw DomainError("experiment: duplicate seeds");
            for (auto seed : cfg.seeds) out.push_back({m, seed});
        } else {
            out.push_back({m, std::nullopt});
        }
    }
    return out;
}

struct ExperimentResult {
    std::vector<std::string> completed; ///< run ids fitted in this invocation
    std::vector<std::string> skipped;   ///< run ids found on disk and reused
    std::map<std::string, std::string> failures;
    std::vector<std::string> files; ///< bundle files, relative to the output directory
    bool complete() const { return failures.empty(); }
};

/// The settings that determine run artifacts; stored in the bundle.
inline io::json experiment_config_json(const ExperimentConfig& cfg, const PanelDataset& panel) {
    io::json j{{"format", "lcnet-experiment"}, {"version", io::kFormatVersion}};
    j["models"] = cfg.models;
    j["seeds"] = cfg.seeds;
    io::json neural = io::config_json(cfg.neural);
    neural.erase("variant");
    neural.erase("loss");
    neural.erase("seed");
    j["neural"] = std::move(neural);
    j["count_exclude"] = std::vector<std::string>(cfg.count_exclude.begin(), cfg.count_exclude.end());
    j["horizon"] = cfg.horizon;
    j["train_max_year"] = panel.train_max_year;
    j["populations"] = panel.surfaces.size();
    j["panel_sha256"] = sha256_hex(io::panel_json(panel).dump());
    return j;
}

namespace detail {

inline std::string csv_text(const std::function<void(std::ostream&)>& fn) {
    std::ostringstream out;
    fn(out);
    return out.str();
}

struct LoadedRun {
    RunKey key;
    std::map<PopulationId, LcParameters> params;
    std::optional<TrainingRun> neural;
};

inline std::map<PopulationId, LcParameters> subset(const std::map<PopulationId, LcParameters>& m,
                                                   const PanelDataset& panel) {
    std::map<PopulationId, LcParameters> out;
    for (const auto& [id, s] : panel.surfaces) out.emplace(id, m.at(id));
    return out;
}

} // namespace detail

/// Run every (model, seed) pair, score them on the test years, and write the
/// report bundle. Runs whose artifact already exists are loaded, not redone.
inline ExperimentResult run_experiment(const PanelDataset& panel_in, const ExperimentConfig& cfg,
                                       std::ostream* log = nullptr) {
    namespace fs = std::filesystem;
    const auto plan = plan_runs(cfg);
    if (cfg.output.empty()) throw DomainError("experiment: output directory required");
    if (cfg.workers < 1) throw DomainError("experiment: workers must be at least 1");

    PanelDataset panel = panel_in;
    if (cfg.horizon > 0) panel = truncate_years(panel, panel.train_max_year + cfg.horizon);
    panel.scaling.reset();
    const bool need_counts_panel =
        std::any_of(cfg.models.begin(), cfg.models.end(), [](const std::string& m) { return uses_counts(m); });
    PanelDataset count_panel = panel;
    if (need_counts_panel && !cfg.count_exclude.empty()) count_panel = filter_countries(panel, cfg.count_exclude, true);
    auto panel_for = [&](const std::string& m) -> const PanelDataset& { return uses_counts(m) ? count_panel : panel; };

    fs::create_directories(cfg.output / "runs");
    const io::json config_doc = experiment_config_json(cfg, panel_in);
    if (fs::exists(cfg.output / "config.json")) {
        // Resuming is only sound when the stored runs came from the same settings.
        const auto stored = io::load_json(cfg.output / "config.json");
        if (stored != config_doc)
            throw DomainError("experiment: " + cfg.output.string() + " holds an experiment with different settings");
    } else {
        io::save_json(cfg.output / "config.json", config_doc);
    }
    ExperimentResult result;
    std::mutex mu;
    auto say = [&](const std::string& s) {
        if (!log) return;
        std::lock_guard lock(mu);
        *log << s << '\n';
    };

    // Stage 1: fit (or reload) every run.
    std::vector<std::optional<detail::LoadedRun>> loaded(plan.size());
    std::map<std::string, double> timings;
    std::atomic<std::size_t> next{0};
    auto worker = [&]() {
        for (std::size_t i = next++; i < plan.size(); i = next++) {
            const RunKey& key = plan[i];
            const fs::path artifact = cfg.output / "runs" / (key.id() + ".json");
            detail::LoadedRun run{key, {}, std::nullopt};
            try {
                const auto t0 = std::chrono::steady_clock::now();
                bool reused = false;
                if (fs::exists(artifact)) {
                    const auto j = io::load_json(artifact);
                    if (is_neural(key.model)) {
                        run.neural = io::run_from(j);
                        run.params = run.neural->parameters;
                    } else {
                        run.params = io::classic_from(j).parameters;
                    }
                    reused = true;
                } else if (is_neural(key.model)) {
                    NeuralLcConfig c = config_for(key.model, cfg.neural);
                    c.seed = *key.seed;
                    TrainingRun tr = train(panel_for(key.model), c);
                    io::write_text(cfg.output / "runs" / (key.id() + ".loss.csv"), io::loss_curve_csv(tr));
                    io::save_json(artifact, io::run_json(tr));
                    run.params = tr.parameters;
                    run.neural = std::move(tr);
                } else {
                    const auto m = fit_classic(panel_for(key.model), key.model);
                    io::save_json(artifact, io::classic_json(m));
                    run.params = m.parameters;
                }
                const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
                {
                    std::lock_guard lock(mu);
                    (reused ? result.skipped : result.completed).push_back(key.id());
                    timings[key.id()] = reused ? 0.0 : secs;
                }
                say((reused ? "reused " : "finished ") + key.id());
                loaded[i] = std::move(run);
            } catch (const std::exception& e) {
                std::lock_guard lock(mu);
                result.failures[key.id()] = e.what();
                if (log) *log << "FAILED " << key.id() << ": " << e.what() << '\n';
            }
        }
    };
    {
        std::vector<std::thread> pool;
        const int n = std::min<int>(cfg.workers, static_cast<int>(plan.size()));
        for (int w = 1; w < n; ++w) pool.emplace_back(worker);
        worker();
        for (auto& t : pool) t.join();
    }

    // Stage 2: reports, computed in plan order so output never depends on scheduling.
    std::vector<std::string> files{"config.json"};
    auto emit = [&](const std::string& rel, const std::string& text) {
        io::write_text(cfg.output / rel, text);
        files.push_back(rel);
    };
    std::map<std::string, std::vector<const detail::LoadedRun*>> by_model;
    for (const auto& r : loaded)
        if (r) by_model[r->key.model].push_back(&*r);
    for (const auto& r : loaded) {
        if (!r) continue;
        files.push_back("runs/" + r->key.id() + ".json");
        if (r->neural) files.push_back("runs/" + r->key.id() + ".loss.csv");
    }

    // Each model is scored on its own population set; comparison groups use
    // the intersection so every table sits on one grid.
    auto report_on = [&](const detail::LoadedRun& r, const PanelDataset& p) {
        return score(forecast_panel(detail::subset(r.params, p), p), p, r.key.id(), r.key.model);
    };
    for (const auto& r : loaded) {
        if (!r) continue;
        const auto rep = report_on(*r, panel_for(r->key.model));
        emit("reports/" + r->key.id() + ".csv", detail::csv_text([&](std::ostream& o) { write_report_csv(o, rep); }));
    }

    // A comparison group lists models in display order, baseline first.
    struct Group {
        std::string name;
        const PanelDataset* panel;
        std::vector<std::string> models;
    };
    std::vector<Group> groups;
    {
        std::vector<std::string> mse{"lc-svd"}, cnt{"lc-poisson", "lc-svd"};
        for (const auto& m : cfg.models)
            if (is_neural(m)) (uses_counts(m) ? cnt : mse).push_back(m);
        auto present = [&](std::vector<std::string> v) {
            std::vector<std::string> out;
            for (const auto& m : v)
                if (by_model.count(m)) out.push_back(m);
            return out;
        };
        const auto g1 = present(mse), g2 = present(cnt);
        if (!g1.empty()) groups.push_back({"mse", &panel, g1});
        const bool has_count_models = std::any_of(g2.begin(), g2.end(), [](const std::string& m) { return uses_counts(m); });
        if (has_count_models && g2.size() > 1) groups.push_back({"poisson", &count_panel, g2});
    }
    for (const auto& g : groups) {
        std::vector<EvaluationReport> reps;
        for (const auto& m : g.models) reps.push_back(report_on(*by_model[m].front(), *g.panel));
        const auto table = compare(reps, cfg.sizes);
        const std::string pre = "tables/" + g.name + "_";
        emit(pre + "summary.csv", detail::csv_text([&](std::ostream& o) { write_summary_csv(o, table); }));
        emit(pre + "populations.csv", detail::csv_text([&](std::ostream& o) { write_population_csv(o, table); }));
        emit(pre + "ages.csv", detail::csv_text([&](std::ostream& o) { write_age_csv(o, table); }));
        if (!table.split.empty())
            emit(pre + "split.csv", detail::csv_text([&](std::ostream& o) { write_split_csv(o, table); }));
        emit(pre + "summary.txt", detail::csv_text([&](std::ostream& o) { print_comparison(o, table); }));
    }

    // Run-to-run variability for neural models with at least two seeds.
    for (const auto& [model, runs] : by_model) {
        if (!is_neural(model) || runs.size() < 2) continue;
        std::vector<const TrainingRun*> trained;
        std::vector<EvaluationReport> reps;
        for (const auto* r : runs) {
            trained.push_back(&*r->neural);
            reps.push_back(report_on(*r, panel_for(model)));
        }
        const auto v = variability_summary(trained, reps);
        emit("variability/" + model + "_boxplot.csv", detail::csv_text([&](std::ostream& o) {
                 o << "run,female,male,total\n";
                 for (std::size_t i = 0; i < reps.size(); ++i)
                     o << reps[i].run_id << ',' << num(gender_mse(reps[i], Gender::female)) << ','
                       << num(gender_mse(reps[i], Gender::male)) << ',' << num(reps[i].global_mse()) << '\n';
                 for (const auto& [name, b] : {std::pair{"female", v.female}, {"male", v.male}, {"total", v.total}})
                     o << "#" << name << ",min=" << num(b.min) << ",q1=" << num(b.q1) << ",median=" << num(b.median)
                       << ",q3=" << num(b.q3) << ",max=" << num(b.max) << '\n';
             }));
        emit("variability/" + model + "_envelopes.csv", detail::csv_text([&](std::ostream& o) {
                 o << "population,parameter,index,min,max\n";
                 for (const auto& [id, e] : v.envelopes) {
                     const auto& p = runs.front()->params.at(id);
                     for (std::size_t x = 0; x < e.a_min.size(); ++x)
                         o << id.label() << ",a," << p.ages[x] << ',' << num(e.a_min[x]) << ',' << num(e.a_max[x]) << '\n';
                     for (std::size_t x = 0; x < e.b_min.size(); ++x)
                         o << id.label() << ",b," << p.ages[x] << ',' << num(e.b_min[x]) << ',' << num(e.b_max[x]) << '\n';
                     for (std::size_t t = 0; t < e.k_min.size(); ++t)
                         o << id.label() << ",k," << p.years[t] << ',' << num(e.k_min[t]) << ',' << num(e.k_max[t]) << '\n';
                 }
             }));
    }

    // Wall-clock times vary between reruns, so they stay out of the manifest.
    {
        std::ostringstream t;
        for (const auto& [id, s] : timings) t << id << ' ' << s << '\n';
        io::write_text(cfg.output / "timings.txt", t.str());
    }

    std::sort(files.begin(), files.end());
    files.erase(std::unique(files.begin(), files.end()), files.end());
    io::json manifest{{"format", "lcnet-bundle"}, {"version", io::kFormatVersion}};
    io::json entries = io::json::array();
    for (const auto& f : files) entries.push_back({{"path", f}, {"sha256", sha256_file(cfg.output / f)}});
    manifest["files"] = std::move(entries);
    io::json fails = io::json::object();
    for (const auto& [id, what] : result.failures) fails[id] = what;
    manifest["failures"] = std::move(fails);
    manifest["complete"] = result.failures.empty();
    io::json runs = io::json::array();
    for (const auto& k : plan) runs.push_back(k.id());
    manifest["runs"] = std::move(runs);
    io::save_json(cfg.output / "manifest.json", manifest);

    std::sort(result.completed.begin(), result.completed.end());
    std::sort(result.skipped.begin(), result.skipped.end());
    result.files = std::move(files);
    return result;
}

} // namespace lcnet
