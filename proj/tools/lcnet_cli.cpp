// lcnet: ingest HMD data, fit Lee-Carter models (classic and neural),
// forecast, evaluate, and run seeded multi-model experiments.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "lcnet/lcnet.hpp"

namespace fs = std::filesystem;
using lcnet::io::json;

namespace {

/// Thrown for bad combinations of otherwise well-formed arguments.
struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

std::string env_or(const char* name, const std::string& fallback) {
    const char* v = std::getenv(name);
    return v && *v ? std::string(v) : fallback;
}

json load_config(const std::string& path) { return path.empty() ? json::object() : lcnet::io::load_json(path); }

std::vector<std::string> split_list(const std::vector<std::string>& items) {
    std::vector<std::string> out;
    for (const auto& item : items) {
        std::stringstream ss(item);
        std::string tok;
        while (std::getline(ss, tok, ','))
            if (!tok.empty()) out.push_back(tok);
    }
    return out;
}

/// Neural settings that can be given on the command line; unset ones leave
/// the file/default value in place.
struct NeuralFlags {
    std::optional<int> epochs;
    std::optional<std::size_t> batch_size;
    std::optional<std::uint64_t> seed;
    std::optional<double> dropout;
    std::optional<double> learning_rate;
    std::optional<std::size_t> hidden, kernel, stride;
    std::optional<std::string> act_k1;

    void attach(CLI::App* app, bool with_seed) {
        app->add_option("--epochs", epochs, "Training epochs")->check(CLI::NonNegativeNumber);
        app->add_option("--batch-size", batch_size, "Mini-batch size (0 = full batch)");
        if (with_seed) app->add_option("--seed", seed, "Training seed");
        app->add_option("--dropout", dropout, "Dropout rate for all three dropout layers")->check(CLI::Range(0.0, 0.99));
        app->add_option("--learning-rate", learning_rate, "Adam learning rate")->check(CLI::PositiveNumber);
        app->add_option("--hidden", hidden, "Width of the first subnet-k layer");
        app->add_option("--kernel", kernel, "LCN/CNN kernel width");
        app->add_option("--stride", stride, "LCN/CNN stride");
        app->add_option("--act-k1", act_k1, "Activation of the first subnet-k layer (linear, tanh, relu)");
    }

    lcnet::NeuralLcConfig apply(lcnet::NeuralLcConfig c) const {
        if (epochs) c.epochs = *epochs;
        if (batch_size) c.batch_size = *batch_size;
        if (seed) c.seed = *seed;
        if (dropout) c.dropout_a = c.dropout_b = c.dropout_k = *dropout;
        if (learning_rate) c.learning_rate = *learning_rate;
        if (hidden) c.hidden = *hidden;
        if (kernel) c.kernel = *kernel;
        if (stride) c.stride = *stride;
        if (act_k1) c.act_k1 = lcnet::nn::parse_activation(*act_k1);
        return c;
    }
};

std::set<std::string> exclusions(const json& cfg, const std::vector<std::string>& cli) {
    std::set<std::string> out;
    if (!cli.empty()) {
        for (const auto& c : split_list(cli)) out.insert(c);
    } else if (cfg.contains("count_exclude")) {
        for (const auto& c : cfg["count_exclude"]) out.insert(c.get<std::string>());
    }
    return out;
}

lcnet::PanelDataset read_panel(const std::string& path) { return lcnet::io::panel_from(lcnet::io::load_json(path)); }

/// Parameters held by either artifact kind.
std::map<lcnet::PopulationId, lcnet::LcParameters> read_parameters(const std::string& path, std::string* model) {
    const json j = lcnet::io::load_json(path);
    const std::string format = j.value("format", "");
    if (format == "lcnet-run") {
        auto run = lcnet::io::run_from(j);
        if (model) *model = run.model_name();
        return run.parameters;
    }
    if (format == "lcnet-model") {
        auto m = lcnet::io::classic_from(j);
        if (model) *model = m.model;
        return m.parameters;
    }
    throw lcnet::DomainError(path + ": not a model artifact");
}

// ---------------------------------------------------------------------------

struct IngestArgs {
    std::string data_dir = env_or("LCNET_DATA_DIR", "");
    std::string output = "panel.json";
    std::string report;
    std::vector<std::string> countries;
    lcnet::IngestOptions opt;
};

int cmd_ingest(const IngestArgs& a) {
    if (a.data_dir.empty()) throw UsageError("ingest: no data directory (use --data-dir or set LCNET_DATA_DIR)");
    lcnet::IngestOptions opt = a.opt;
    for (const auto& c : split_list(a.countries)) opt.countries.insert(c);
    const auto r = lcnet::ingest_directory(a.data_dir, opt);
    lcnet::io::save_json(a.output, lcnet::io::panel_json(r.panel));
    std::ostringstream rep;
    lcnet::write_ingest_report(rep, r.report);
    if (!a.report.empty()) lcnet::io::write_text(a.report, rep.str());
    std::cout << rep.str() << "panel written to " << a.output << '\n';
    return 0;
}

struct FitArgs {
    std::string panel, model, config, output;
    std::vector<std::string> exclude;
    NeuralFlags flags;
};

int cmd_fit(const FitArgs& a) {
    lcnet::check_model_name(a.model);
    const json cfg = load_config(a.config);
    lcnet::PanelDataset panel = read_panel(a.panel);
    panel.scaling.reset();
    const auto excl = exclusions(cfg, a.exclude);
    if (!excl.empty()) panel = lcnet::filter_countries(panel, excl, true);
    const std::string out = a.output.empty() ? a.model + ".json" : a.output;

    if (lcnet::is_neural(a.model)) {
        lcnet::NeuralLcConfig c = cfg.contains("neural") ? lcnet::io::apply_config({}, cfg["neural"]) : lcnet::NeuralLcConfig{};
        c = a.flags.apply(lcnet::config_for(a.model, c));
        const auto countries = panel.countries();
        const auto spec = lcnet::build_network(c, countries.size(), lcnet::kGenderCount, panel.ages.size());
        std::cout << a.model << ": " << panel.surfaces.size() << " populations, " << countries.size() << " countries, "
                  << panel.training_example_count() << " training curves\n";
        std::cout << "parameters: " << spec.parameter_count() << '\n';
        const auto run = lcnet::train(panel, c);
        lcnet::io::save_json(out, lcnet::io::run_json(run));
        lcnet::io::write_text(fs::path(out).replace_extension(".loss.csv"), lcnet::io::loss_curve_csv(run));
        std::cout.precision(6);
        std::cout << "final training loss: " << run.loss_curve.back() << " (" << run.config.epochs << " epochs, seed "
                  << run.seed << ")\n";
    } else {
        const auto m = lcnet::fit_classic(panel, a.model);
        lcnet::io::save_json(out, lcnet::io::classic_json(m));
        double sse = 0.0;
        std::size_t cells = 0;
        for (const auto& [id, p] : m.parameters) {
            const auto& s = panel.surfaces.at(id);
            sse += lcnet::reconstruction_sse(p, s.columns(s.log_rates, p.years));
            cells += p.a.size() * p.k.size();
        }
        std::cout << a.model << ": " << m.parameters.size() << " populations\n";
        std::cout.precision(6);
        std::cout << "training MSE (log scale): " << sse / static_cast<double>(cells) << '\n';
        std::size_t unconverged = 0;
        for (const auto& [id, d] : m.diagnostics) unconverged += d.converged ? 0 : 1;
        if (unconverged) std::cout << "warning: " << unconverged << " populations did not converge\n";
    }
    std::cout << "model written to " << out << '\n';
    return 0;
}

struct ForecastArgs {
    std::string model, output;
    int horizon = 0;
    double alpha = 0.05;
    bool drift_uncertainty = false;
};

int cmd_forecast(const ForecastArgs& a) {
    if (a.horizon <= 0) throw UsageError("forecast: --horizon must be positive");
    const auto params = read_parameters(a.model, nullptr);
    std::ofstream file;
    if (!a.output.empty()) {
        if (fs::path(a.output).has_parent_path()) fs::create_directories(fs::path(a.output).parent_path());
        file.open(a.output);
        if (!file) throw lcnet::Error("cannot write " + a.output);
    }
    std::ostream& out = a.output.empty() ? std::cout : file;
    lcnet::write_fan_csv_header(out);
    for (const auto& [id, p] : params)
        lcnet::write_fan_csv(out, p, lcnet::forecast_population(p, a.horizon, a.alpha, a.drift_uncertainty));
    return 0;
}

struct EvaluateArgs {
    std::string panel, sizes, output;
    std::vector<std::string> models;
};

int cmd_evaluate(const EvaluateArgs& a) {
    const lcnet::PanelDataset full = read_panel(a.panel);
    std::vector<std::pair<std::string, std::map<lcnet::PopulationId, lcnet::LcParameters>>> models;
    std::set<lcnet::PopulationId> common;
    for (std::size_t i = 0; i < a.models.size(); ++i) {
        std::string name;
        auto params = read_parameters(a.models[i], &name);
        std::set<lcnet::PopulationId> ids;
        for (const auto& [id, p] : params) ids.insert(id);
        if (i == 0) {
            common = ids;
        } else {
            std::set<lcnet::PopulationId> both;
            for (const auto& id : common)
                if (ids.count(id)) both.insert(id);
            common = both;
        }
        models.emplace_back(name, std::move(params));
    }
    std::set<lcnet::PopulationId> keep;
    for (const auto& id : common)
        if (full.surfaces.count(id)) keep.insert(id);
    const auto panel = lcnet::restrict_populations(full, keep);
    std::vector<lcnet::EvaluationReport> reports;
    for (const auto& [name, params] : models)
        reports.push_back(lcnet::score(lcnet::forecast_panel(params, panel), panel, name, name));

    std::optional<lcnet::PopulationSizes> sizes;
    if (!a.sizes.empty()) {
        std::ifstream in(a.sizes);
        if (!in) throw lcnet::Error("cannot open " + a.sizes);
        sizes = lcnet::read_population_sizes(in, a.sizes);
    }
    const auto table = lcnet::compare(reports, sizes);
    std::cout << panel.surfaces.size() << " populations scored\n";
    lcnet::print_comparison(std::cout, table);
    if (!a.output.empty()) {
        const fs::path dir(a.output);
        auto csv = [&](const std::string& name, auto writer) {
            std::ostringstream s;
            writer(s, table);
            lcnet::io::write_text(dir / name, s.str());
        };
        csv("summary.csv", [](std::ostream& o, const auto& t) { lcnet::write_summary_csv(o, t); });
        csv("populations.csv", [](std::ostream& o, const auto& t) { lcnet::write_population_csv(o, t); });
        csv("ages.csv", [](std::ostream& o, const auto& t) { lcnet::write_age_csv(o, t); });
        if (!table.split.empty()) csv("split.csv", [](std::ostream& o, const auto& t) { lcnet::write_split_csv(o, t); });
        for (const auto& r : reports) {
            std::ostringstream s;
            lcnet::write_report_csv(s, r);
            lcnet::io::write_text(dir / ("report_" + r.model + ".csv"), s.str());
        }
    }
    return 0;
}

struct SynthArgs {
    std::string config, output = "panel.json", truth = "truth.json";
    std::optional<int> populations, ages, years, test_years, first_year;
    std::optional<double> exposure, noise_sd, drift, sigma_k;
    std::optional<std::string> noise;
    std::optional<std::uint64_t> seed;
};

lcnet::GeneratorSpec resolve_generator(const json& file, const SynthArgs& a) {
    lcnet::GeneratorSpec g = lcnet::io::apply_generator({}, file);
    if (a.populations) g.n_populations = *a.populations;
    if (a.ages) g.n_ages = *a.ages;
    if (a.years) g.n_years = *a.years;
    if (a.test_years) g.n_test_years = *a.test_years;
    if (a.first_year) g.first_year = *a.first_year;
    if (a.exposure) g.exposure = *a.exposure;
    if (a.noise) g.noise = lcnet::parse_noise(*a.noise);
    if (a.noise_sd) g.noise_sd = *a.noise_sd;
    if (a.drift) g.drift = *a.drift;
    if (a.sigma_k) g.sigma_k = *a.sigma_k;
    if (a.seed) g.seed = *a.seed;
    return g;
}

int cmd_synth(const SynthArgs& a) {
    const json file = load_config(a.config);
    const auto g = resolve_generator(file.contains("synth") ? file["synth"] : file, a);
    const auto s = lcnet::generate(g);
    lcnet::io::save_json(a.output, lcnet::io::panel_json(s.panel));
    lcnet::io::save_json(a.truth, lcnet::io::truth_json(s, g));
    std::cout << s.panel.surfaces.size() << " populations, " << s.panel.training_example_count()
              << " training curves; panel " << a.output << ", truth " << a.truth << '\n';
    return 0;
}

struct ExperimentArgs {
    std::string config, panel, output, sizes;
    std::vector<std::string> models, exclude;
    std::vector<std::uint64_t> seeds;
    std::optional<int> workers, horizon;
    NeuralFlags flags;
};

int cmd_experiment(const ExperimentArgs& a) {
    const json file = load_config(a.config);
    lcnet::ExperimentConfig ec;

    if (!a.models.empty()) ec.models = split_list(a.models);
    else if (file.contains("models")) ec.models = file["models"].get<std::vector<std::string>>();
    if (ec.models.empty()) throw UsageError("experiment: no models given");

    if (!a.seeds.empty()) ec.seeds = a.seeds;
    else if (file.contains("seeds")) ec.seeds = file["seeds"].get<std::vector<std::uint64_t>>();

    ec.neural = file.contains("neural") ? lcnet::io::apply_config({}, file["neural"]) : lcnet::NeuralLcConfig{};
    ec.neural = a.flags.apply(ec.neural);
    ec.count_exclude = exclusions(file, a.exclude);
    ec.horizon = a.horizon ? *a.horizon : file.value("horizon", 0);
    ec.workers = a.workers ? *a.workers : file.value("workers", 1);
    ec.output = !a.output.empty() ? a.output : file.value("output", std::string("bundle"));

    const std::string sizes = !a.sizes.empty() ? a.sizes : file.value("sizes", std::string());
    if (!sizes.empty()) {
        std::ifstream in(sizes);
        if (!in) throw lcnet::Error("cannot open " + sizes);
        ec.sizes = lcnet::read_population_sizes(in, sizes);
    }

    lcnet::PanelDataset panel;
    const std::string panel_path = !a.panel.empty() ? a.panel : file.value("panel", std::string());
    if (!panel_path.empty()) {
        panel = read_panel(panel_path);
    } else if (file.contains("synth")) {
        panel = lcnet::generate(lcnet::io::apply_generator({}, file["synth"])).panel;
    } else {
        throw UsageError("experiment: give --panel or a config with \"panel\" or \"synth\"");
    }

    const auto result = lcnet::run_experiment(panel, ec, &std::cout);
    std::cout << result.completed.size() << " runs fitted, " << result.skipped.size() << " reused, "
              << result.failures.size() << " failed; bundle " << ec.output.string() << '\n';
    for (const auto& f : result.files)
        if (f.ends_with("summary.txt")) std::cout << '\n' << f << ":\n" << lcnet::io::read_text(ec.output / f);
    return result.complete() ? 0 : 1;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Lee-Carter mortality models: classic SVD, Poisson MLE and neural multi-population fits"};
    app.require_subcommand(1);
    app.set_version_flag("--version", "lcnet 1.0");

    IngestArgs ingest;
    auto* in = app.add_subcommand("ingest", "Parse HMD 1x1 files into a panel snapshot");
    in->add_option("--data-dir", ingest.data_dir, "Directory holding HMD files (default: $LCNET_DATA_DIR)");
    in->add_option("-o,--output", ingest.output, "Panel snapshot path")->capture_default_str();
    in->add_option("--report", ingest.report, "Also write the ingestion report here");
    in->add_option("--countries", ingest.countries, "Only these countries (comma separated)");
    in->add_option("--cutoff-year", ingest.opt.rules.cutoff_year, "Selection window end")->capture_default_str();
    in->add_option("--min-years", ingest.opt.rules.min_years, "Minimum years in the selection window")->capture_default_str();
    in->add_option("--first-year", ingest.opt.rules.first_year, "First calendar year kept")->capture_default_str();
    in->add_option("--max-age", ingest.opt.rules.max_age, "Oldest age kept")->capture_default_str();
    in->add_option("--train-max-year", ingest.opt.train_max_year, "Last training year")->capture_default_str();
    in->add_option("--last-year", ingest.opt.last_year, "Last calendar year kept");

    FitArgs fit;
    auto* fi = app.add_subcommand("fit", "Fit one model on a panel snapshot");
    fi->add_option("--panel", fit.panel, "Panel snapshot")->required();
    fi->add_option("--model", fit.model, "lc-svd, lc-poisson or nlc-{fcn,lcn,cnn}-{mse,poisson}")->required();
    fi->add_option("--config", fit.config, "JSON config (keys: neural, count_exclude)");
    fi->add_option("--exclude", fit.exclude, "Countries to leave out (comma separated)");
    fi->add_option("-o,--output", fit.output, "Artifact path (default: <model>.json)");
    fit.flags.attach(fi, true);

    ForecastArgs fc;
    auto* fo = app.add_subcommand("forecast", "Project k with a random walk with drift and write rate fans");
    fo->add_option("--model", fc.model, "Model artifact")->required();
    fo->add_option("--horizon", fc.horizon, "Years ahead")->required();
    fo->add_option("--alpha", fc.alpha, "Interval level is 1 - alpha")->check(CLI::Range(0.0, 1.0))->capture_default_str();
    fo->add_flag("--drift-uncertainty", fc.drift_uncertainty, "Add drift estimation error to the interval variance");
    fo->add_option("-o,--output", fc.output, "CSV path (default: stdout)");

    EvaluateArgs ev;
    auto* eva = app.add_subcommand("evaluate", "Score models on the test years; the first model is the baseline");
    eva->add_option("--panel", ev.panel, "Panel snapshot")->required();
    eva->add_option("--models", ev.models, "Model artifacts")->required()->expected(1, -1);
    eva->add_option("--sizes", ev.sizes, "CSV country,size for ordering and the HP/LP split");
    eva->add_option("-o,--output", ev.output, "Directory for CSV tables");

    SynthArgs sy;
    auto* sn = app.add_subcommand("synth", "Generate a synthetic panel with known Lee-Carter truth");
    sn->add_option("--config", sy.config, "JSON generator spec (top level or under \"synth\")");
    sn->add_option("--populations", sy.populations, "Number of populations");
    sn->add_option("--ages", sy.ages, "Number of ages");
    sn->add_option("--years", sy.years, "Training years");
    sn->add_option("--test-years", sy.test_years, "Years after the training window");
    sn->add_option("--first-year", sy.first_year, "First calendar year");
    sn->add_option("--exposure", sy.exposure, "Exposure scale");
    sn->add_option("--noise", sy.noise, "none, gaussian or poisson");
    sn->add_option("--noise-sd", sy.noise_sd, "Gaussian noise sd on log rates");
    sn->add_option("--drift", sy.drift, "Mean drift of k");
    sn->add_option("--sigma-k", sy.sigma_k, "Innovation sd of k");
    sn->add_option("--seed", sy.seed, "Generator seed");
    sn->add_option("-o,--output", sy.output, "Panel snapshot path")->capture_default_str();
    sn->add_option("--truth", sy.truth, "Truth sidecar path")->capture_default_str();

    ExperimentArgs ex;
    auto* xp = app.add_subcommand("experiment", "Run models x seeds, score, and write a report bundle");
    xp->add_option("--config", ex.config, "JSON experiment config");
    xp->add_option("--panel", ex.panel, "Panel snapshot (overrides the config)");
    xp->add_option("--models", ex.models, "Models (comma separated)");
    xp->add_option("--seeds", ex.seeds, "Seeds for neural models")->expected(1, -1);
    xp->add_option("--exclude", ex.exclude, "Countries left out of Poisson models");
    xp->add_option("--horizon", ex.horizon, "Score only this many test years (0 = all)");
    xp->add_option("--sizes", ex.sizes, "CSV country,size for ordering and the HP/LP split");
    xp->add_option("--workers", ex.workers, "Parallel runs")->check(CLI::PositiveNumber);
    xp->add_option("-o,--output", ex.output, "Bundle directory");
    ex.flags.attach(xp, false);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (*in) return cmd_ingest(ingest);
        if (*fi) return cmd_fit(fit);
        if (*fo) return cmd_forecast(fc);
        if (*eva) return cmd_evaluate(ev);
        if (*sn) return cmd_synth(sy);
        if (*xp) return cmd_experiment(ex);
    } catch (const UsageError& e) {
        std::cerr << "usage error: " << e.what() << '\n';
        return 2;
    } catch (const lcnet::ParseError& e) {
        std::cerr << "parse error: " << e.what() << '\n';
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 2;
}
