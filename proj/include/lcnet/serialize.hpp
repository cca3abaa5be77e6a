#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "lcnet/data.hpp"
#include "lcnet/error.hpp"
#include "lcnet/format.hpp"
#include "lcnet/lc_svd.hpp"
#include "lcnet/linalg.hpp"
#include "lcnet/neural_lc.hpp"
#include "lcnet/synth.hpp"

// Versioned JSON documents. Every document carries "format" and "version";
// non-finite numbers are written as null. Doubles are printed in shortest
// round-trip form, so reading back is bit-exact.

namespace lcnet::io {

using json = nlohmann::json;

inline constexpr int kFormatVersion = 1;

// ---------------------------------------------------------------------------
// Files

inline void write_text(const std::filesystem::path& path, const std::string& text) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    const auto tmp = std::filesystem::path(path.string() + ".tmp");
    {
        std::ofstream out(tmp, std::ios::binary);
        if (!out) throw Error("cannot write " + path.string());
        out << text;
        if (!out) throw Error("write failed for " + path.string());
    }
    std::filesystem::rename(tmp, path);
}

inline std::string read_text(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void save_json(const std::filesystem::path& path, const json& j) { write_text(path, j.dump(1) + "\n"); }

inline json load_json(const std::filesystem::path& path) {
    const std::string text = read_text(path);
    try {
        return json::parse(text);
    } catch (const json::parse_error& e) {
        // Byte offset -> line number for the message.
        std::size_t line = 1;
        for (std::size_t i = 0; i < std::min<std::size_t>(e.byte, text.size()); ++i)
            if (text[i] == '\n') ++line;
        throw ParseError(path.string(), line, "invalid JSON");
    }
}

/// Check "format"/"version" and return the document for chaining.
inline const json& expect_format(const json& j, const std::string& format) {
    if (!j.is_object() || !j.contains("format") || j["format"] != format)
        throw DomainError("expected a '" + format + "' document");
    if (j.value("version", 0) != kFormatVersion)
        throw DomainError(format + ": unsupported version " + j.value("version", json(0)).dump());
    return j;
}

// ---------------------------------------------------------------------------
// Numbers and matrices

inline json number(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

inline double number(const json& j) {
    if (j.is_null()) return std::numeric_limits<double>::quiet_NaN();
    if (!j.is_number()) throw DomainError("expected a number, got " + j.dump());
    return j.get<double>();
}

inline json vector_json(const std::vector<double>& v) {
    json a = json::array();
    for (double x : v) a.push_back(number(x));
    return a;
}

inline std::vector<double> vector_from(const json& j) {
    if (!j.is_array()) throw DomainError("expected an array");
    std::vector<double> v;
    v.reserve(j.size());
    for (const auto& x : j) v.push_back(number(x));
    return v;
}

/// Row-major nested arrays.
inline json matrix_json(const Matrix& m) {
    json rows = json::array();
    for (std::size_t r = 0; r < m.rows(); ++r) {
        json row = json::array();
        for (std::size_t c = 0; c < m.cols(); ++c) row.push_back(number(m(r, c)));
        rows.push_back(std::move(row));
    }
    return rows;
}

inline Matrix matrix_from(const json& j, std::size_t rows, std::size_t cols) {
    if (!j.is_array() || j.size() != rows) throw DimensionError("matrix: expected " + std::to_string(rows) + " rows");
    Matrix m(rows, cols);
    for (std::size_t r = 0; r < rows; ++r) {
        if (!j[r].is_array() || j[r].size() != cols)
            throw DimensionError("matrix: row " + std::to_string(r) + " should have " + std::to_string(cols) + " entries");
        for (std::size_t c = 0; c < cols; ++c) m(r, c) = number(j[r][c]);
    }
    return m;
}

inline json mask_json(const MaskMatrix& m) {
    // Sparse: list of [row, col] pairs.
    json cells = json::array();
    for (std::size_t r = 0; r < m.rows; ++r)
        for (std::size_t c = 0; c < m.cols; ++c)
            if (m(r, c)) cells.push_back({r, c});
    return cells;
}

inline MaskMatrix mask_from(const json& j, std::size_t rows, std::size_t cols) {
    MaskMatrix m(rows, cols);
    for (const auto& cell : j) {
        const auto r = cell.at(0).get<std::size_t>(), c = cell.at(1).get<std::size_t>();
        if (r >= rows || c >= cols) throw DimensionError("mask cell out of range");
        m.set(r, c, true);
    }
    return m;
}

// ---------------------------------------------------------------------------
// Identifiers and LC parameters

inline json id_json(const PopulationId& id) { return {{"country", id.country}, {"gender", to_string(id.gender)}}; }

inline PopulationId id_from(const json& j) {
    return {j.at("country").get<std::string>(), parse_gender(j.at("gender").get<std::string>())};
}

inline json params_json(const LcParameters& p) {
    json j = id_json(p.id);
    j["ages"] = p.ages;
    j["years"] = p.years;
    j["a"] = vector_json(p.a);
    j["b"] = vector_json(p.b);
    j["k"] = vector_json(p.k);
    j["normalized"] = p.normalized;
    return j;
}

inline LcParameters params_from(const json& j) {
    LcParameters p;
    p.id = id_from(j);
    p.ages = j.at("ages").get<std::vector<int>>();
    p.years = j.at("years").get<std::vector<int>>();
    p.a = vector_from(j.at("a"));
    p.b = vector_from(j.at("b"));
    p.k = vector_from(j.at("k"));
    p.normalized = j.at("normalized").get<bool>();
    p.validate();
    return p;
}

inline json params_map_json(const std::map<PopulationId, LcParameters>& m) {
    json a = json::array();
    for (const auto& [id, p] : m) a.push_back(params_json(p));
    return a;
}

inline std::map<PopulationId, LcParameters> params_map_from(const json& j) {
    std::map<PopulationId, LcParameters> m;
    for (const auto& e : j) {
        auto p = params_from(e);
        const auto id = p.id;
        if (!m.emplace(id, std::move(p)).second) throw DomainError("duplicate population " + id.label());
    }
    return m;
}

// ---------------------------------------------------------------------------
// Panel snapshot

inline json panel_json(const PanelDataset& panel) {
    json j{{"format", "lcnet-panel"}, {"version", kFormatVersion}};
    j["train_max_year"] = panel.train_max_year;
    j["ages"] = panel.ages;
    j["scaling"] = panel.scaling ? json{{"y_min", panel.scaling->y_min}, {"y_max", panel.scaling->y_max}} : json(nullptr);
    json surfaces = json::array();
    for (const auto& [id, s] : panel.surfaces) {
        json e = id_json(id);
        e["years"] = s.years;
        e["log_rates"] = matrix_json(s.log_rates);
        e["deaths"] = s.deaths ? matrix_json(*s.deaths) : json(nullptr);
        e["exposures"] = s.exposures ? matrix_json(*s.exposures) : json(nullptr);
        e["imputed"] = mask_json(s.imputed);
        surfaces.push_back(std::move(e));
    }
    j["surfaces"] = std::move(surfaces);
    return j;
}

inline PanelDataset panel_from(const json& j) {
    expect_format(j, "lcnet-panel");
    SurfaceMap surfaces;
    const auto ages = j.at("ages").get<std::vector<int>>();
    for (const auto& e : j.at("surfaces")) {
        MortalitySurface s;
        s.id = id_from(e);
        s.ages = ages;
        s.years = e.at("years").get<std::vector<int>>();
        const std::size_t nx = ages.size(), nt = s.years.size();
        s.log_rates = matrix_from(e.at("log_rates"), nx, nt);
        if (!e.at("deaths").is_null()) s.deaths = matrix_from(e["deaths"], nx, nt);
        if (!e.at("exposures").is_null()) s.exposures = matrix_from(e["exposures"], nx, nt);
        s.imputed = mask_from(e.at("imputed"), nx, nt);
        const auto id = s.id;
        if (!surfaces.emplace(id, std::move(s)).second) throw DomainError("panel: duplicate population " + id.label());
    }
    PanelDataset p = assemble_panel(surfaces, j.at("train_max_year").get<int>(), static_cast<int>(ages.size()));
    if (p.ages != ages) throw DomainError("panel: age grid must be 0..n-1");
    if (!j.at("scaling").is_null()) p.scaling = Scaling{j["scaling"].at("y_min").get<double>(), j["scaling"].at("y_max").get<double>()};
    return p;
}

// ---------------------------------------------------------------------------
// Classic fits (lc-svd, lc-poisson)

struct FitDiagnostics {
    double objective = 0.0; ///< training SSE (svd) or deviance (poisson)
    int iterations = 0;
    bool converged = true;
};

struct ClassicModel {
    std::string model; ///< "lc-svd" or "lc-poisson"
    int train_max_year = 0;
    std::map<PopulationId, LcParameters> parameters;
    std::map<PopulationId, FitDiagnostics> diagnostics;
};

inline json classic_json(const ClassicModel& m) {
    json j{{"format", "lcnet-model"}, {"version", kFormatVersion}, {"model", m.model}, {"train_max_year", m.train_max_year}};
    j["parameters"] = params_map_json(m.parameters);
    json d = json::array();
    for (const auto& [id, g] : m.diagnostics) {
        json e = id_json(id);
        e["objective"] = number(g.objective);
        e["iterations"] = g.iterations;
        e["converged"] = g.converged;
        d.push_back(std::move(e));
    }
    j["diagnostics"] = std::move(d);
    return j;
}

inline ClassicModel classic_from(const json& j) {
    expect_format(j, "lcnet-model");
    ClassicModel m;
    m.model = j.at("model").get<std::string>();
    m.train_max_year = j.at("train_max_year").get<int>();
    m.parameters = params_map_from(j.at("parameters"));
    for (const auto& e : j.at("diagnostics"))
        m.diagnostics[id_from(e)] = {number(e.at("objective")), e.at("iterations").get<int>(), e.at("converged").get<bool>()};
    return m;
}

// ---------------------------------------------------------------------------
// Neural config and runs

inline json config_json(const NeuralLcConfig& c) {
    return {{"variant", to_string(c.variant)},
            {"loss", to_string(c.loss)},
            {"q_country_a", c.q_country_a},
            {"q_gender_a", c.q_gender_a},
            {"q_country_b", c.q_country_b},
            {"q_gender_b", c.q_gender_b},
            {"hidden", c.hidden},
            {"kernel", c.kernel},
            {"stride", c.stride},
            {"act_a", nn::to_string(c.act_a)},
            {"act_b", nn::to_string(c.act_b)},
            {"act_k1", nn::to_string(c.act_k1)},
            {"act_k2", nn::to_string(c.act_k2)},
            {"dropout_a", c.dropout_a},
            {"dropout_b", c.dropout_b},
            {"dropout_k", c.dropout_k},
            {"epochs", c.epochs},
            {"batch_size", c.batch_size},
            {"seed", c.seed},
            {"learning_rate", c.learning_rate},
            {"beta1", c.beta1},
            {"beta2", c.beta2},
            {"epsilon", c.epsilon}};
}

/// Override fields of `c` with the keys present in `j`; unknown keys are errors.
inline NeuralLcConfig apply_config(NeuralLcConfig c, const json& j) {
    if (!j.is_object()) throw DomainError("neural config must be an object");
    for (const auto& [key, v] : j.items()) {
        if (key == "variant") c.variant = parse_variant(v.get<std::string>());
        else if (key == "loss") c.loss = parse_loss(v.get<std::string>());
        else if (key == "q_country_a") c.q_country_a = v.get<std::size_t>();
        else if (key == "q_gender_a") c.q_gender_a = v.get<std::size_t>();
        else if (key == "q_country_b") c.q_country_b = v.get<std::size_t>();
        else if (key == "q_gender_b") c.q_gender_b = v.get<std::size_t>();
        else if (key == "hidden") c.hidden = v.get<std::size_t>();
        else if (key == "kernel") c.kernel = v.get<std::size_t>();
        else if (key == "stride") c.stride = v.get<std::size_t>();
        else if (key == "act_a") c.act_a = nn::parse_activation(v.get<std::string>());
        else if (key == "act_b") c.act_b = nn::parse_activation(v.get<std::string>());
        else if (key == "act_k1") c.act_k1 = nn::parse_activation(v.get<std::string>());
        else if (key == "act_k2") c.act_k2 = nn::parse_activation(v.get<std::string>());
        else if (key == "dropout_a") c.dropout_a = v.get<double>();
        else if (key == "dropout_b") c.dropout_b = v.get<double>();
        else if (key == "dropout_k") c.dropout_k = v.get<double>();
        else if (key == "dropout") c.dropout_a = c.dropout_b = c.dropout_k = v.get<double>();
        else if (key == "epochs") c.epochs = v.get<int>();
        else if (key == "batch_size") c.batch_size = v.get<std::size_t>();
        else if (key == "seed") c.seed = v.get<std::uint64_t>();
        else if (key == "learning_rate") c.learning_rate = v.get<double>();
        else if (key == "beta1") c.beta1 = v.get<double>();
        else if (key == "beta2") c.beta2 = v.get<double>();
        else if (key == "epsilon") c.epsilon = v.get<double>();
        else throw DomainError("unknown neural config key '" + key + "'");
    }
    return c;
}

inline json run_json(const TrainingRun& run) {
    json j{{"format", "lcnet-run"}, {"version", kFormatVersion}, {"model", run.model_name()}};
    j["config"] = config_json(run.config);
    j["seed"] = run.seed;
    j["countries"] = run.countries;
    j["n_ages"] = run.n_ages;
    j["scaling"] = run.scaling ? json{{"y_min", run.scaling->y_min}, {"y_max", run.scaling->y_max}} : json(nullptr);
    j["loss_curve"] = vector_json(run.loss_curve);
    // Layout manifest lets readers check the flat array against the architecture.
    const auto net = make_network(run.config, run.countries, run.n_ages);
    json manifest = json::array();
    for (const auto& b : net.weights().blocks())
        manifest.push_back({{"name", b.name}, {"offset", b.offset}, {"rows", b.rows}, {"cols", b.cols}});
    j["weights"] = {{"count", run.weights.size()}, {"manifest", std::move(manifest)}, {"values", vector_json(run.weights)}};
    j["parameters"] = params_map_json(run.parameters);
    return j;
}

inline TrainingRun run_from(const json& j) {
    expect_format(j, "lcnet-run");
    TrainingRun run;
    run.config = apply_config(NeuralLcConfig{}, j.at("config"));
    run.seed = j.at("seed").get<std::uint64_t>();
    run.countries = j.at("countries").get<std::vector<std::string>>();
    run.n_ages = j.at("n_ages").get<std::size_t>();
    if (!j.at("scaling").is_null()) run.scaling = Scaling{j["scaling"].at("y_min").get<double>(), j["scaling"].at("y_max").get<double>()};
    run.loss_curve = vector_from(j.at("loss_curve"));
    run.weights = vector_from(j.at("weights").at("values"));
    const auto net = make_network(run.config, run.countries, run.n_ages);
    const auto& manifest = j["weights"].at("manifest");
    const auto& blocks = net.weights().blocks();
    if (manifest.size() != blocks.size() || run.weights.size() != net.weights().size())
        throw DimensionError("run: weight manifest does not match the architecture");
    for (std::size_t i = 0; i < blocks.size(); ++i)
        if (manifest[i].at("name") != blocks[i].name || manifest[i].at("offset").get<std::size_t>() != blocks[i].offset ||
            manifest[i].at("rows").get<std::size_t>() != blocks[i].rows ||
            manifest[i].at("cols").get<std::size_t>() != blocks[i].cols)
            throw DimensionError("run: weight block " + std::to_string(i) + " does not match the architecture");
    for (double w : run.weights)
        if (!std::isfinite(w)) throw DomainError("run: non-finite weight");
    run.parameters = params_map_from(j.at("parameters"));
    return run;
}

/// Loss curve as "epoch,loss" rows.
inline std::string loss_curve_csv(const TrainingRun& run) {
    std::ostringstream out;
    out << "epoch,loss\n";
    for (std::size_t e = 0; e < run.loss_curve.size(); ++e) out << e << ',' << num(run.loss_curve[e]) << '\n';
    return out.str();
}

// ---------------------------------------------------------------------------
// Synthetic truth sidecar

inline json generator_json(const GeneratorSpec& g) {
    return {{"n_populations", g.n_populations}, {"n_ages", g.n_ages},       {"n_years", g.n_years},
            {"n_test_years", g.n_test_years},   {"first_year", g.first_year}, {"exposure", g.exposure},
            {"noise", to_string(g.noise)},      {"noise_sd", g.noise_sd},     {"drift", g.drift},
            {"sigma_k", g.sigma_k},             {"seed", g.seed}};
}

inline GeneratorSpec apply_generator(GeneratorSpec g, const json& j) {
    if (!j.is_object()) throw DomainError("generator spec must be an object");
    for (const auto& [key, v] : j.items()) {
        if (key == "n_populations") g.n_populations = v.get<int>();
        else if (key == "n_ages") g.n_ages = v.get<int>();
        else if (key == "n_years") g.n_years = v.get<int>();
        else if (key == "n_test_years") g.n_test_years = v.get<int>();
        else if (key == "first_year") g.first_year = v.get<int>();
        else if (key == "exposure") g.exposure = v.get<double>();
        else if (key == "noise") g.noise = parse_noise(v.get<std::string>());
        else if (key == "noise_sd") g.noise_sd = v.get<double>();
        else if (key == "drift") g.drift = v.get<double>();
        else if (key == "sigma_k") g.sigma_k = v.get<double>();
        else if (key == "seed") g.seed = v.get<std::uint64_t>();
        else throw DomainError("unknown generator key '" + key + "'");
    }
    return g;
}

inline json truth_json(const SyntheticPanel& s, const GeneratorSpec& g) {
    json j{{"format", "lcnet-truth"}, {"version", kFormatVersion}, {"generator", generator_json(g)}};
    json pops = json::array();
    for (const auto& [id, t] : s.truth) {
        json e = id_json(id);
        e["a"] = vector_json(t.a);
        e["b"] = vector_json(t.b);
        e["k"] = vector_json(t.k);
        e["drift"] = t.drift;
        e["sigma"] = t.sigma;
        pops.push_back(std::move(e));
    }
    j["populations"] = std::move(pops);
    return j;
}

inline std::map<PopulationId, PopulationTruth> truth_from(const json& j) {
    expect_format(j, "lcnet-truth");
    std::map<PopulationId, PopulationTruth> out;
    for (const auto& e : j.at("populations")) {
        PopulationTruth t;
        t.id = id_from(e);
        t.a = vector_from(e.at("a"));
        t.b = vector_from(e.at("b"));
        t.k = vector_from(e.at("k"));
        t.drift = e.at("drift").get<double>();
        t.sigma = e.at("sigma").get<double>();
        out.emplace(t.id, std::move(t));
    }
    return out;
}

} // namespace lcnet::io
