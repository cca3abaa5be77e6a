// Fit the classic and neural Lee-Carter models to a noisy synthetic panel,
// forecast the held-out years with a random walk with drift, and compare.

#include <cstdio>
#include <iostream>

#include "lcnet/lcnet.hpp"

using namespace lcnet;

int main(int argc, char** argv) {
    const int epochs = argc > 1 ? std::stoi(argv[1]) : 2000;

    GeneratorSpec g;
    g.n_populations = 8;
    g.n_years = 30;
    g.n_test_years = 10;
    g.noise = NoiseKind::poisson;
    g.exposure = 2e5;
    g.seed = 3;
    const PanelDataset panel = generate(g).panel;

    std::vector<EvaluationReport> reports;
    for (const std::string model : {"lc-svd", "lc-poisson"}) {
        const auto fit = fit_classic(panel, model);
        reports.push_back(score(forecast_panel(fit.parameters, panel), panel, model, model));
    }
    for (const LossKind loss : {LossKind::mse_scaled, LossKind::poisson}) {
        NeuralLcConfig c;
        c.variant = NetworkVariant::lcn;
        c.loss = loss;
        c.epochs = epochs;
        const TrainingRun run = train(panel, c);
        std::cout << run.model_name() << ": loss " << run.loss_curve.front() << " -> " << run.loss_curve.back()
                  << " after " << epochs << " epochs\n";
        reports.push_back(score(forecast_panel(run.parameters, panel), panel, run.model_name(), run.model_name()));
    }

    const ComparisonTable t = compare(reports);
    std::printf("\n%zu populations, %zu forecast years; wins count populations beating lc-svd\n",
                panel.surfaces.size(), panel.test_years.size());
    std::printf("%-16s %12s %12s %6s\n", "model", "MSE", "log MSE", "wins");
    for (std::size_t i = 0; i < t.models.size(); ++i)
        std::printf("%-16s %12.4e %12.4e %3zu/%zu\n", t.models[i].c_str(), t.global_mse[i], t.global_log_mse[i],
                    t.vs_baseline[i].populations_won, t.vs_baseline[i].populations_total);
}
