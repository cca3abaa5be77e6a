// A 20-year forecast fan for one synthetic population: Poisson Lee-Carter
// fit, random walk with drift on k, 95% intervals with drift uncertainty.

#include <cstdio>

#include "lcnet/lcnet.hpp"

using namespace lcnet;

int main() {
    GeneratorSpec g;
    g.n_populations = 1;
    g.n_years = 40;
    g.noise = NoiseKind::poisson;
    g.exposure = 5e5;
    const auto s = generate(g);
    const auto& [id, surface] = *s.panel.surfaces.begin();

    const PoissonFit fit = fit_lc_poisson(surface, s.panel.training_years(id));
    const RwdModel rwd = fit_rwd(fit.params.k);
    std::printf("%s: %d sweeps, deviance %.2f, drift %.4f (generator mean %.4f), sigma %.4f\n", id.label().c_str(),
                fit.state.iteration, fit.state.deviance, rwd.drift, s.truth.at(id).drift, rwd.sigma);

    const ForecastFan fan = forecast_rates(fit.params, project_k(rwd, 20, 0.05, true));
    std::printf("\n%6s", "year");
    for (int age : {0, 40, 65, 85}) std::printf("  %-28s", ("age " + std::to_string(age) + " rate x1000").c_str());
    std::printf("\n");
    for (int step : {0, 4, 9, 14, 19}) {
        std::printf("%6d", fan.years[step]);
        for (std::size_t x : {0, 40, 65, 85})
            std::printf("  %7.3f [%7.3f, %7.3f]    ", 1e3 * std::exp(fan.log_point(x, step)),
                        1e3 * std::exp(fan.log_lower(x, step)), 1e3 * std::exp(fan.log_upper(x, step)));
        std::printf("\n");
    }
}
