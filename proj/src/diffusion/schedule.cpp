#include "urbanverse/diffusion/schedule.hpp"

#include <cmath>
#include <string>

#include "urbanverse/common.hpp"

namespace uv::diff {

DiffusionSchedule makeSchedule(int steps, double betaStart, double betaEnd) {
    if (steps < 1) {
        throw ConfigError("diffusion steps must be >= 1, got " + std::to_string(steps));
    }
    if (!(betaStart > 0.0) || !(betaEnd < 1.0) || betaStart > betaEnd) {
        throw ConfigError("beta schedule requires 0 < betaStart <= betaEnd < 1, got [" +
                          std::to_string(betaStart) + ", " + std::to_string(betaEnd) + "]");
    }
    DiffusionSchedule s;
    s.steps = steps;
    s.beta.assign(static_cast<size_t>(steps) + 1, 0.0);
    s.alpha.assign(static_cast<size_t>(steps) + 1, 1.0);
    s.alphaBar.assign(static_cast<size_t>(steps) + 1, 1.0);
    for (int t = 1; t <= steps; ++t) {
        double frac = steps == 1 ? 0.0 : static_cast<double>(t - 1) / (steps - 1);
        s.beta[t] = betaStart + frac * (betaEnd - betaStart);
        s.alpha[t] = 1.0 - s.beta[t];
        s.alphaBar[t] = s.alphaBar[t - 1] * s.alpha[t];
    }
    return s;
}

PosteriorCoeffs posteriorCoeffs(const DiffusionSchedule& s, int t) {
    if (t < 2 || t > s.steps) {
        throw ConfigError("posterior coefficients defined for t in [2, " +
                          std::to_string(s.steps) + "], got " + std::to_string(t));
    }
    double abar = s.alphaBar[t];
    double abarPrev = s.alphaBar[t - 1];
    double denom = 1.0 - abar;
    PosteriorCoeffs c;
    c.g0 = s.beta[t] * std::sqrt(abarPrev) / denom;
    c.g1 = (1.0 - abarPrev) * std::sqrt(s.alpha[t]) / denom;
    c.g2 = 1.0 + (std::sqrt(abar) - 1.0) * (std::sqrt(s.alpha[t]) + std::sqrt(abarPrev)) / denom;
    c.betaTilde = (1.0 - abarPrev) * s.beta[t] / denom;
    return c;
}

double forwardSample(double y0, double prior, int t, double eps, const DiffusionSchedule& s) {
    if (t < 1 || t > s.steps) {
        throw ConfigError("forward sample step must lie in [1, " + std::to_string(s.steps) +
                          "], got " + std::to_string(t));
    }
    double rootAbar = std::sqrt(s.alphaBar[t]);
    return rootAbar * y0 + std::sqrt(1.0 - s.alphaBar[t]) * eps + (1.0 - rootAbar) * prior;
}

}  // namespace uv::diff
