#pragma once

#include <vector>

namespace uv::diff {

// Linear beta schedule plus the derived per-step quantities. Vectors are
// 1-indexed: index 0 is a sentinel (alphaBar[0] = 1) so that formulas written
// in terms of t and t-1 read the same as on paper.
struct DiffusionSchedule {
    int steps = 0;
    std::vector<double> beta;      // beta[1..T]
    std::vector<double> alpha;     // alpha[t] = 1 - beta[t]
    std::vector<double> alphaBar;  // alphaBar[t] = prod_{s<=t} alpha[s], alphaBar[0] = 1
};

DiffusionSchedule makeSchedule(int steps, double betaStart, double betaEnd);

// Coefficients of the reverse-step mean gamma0*y0hat + gamma1*yt + gamma2*prior
// and the posterior variance betaTilde. They satisfy g0 + g1 + g2 == 1.
struct PosteriorCoeffs {
    double g0 = 0.0;
    double g1 = 0.0;
    double g2 = 0.0;
    double betaTilde = 0.0;
};

// t must lie in [2, T]; the t == 1 reverse step is deterministic and handled
// separately by the sampler.
PosteriorCoeffs posteriorCoeffs(const DiffusionSchedule& s, int t);

// Closed-form marginal of the prior-shifted forward process:
//   y_t = sqrt(alphaBar_t) y0 + sqrt(1 - alphaBar_t) eps + (1 - sqrt(alphaBar_t)) prior
double forwardSample(double y0, double prior, int t, double eps, const DiffusionSchedule& s);

}  // namespace uv::diff
