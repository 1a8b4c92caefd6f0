#pragma once

#include <vector>

#include "ink/tensor.hpp"

namespace ink {

// Forward-process schedule: linear beta over T training steps with the derived
// alpha and cumulative-product alpha_bar sequences. The synthetic index
// t_identity stands for the identity boundary where alpha_bar = 1 exactly;
// real timesteps are 0..T-1.
struct NoiseSchedule {
    static constexpr int t_identity = -1;

    int T = 0;
    std::vector<double> beta;
    std::vector<double> alpha;
    std::vector<double> alpha_bar;

    static NoiseSchedule linear(int T, double beta_start = 1e-4, double beta_end = 0.02);

    double alpha_bar_at(int t) const;
};

// q-sample: sqrt(alpha_bar_t)·z0 + sqrt(1−alpha_bar_t)·eps. At t_identity this
// returns z0 unchanged.
Tensor add_noise(const Tensor& z0, int t, const Tensor& eps, const NoiseSchedule& sched);

}  // namespace ink
