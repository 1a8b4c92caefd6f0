#include "ink/schedule.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "ink/common.hpp"

namespace ink {

NoiseSchedule NoiseSchedule::linear(int T, double beta_start, double beta_end) {
    if (T < 1) throw DataError("NoiseSchedule: T must be at least 1");
    if (!(beta_start > 0.0) || !(beta_end < 1.0) || !(beta_start <= beta_end))
        throw DataError("NoiseSchedule: need 0 < beta_start <= beta_end < 1");
    NoiseSchedule s;
    s.T = T;
    s.beta.resize(static_cast<size_t>(T));
    s.alpha.resize(static_cast<size_t>(T));
    s.alpha_bar.resize(static_cast<size_t>(T));
    double prod = 1.0;
    for (int t = 0; t < T; ++t) {
        double b = T == 1 ? beta_start
                          : beta_start + (beta_end - beta_start) * t / static_cast<double>(T - 1);
        s.beta[static_cast<size_t>(t)] = b;
        s.alpha[static_cast<size_t>(t)] = 1.0 - b;
        prod *= 1.0 - b;
        s.alpha_bar[static_cast<size_t>(t)] = prod;
    }
    return s;
}

double NoiseSchedule::alpha_bar_at(int t) const {
    if (t == t_identity) return 1.0;
    if (t < 0 || t >= T)
        throw DataError("alpha_bar_at: timestep " + std::to_string(t) + " outside [0," +
                        std::to_string(T) + ")");
    return alpha_bar[static_cast<size_t>(t)];
}

Tensor add_noise(const Tensor& z0, int t, const Tensor& eps, const NoiseSchedule& sched) {
    if (!z0.same_shape(eps))
        throw DataError("add_noise: noise " + eps.shape_str() + " does not match latent " +
                        z0.shape_str());
    if (t == NoiseSchedule::t_identity) return z0;
    double ab = sched.alpha_bar_at(t);
    double a = std::sqrt(ab), b = std::sqrt(1.0 - ab);
    Tensor out = z0;
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] = a * out.data[i] + b * eps.data[i];
    return out;
}

}  // namespace ink
