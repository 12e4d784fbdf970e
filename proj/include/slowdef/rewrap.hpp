#pragma once

#include <cmath>
#include <string>

#include "slowdef/errors.hpp"
#include "slowdef/raster.hpp"

namespace slowdef {

/// Re-wrapping parameters: integer wrap gain, boundary shift, radar wavelength.
struct WrapParams {
    int mu = 1;                        // wrap gain, >= 1
    double tau = 0.0;                  // boundary shift, reduced into [0, 2*pi)
    double wavelength_m = 0.0554658;   // C-band default; one fringe = lambda/2

    void check() const {
        if (mu < 1) throw DomainError("WrapParams: mu must be a positive integer");
        if (!(wavelength_m > 0.0)) throw DomainError("WrapParams: wavelength_m must be positive");
    }
};

/// Reduces x into the canonical wrapped range [-pi, pi).
inline double wrap_to_pi(double x) {
    double w = x - 2.0 * M_PI * std::floor((x + M_PI) / (2.0 * M_PI));
    // floor rounding can land exactly on +pi; fold it back.
    if (w >= M_PI) w -= 2.0 * M_PI;
    if (w < -M_PI) w += 2.0 * M_PI;
    return w;
}

/// psi' = mu * psi mod 2*pi, reduced into [-pi, pi). Mask is preserved.
/// Multiplying before wrapping multiplies the fringe count by mu.
inline PhaseGrid wrap_gain(const PhaseGrid& unwrapped, int mu) {
    if (mu < 1) throw DomainError("wrap_gain: mu must be a positive integer (got " +
                                  std::to_string(mu) + ")");
    PhaseGrid out = unwrapped;
    for (size_t i = 0; i < out.size(); ++i)
        out.values[i] = out.mask[i] ? wrap_to_pi(static_cast<double>(mu) * unwrapped.values[i]) : 0.0;
    return out;
}

/// psi' = (psi + tau) mod 2*pi, reduced into [-pi, pi). tau may be any real.
inline PhaseGrid wrap_shift(const PhaseGrid& unwrapped, double tau) {
    PhaseGrid out = unwrapped;
    for (size_t i = 0; i < out.size(); ++i)
        out.values[i] = out.mask[i] ? wrap_to_pi(unwrapped.values[i] + tau) : 0.0;
    return out;
}

/// Unwrapped phase from line-of-sight displacement: psi = -4*pi/lambda * d.
inline PhaseGrid displacement_to_phase(const PhaseGrid& disp, double wavelength_m) {
    if (!(wavelength_m > 0.0))
        throw DomainError("displacement_to_phase: wavelength must be positive");
    PhaseGrid out = disp;
    const double k = -4.0 * M_PI / wavelength_m;
    for (size_t i = 0; i < out.size(); ++i)
        out.values[i] = out.mask[i] ? k * disp.values[i] : 0.0;
    return out;
}

/// Displacement (meters) -> wrapped phase: gain mu is applied first, then the
/// boundary shift tau, and the sum is reduced into [-pi, pi).
inline PhaseGrid displacement_to_wrapped(const PhaseGrid& disp, const WrapParams& params) {
    params.check();
    PhaseGrid out = disp;
    const double k = -4.0 * M_PI / params.wavelength_m;
    for (size_t i = 0; i < out.size(); ++i) {
        if (!out.mask[i]) {
            out.values[i] = 0.0;
            continue;
        }
        const double psi = k * disp.values[i];
        out.values[i] = wrap_to_pi(static_cast<double>(params.mu) * psi + params.tau);
    }
    return out;
}

}  // namespace slowdef
