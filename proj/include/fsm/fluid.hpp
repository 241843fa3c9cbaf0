#pragma once

#include <cmath>
#include <stdexcept>

namespace fsm {

/// Dry-air property model: ideal gas density, Sutherland viscosity, constant
/// c_p and lambda. Valid for the near-ambient cavity conditions this project
/// simulates.
struct FluidProperties {
    double r_gas = 287.05;   // J/(kg K)
    double cp = 1006.0;      // J/(kg K)
    double lambda = 0.026;   // W/(m K)
    double g = 9.81;         // m/s^2
    double c_mu = 0.09;      // eddy-viscosity constant

    double density(double t, double p) const {
        if (t <= 0.0) throw std::invalid_argument("density: temperature must be positive");
        return p / (r_gas * t);
    }

    // Sutherland's law for air.
    double dynamic_viscosity(double t) const {
        constexpr double mu0 = 1.716e-5;
        constexpr double t0 = 273.15;
        constexpr double s = 110.4;
        return mu0 * std::pow(t / t0, 1.5) * (t0 + s) / (t + s);
    }

    double kinematic_viscosity(double t, double p) const {
        return dynamic_viscosity(t) / density(t, p);
    }

    double specific_heat(double) const { return cp; }
    double conductivity(double) const { return lambda; }

    double prandtl(double t) const { return cp * dynamic_viscosity(t) / lambda; }

    // Boussinesq expansion coefficient for an ideal gas.
    double beta(double t_ref) const { return 1.0 / t_ref; }
};

}  // namespace fsm
