#pragma once

#include <cmath>
#include <stdexcept>
#include <string>

namespace fsm {

enum class Side { left, right };

enum class TopWallMode { fixed_temperature, fixed_flux };
enum class BottomWallMode { adiabatic, fixed_temperature };

inline std::string to_string(Side s) { return s == Side::left ? "left" : "right"; }
inline Side side_from_string(const std::string& s) {
    if (s == "left") return Side::left;
    if (s == "right") return Side::right;
    throw std::runtime_error("unknown side '" + s + "'");
}

inline std::string to_string(TopWallMode m) {
    return m == TopWallMode::fixed_temperature ? "fixed_temperature" : "fixed_flux";
}
inline TopWallMode top_mode_from_string(const std::string& s) {
    if (s == "fixed_temperature") return TopWallMode::fixed_temperature;
    if (s == "fixed_flux") return TopWallMode::fixed_flux;
    throw std::runtime_error("unknown top wall mode '" + s + "'");
}

inline std::string to_string(BottomWallMode m) {
    return m == BottomWallMode::adiabatic ? "adiabatic" : "fixed_temperature";
}
inline BottomWallMode bottom_mode_from_string(const std::string& s) {
    if (s == "adiabatic") return BottomWallMode::adiabatic;
    if (s == "fixed_temperature") return BottomWallMode::fixed_temperature;
    throw std::runtime_error("unknown bottom wall mode '" + s + "'");
}

/// One cavity case: geometry, top-wall thermal condition, injection state and
/// inlet/vent openings. Openings are y-intervals on the sidewalls; an empty
/// inlet interval means a closed (no-injection) cavity.
struct CaseSpec {
    std::string id;
    std::string dataset;     // dataset label (A..J analog), may be empty

    double length = 1.0;     // L, x extent (m)
    double height = 1.0;     // H, y extent (m)

    TopWallMode top_mode = TopWallMode::fixed_temperature;
    double t_top = 293.15;   // K, fixed-temperature mode
    double q_top = 0.0;      // W/m^2 removed through the top wall, fixed-flux mode

    BottomWallMode bottom_mode = BottomWallMode::adiabatic;
    double t_bottom = 293.15;  // K, used only when bottom_mode == fixed_temperature

    double t_inj = 293.15;   // K
    double u_inj = 0.0;      // m/s, horizontal injection speed (into the cavity)
    double p_ini = 101325.0; // Pa

    Side inlet_side = Side::left;
    double inlet_lo = 0.0;   // y-range of the inlet opening (m)
    double inlet_hi = 0.0;
    Side vent_side = Side::right;
    double vent_lo = 0.0;    // y-range of the vent opening (m)
    double vent_hi = 0.0;

    double aspect_ratio() const { return length / height; }

    bool has_injection() const { return inlet_hi > inlet_lo; }
    bool has_vent() const { return vent_hi > vent_lo; }

    void validate() const {
        if (length <= 0.0 || height <= 0.0) throw std::runtime_error("case " + id + ": L, H must be positive");
        if (t_inj <= 0.0) throw std::runtime_error("case " + id + ": T_inj must be positive");
        if (p_ini <= 0.0) throw std::runtime_error("case " + id + ": P_ini must be positive");
        if (has_injection()) {
            if (u_inj <= 0.0) throw std::runtime_error("case " + id + ": u_inj must be positive when an inlet is present");
            if (!has_vent()) throw std::runtime_error("case " + id + ": injection requires a vent");
            if (inlet_side == vent_side) throw std::runtime_error("case " + id + ": inlet and vent must sit on opposite sidewalls");
            if (inlet_lo < 0.0 || inlet_hi > height) throw std::runtime_error("case " + id + ": inlet does not fit on the sidewall");
            if (vent_lo < 0.0 || vent_hi > height) throw std::runtime_error("case " + id + ": vent does not fit on the sidewall");
        }
        if (top_mode == TopWallMode::fixed_temperature && t_top <= 0.0)
            throw std::runtime_error("case " + id + ": T_top must be positive");
        if (bottom_mode == BottomWallMode::fixed_temperature && t_bottom <= 0.0)
            throw std::runtime_error("case " + id + ": T_bottom must be positive");
    }

    // Reference temperature used for buoyancy and free-cell wall density.
    // Fixed-temperature mode pins it to the top wall; flux mode has no fixed
    // wall temperature, so callers fall back to a field mean.
    bool has_reference_wall_temperature() const { return top_mode == TopWallMode::fixed_temperature; }
};

inline double celsius_to_kelvin(double c) { return c + 273.15; }

}  // namespace fsm
