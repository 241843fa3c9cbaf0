#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <limits>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "fsm/case_spec.hpp"
#include "fsm/fluid.hpp"
#include "fsm/grid.hpp"
#include "fsm/parallel.hpp"
#include "fsm/snapshot.hpp"

namespace fsm {

enum class TurbulenceModel { laminar, wall_function, low_re };

inline std::string to_string(TurbulenceModel m) {
    switch (m) {
        case TurbulenceModel::laminar: return "laminar";
        case TurbulenceModel::wall_function: return "wall_function";
        case TurbulenceModel::low_re: return "low_re";
    }
    return "?";
}

/// Numerical controls for one steady solve. The closure mode selects the
/// fidelity level: wall_function pairs with coarse meshes, low_re with the
/// refined mesh; laminar is for analytic sanity configurations.
struct SolverConfig {
    TurbulenceModel turbulence = TurbulenceModel::wall_function;
    std::string fidelity = "low";  // tag written into the snapshot
    double tolerance = 1e-5;       // normalized residual target
    int max_outer_iterations = 30000;
    double relax_uv = 0.75;
    double relax_p = 0.4;
    double relax_t = 0.9;
    double relax_ke = 0.65;
    double relax_mut = 0.6;
    bool boussinesq = true;
    double k_min = 1e-12;
    double eps_min = 1e-8;
    int pressure_cycles = 8;  // line-relaxation cycles for the correction
    int scalar_cycles = 1;    // line-relaxation cycles per transport solve
    // Pseudo-transient continuation: implicit pseudo time steps, each held
    // for a block of sub-iterations, damp unsteady modes (plume flapping)
    // that a plain steady iteration would track forever. The step grows as
    // the residual falls and the scheme reduces to the steady one.
    bool pseudo_transient = true;
    double ptc_cfl0 = 30.0;
    int ptc_subiters = 30;   // sub-iterations per pseudo time step

    void validate() const {
        if (tolerance <= 0.0) throw std::runtime_error("solver config: tolerance must be > 0");
        for (double r : {relax_uv, relax_p, relax_t, relax_ke, relax_mut})
            if (r <= 0.0 || r > 1.0) throw std::runtime_error("solver config: relaxation factors must be in (0, 1]");
        if (k_min <= 0.0 || eps_min <= 0.0) throw std::runtime_error("solver config: turbulence floors must be > 0");
        if (max_outer_iterations < 1) throw std::runtime_error("solver config: max iterations must be >= 1");
        if (pressure_cycles < 1 || scalar_cycles < 1)
            throw std::runtime_error("solver config: relaxation cycles must be >= 1");
        if (ptc_cfl0 <= 0.0) throw std::runtime_error("solver config: ptc_cfl0 must be > 0");
        if (ptc_subiters < 1) throw std::runtime_error("solver config: ptc_subiters must be >= 1");
    }
};

struct SolveStats {
    int iterations = 0;
    bool converged = false;
    double resid_u = 0, resid_v = 0, resid_mass = 0, resid_t = 0, resid_k = 0, resid_eps = 0;
    double max_cell_mass_imbalance = 0;  // kg/s, raw
    double heat_in = 0, heat_out_vent = 0, heat_out_top = 0, heat_out_bottom = 0;  // W per meter depth
    double energy_balance_error = 0;  // relative
};

namespace detail {

enum class BFace { wall, inlet, vent };

struct SideBc {
    std::vector<BFace> type;   // per row j
    std::vector<double> frac;  // open fraction of the face for inlet/vent
};

inline SideBc classify_side(const CaseSpec& c, Side side, const StructuredGrid2D& g) {
    SideBc bc;
    bc.type.assign(g.ny(), BFace::wall);
    bc.frac.assign(g.ny(), 0.0);
    if (!c.has_injection()) return bc;
    for (int j = 0; j < g.ny(); ++j) {
        Interval face{j * g.dy(), (j + 1) * g.dy()};
        if (c.inlet_side == side) {
            double ov = overlap(face, {c.inlet_lo, c.inlet_hi}) / g.dy();
            if (ov > 0.0) {
                bc.type[j] = BFace::inlet;
                bc.frac[j] = ov;
                continue;
            }
        }
        if (c.vent_side == side) {
            double ov = overlap(face, {c.vent_lo, c.vent_hi}) / g.dy();
            if (ov > 0.0) {
                bc.type[j] = BFace::vent;
                bc.frac[j] = ov;
            }
        }
    }
    return bc;
}

}  // namespace detail

/// Steady 2-D incompressible finite-volume solver: SIMPLE pressure-velocity
/// coupling on a collocated grid with momentum interpolation, first-order
/// upwind convection, central diffusion, Boussinesq buoyancy, and a standard
/// k-eps closure (log-law wall functions or low-Re damping near walls).
class SimpleSolver {
public:
    SimpleSolver(const CaseSpec& c, const StructuredGrid2D& g, const SolverConfig& cfg,
                 const FluidProperties& props = FluidProperties{})
        : case_(c), grid_(g), cfg_(cfg), props_(props) {
        cfg_.validate();
        c.validate();
        nx_ = g.nx();
        ny_ = g.ny();
        n_ = nx_ * ny_;
        dx_ = g.dx();
        dy_ = g.dy();
        vol_ = dx_ * dy_;
        left_ = detail::classify_side(c, Side::left, g);
        right_ = detail::classify_side(c, Side::right, g);

        // Reference state for the Boussinesq model.
        if (c.top_mode == TopWallMode::fixed_temperature)
            t_ref_ = c.has_injection() ? 0.5 * (c.t_inj + c.t_top) : 0.5 * (c.t_top + c.t_bottom);
        else
            t_ref_ = c.t_inj;
        rho_ = props_.density(t_ref_, c.p_ini);
        mu_ = props_.dynamic_viscosity(t_ref_);
        beta_ = props_.beta(t_ref_);

        // Fixed boundary mass fluxes; the vent speed balances the inlet exactly.
        double a_in = 0.0, a_vent = 0.0;
        for (int j = 0; j < ny_; ++j) {
            if (left_.type[j] == detail::BFace::inlet) a_in += left_.frac[j] * dy_;
            if (right_.type[j] == detail::BFace::inlet) a_in += right_.frac[j] * dy_;
            if (left_.type[j] == detail::BFace::vent) a_vent += left_.frac[j] * dy_;
            if (right_.type[j] == detail::BFace::vent) a_vent += right_.frac[j] * dy_;
        }
        u_vent_ = (a_vent > 0.0) ? c.u_inj * a_in / a_vent : 0.0;

        if (c.has_injection()) {
            const double intensity = 0.05;
            k_in_ = std::max(1.5 * (intensity * c.u_inj) * (intensity * c.u_inj), cfg_.k_min);
            const double mix_len = 0.07 * (c.inlet_hi - c.inlet_lo);
            eps_in_ = std::max(std::pow(props_.c_mu, 0.75) * std::pow(k_in_, 1.5) / mix_len, cfg_.eps_min);
        } else {
            k_in_ = cfg_.k_min;
            eps_in_ = cfg_.eps_min;
        }
        a_in_ = a_in;
        compute_residual_scales();
    }

    FieldSnapshot solve(const FieldSnapshot* init, SolveStats* stats_out) {
        allocate();
        initialize(init);
        set_boundary_mass_fluxes();

        SolveStats st;
        bool converged = false;
        double ptc_inv_dt0 = 0.0, ptc_best = -1.0;
        if (cfg_.pseudo_transient && u_scale_ > 1e-9)
            ptc_inv_dt0 = u_scale_ / (cfg_.ptc_cfl0 * std::min(dx_, dy_));
        ptc_inv_dt_ = ptc_inv_dt0;
        anchor_time_fields();
        int it = 0;
        for (it = 1; it <= cfg_.max_outer_iterations; ++it) {
            update_viscosity();
            const double ru = solve_momentum_u();
            const double rv = solve_momentum_v();
            update_face_fluxes();
            const double rm = solve_pressure_correction();
            const double rt = solve_temperature();
            double rk = 0.0, re = 0.0;
            if (cfg_.turbulence != TurbulenceModel::laminar) {
                rk = solve_k();
                re = solve_eps();
            }
            check_physical(it);

            st.resid_u = ru / scale_mom_;
            st.resid_v = rv / scale_mom_;
            st.resid_mass = rm / scale_mass_;
            st.resid_t = rt / scale_heat_;
            st.resid_k = rk;
            st.resid_eps = re;
            const double worst = std::max({st.resid_u, st.resid_v, st.resid_mass, st.resid_t, st.resid_k, st.resid_eps});
            if (ptc_inv_dt0 > 0.0 && it % cfg_.ptc_subiters == 0) {
                // Step boundary: advance pseudo time and adapt the step in
                // switched-evolution fashion. The ramp follows the transport
                // residuals only: the mass residual also reflects the anchor
                // shift itself, which fades exactly as the step grows.
                const double worst_tr = std::max({st.resid_u, st.resid_v, st.resid_t, st.resid_k, st.resid_eps});
                if (ptc_best < 0.0 || worst_tr < ptc_best) {
                    ptc_best = worst_tr;
                    ptc_inv_dt_ /= 1.6;
                } else if (worst_tr > 4.0 * ptc_best) {
                    ptc_inv_dt_ = std::min(2.0 * ptc_inv_dt_, ptc_inv_dt0);
                }
                anchor_time_fields();
            }
            if (trace_enabled() && it % 200 == 0)
                std::fprintf(stderr, "[solve %s %dx%d] it=%d u=%.2e v=%.2e m=%.2e T=%.2e k=%.2e e=%.2e\n",
                             case_.id.c_str(), nx_, ny_, it, st.resid_u, st.resid_v, st.resid_mass, st.resid_t,
                             st.resid_k, st.resid_eps);
            if (!std::isfinite(worst))
                throw std::runtime_error("solver diverged for case " + case_.id + ": non-finite residuals at iteration " +
                                         std::to_string(it));
            if (it > 5 && worst < cfg_.tolerance) {
                converged = true;
                break;
            }
        }
        st.iterations = std::min(it, cfg_.max_outer_iterations);
        st.converged = converged;
        if (!converged) {
            throw std::runtime_error(
                "solver did not converge for case " + case_.id + " on " + std::to_string(nx_) + "x" +
                std::to_string(ny_) + " after " + std::to_string(cfg_.max_outer_iterations) +
                " iterations; residuals u=" + format_double(st.resid_u) + " v=" + format_double(st.resid_v) +
                " mass=" + format_double(st.resid_mass) + " T=" + format_double(st.resid_t) +
                " k=" + format_double(st.resid_k) + " eps=" + format_double(st.resid_eps));
        }

        finalize_stats(st);
        if (stats_out) *stats_out = st;

        FieldSnapshot out;
        out.case_spec = case_;
        out.grid = grid_;
        out.mesh_size = std::max(dx_, dy_);
        out.fidelity = cfg_.fidelity;
        out.u = u_;
        out.v = v_;
        out.t = t_;
        out.p.assign(n_, 0.0);
        double pmean = 0.0;
        for (double pv : p_) pmean += pv;
        pmean /= n_;
        for (int c = 0; c < n_; ++c) out.p[c] = case_.p_ini + (p_[c] - pmean);
        out.k = k_;
        out.eps = eps_;
        out.validate();
        return out;
    }

private:
    // Case-derived residual normalizers, independent of iteration history so
    // warm-started solves use the same convergence measure as cold ones.
    void compute_residual_scales() {
        double dt_char = 0.1;
        if (case_.top_mode == TopWallMode::fixed_temperature) {
            if (case_.has_injection()) dt_char = std::max(dt_char, std::abs(case_.t_inj - case_.t_top));
            if (case_.bottom_mode == BottomWallMode::fixed_temperature)
                dt_char = std::max(dt_char, std::abs(case_.t_bottom - case_.t_top));
        }
        double u_ref = std::max(case_.u_inj, 1e-6);
        if (cfg_.boussinesq) u_ref = std::max(u_ref, std::sqrt(props_.g * beta_ * dt_char * case_.height));
        u_scale_ = u_ref;
        const double a_ref = a_in_ > 0.0 ? a_in_ : case_.height;
        const double mdot = rho_ * u_ref * a_ref;
        if (case_.top_mode == TopWallMode::fixed_flux)
            dt_char = std::max(dt_char, std::abs(case_.q_top) * case_.length / (mdot * props_.cp));
        scale_mom_ = mdot * u_ref;
        scale_mass_ = mdot;
        scale_heat_ = std::max(mdot * props_.cp * dt_char,
                               props_.lambda * dt_char / case_.height * case_.length);
    }

    void anchor_time_fields() {
        u_tm_ = u_;
        v_tm_ = v_;
        t_tm_ = t_;
        k_tm_ = k_;
        e_tm_ = eps_;
    }

    static bool trace_enabled() {
        static const bool on = std::getenv("FSM_SOLVER_TRACE") != nullptr;
        return on;
    }

    int idx(int i, int j) const { return j * nx_ + i; }
    int fx(int i, int j) const { return j * (nx_ + 1) + i; }  // x-face i in [0,nx]
    int fy(int i, int j) const { return j * nx_ + i; }        // y-face j in [0,ny]

    void allocate() {
        u_.assign(n_, 0.0);
        v_.assign(n_, 0.0);
        p_.assign(n_, 0.0);
        t_.assign(n_, 0.0);
        k_.assign(n_, cfg_.k_min);
        eps_.assign(n_, cfg_.eps_min);
        mut_.assign(n_, 0.0);
        ap_u_.assign(n_, 1.0);
        ap_v_.assign(n_, 1.0);
        fx_.assign((nx_ + 1) * ny_, 0.0);
        fyv_.assign(nx_ * (ny_ + 1), 0.0);
        aP_.assign(n_, 0.0);
        aE_.assign(n_, 0.0);
        aW_.assign(n_, 0.0);
        aN_.assign(n_, 0.0);
        aS_.assign(n_, 0.0);
        b_.assign(n_, 0.0);
        pc_.assign(n_, 0.0);
        eps_fixed_.assign(n_, 0);
    }

    void initialize(const FieldSnapshot* init) {
        double t0;
        if (case_.has_injection())
            t0 = case_.t_inj;
        else if (case_.bottom_mode == BottomWallMode::fixed_temperature)
            t0 = 0.5 * (case_.t_top + case_.t_bottom);
        else
            t0 = (case_.top_mode == TopWallMode::fixed_temperature) ? case_.t_top : case_.t_inj;
        std::fill(t_.begin(), t_.end(), t0);
        if (cfg_.turbulence != TurbulenceModel::laminar) {
            std::fill(k_.begin(), k_.end(), k_in_);
            std::fill(eps_.begin(), eps_.end(), eps_in_);
        }
        if (init) {
            if (init->grid.cell_count() == n_ && init->grid.same_shape(grid_)) {
                u_ = init->u;
                v_ = init->v;
                t_ = init->t;
                k_ = init->k;
                eps_ = init->eps;
            } else {
                prolong_field(*init, init->u, u_);
                prolong_field(*init, init->v, v_);
                prolong_field(*init, init->t, t_);
                prolong_field(*init, init->k, k_);
                prolong_field(*init, init->eps, eps_);
            }
            for (int c = 0; c < n_; ++c) {
                k_[c] = std::max(k_[c], cfg_.k_min);
                eps_[c] = std::max(eps_[c], cfg_.eps_min);
            }
        }
    }

    // Bilinear interpolation of cell-centered source data onto this grid.
    void prolong_field(const FieldSnapshot& src, const std::vector<double>& f, std::vector<double>& out) const {
        const StructuredGrid2D& sg = src.grid;
        for (int j = 0; j < ny_; ++j) {
            for (int i = 0; i < nx_; ++i) {
                const double x = grid_.x_center(i), y = grid_.y_center(j);
                double gx = x / sg.dx() - 0.5, gy = y / sg.dy() - 0.5;
                int i0 = static_cast<int>(std::floor(gx)), j0 = static_cast<int>(std::floor(gy));
                double wx = gx - i0, wy = gy - j0;
                i0 = std::clamp(i0, 0, sg.nx() - 1);
                j0 = std::clamp(j0, 0, sg.ny() - 1);
                const int i1 = std::min(i0 + 1, sg.nx() - 1), j1 = std::min(j0 + 1, sg.ny() - 1);
                wx = std::clamp(wx, 0.0, 1.0);
                wy = std::clamp(wy, 0.0, 1.0);
                out[idx(i, j)] = (1 - wx) * (1 - wy) * f[sg.index(i0, j0)] + wx * (1 - wy) * f[sg.index(i1, j0)] +
                                 (1 - wx) * wy * f[sg.index(i0, j1)] + wx * wy * f[sg.index(i1, j1)];
            }
        }
    }

    void set_boundary_mass_fluxes() {
        for (int j = 0; j < ny_; ++j) {
            // left boundary face of column 0: positive flux = +x (into domain)
            switch (left_.type[j]) {
                case detail::BFace::inlet: fx_[fx(0, j)] = rho_ * case_.u_inj * dy_ * left_.frac[j]; break;
                case detail::BFace::vent: fx_[fx(0, j)] = -rho_ * u_vent_ * dy_ * left_.frac[j]; break;
                case detail::BFace::wall: fx_[fx(0, j)] = 0.0; break;
            }
            switch (right_.type[j]) {
                case detail::BFace::inlet: fx_[fx(nx_, j)] = -rho_ * case_.u_inj * dy_ * right_.frac[j]; break;
                case detail::BFace::vent: fx_[fx(nx_, j)] = rho_ * u_vent_ * dy_ * right_.frac[j]; break;
                case detail::BFace::wall: fx_[fx(nx_, j)] = 0.0; break;
            }
        }
        for (int i = 0; i < nx_; ++i) {
            fyv_[fy(i, 0)] = 0.0;
            fyv_[fy(i, ny_)] = 0.0;
        }
    }

    void update_viscosity() {
        if (cfg_.turbulence == TurbulenceModel::laminar) {
            std::fill(mut_.begin(), mut_.end(), 0.0);
            return;
        }
        const double nu = mu_ / rho_;
        for (int c = 0; c < n_; ++c) {
            const double kk = std::max(k_[c], cfg_.k_min);
            const double ee = std::max(eps_[c], cfg_.eps_min);
            double fmu = 1.0;
            if (cfg_.turbulence == TurbulenceModel::low_re) {
                const double ret = kk * kk / (nu * ee);
                const double den = 1.0 + ret / 50.0;
                fmu = std::exp(-3.4 / (den * den));
            }
            double target = fmu * props_.c_mu * rho_ * kk * kk / ee;
            target = std::min(target, 2.0e4 * mu_);
            mut_[c] = (1.0 - cfg_.relax_mut) * mut_[c] + cfg_.relax_mut * target;
        }
    }

    double mu_eff(int c) const { return mu_ + mut_[c]; }
    double mu_face_x(int i, int j) const {  // face between (i-1,j) and (i,j), interior only
        return mu_ + 0.5 * (mut_[idx(i - 1, j)] + mut_[idx(i, j)]);
    }
    double mu_face_y(int i, int j) const { return mu_ + 0.5 * (mut_[idx(i, j - 1)] + mut_[idx(i, j)]); }

    // Wall-shear coefficient per unit area (tau_w = coeff * u_tangential).
    double wall_mom_coeff(int c, double y_p) const {
        if (cfg_.turbulence == TurbulenceModel::wall_function) {
            const double ustar = std::pow(props_.c_mu, 0.25) * std::sqrt(std::max(k_[c], cfg_.k_min));
            const double ystar = rho_ * ustar * y_p / mu_;
            if (ystar > 11.25) return rho_ * kappa_ * ustar / std::log(e_wall_ * ystar);
        }
        return mu_ / y_p;
    }

    // Wall heat-transfer coefficient per unit area (q_w = coeff * (T_P - T_w)).
    double wall_heat_coeff(int c, double y_p) const {
        if (cfg_.turbulence == TurbulenceModel::wall_function) {
            const double ustar = std::pow(props_.c_mu, 0.25) * std::sqrt(std::max(k_[c], cfg_.k_min));
            const double ystar = rho_ * ustar * y_p / mu_;
            if (ystar > 11.25) {
                const double uplus = std::log(e_wall_ * ystar) / kappa_;
                const double tplus = pr_t_ * uplus;
                return rho_ * props_.cp * ustar / tplus;
            }
        }
        return props_.lambda / y_p;
    }

    void clear_coeffs() {
        std::fill(aP_.begin(), aP_.end(), 0.0);
        std::fill(aE_.begin(), aE_.end(), 0.0);
        std::fill(aW_.begin(), aW_.end(), 0.0);
        std::fill(aN_.begin(), aN_.end(), 0.0);
        std::fill(aS_.begin(), aS_.end(), 0.0);
        std::fill(b_.begin(), b_.end(), 0.0);
    }

    // Continuity-subtracted upwind convection + central diffusion for one
    // face: only inflow faces couple, which keeps the matrix diagonally
    // dominant even while the flux field is not yet mass-conserving. F is the
    // outward mass flux, a_nb the coefficient slot of the neighbour.
    static void add_interior_face(double F, double D, double& aP, double& a_nb) {
        const double a = std::max(-F, 0.0) + D;
        aP += a;
        a_nb += a;
    }

    // Boundary face with Dirichlet value phi_bc: outward flux F, diffusion D.
    void add_boundary_face(int c, double F, double D, double phi_bc) {
        const double a = std::max(-F, 0.0) + D;
        aP_[c] += a;
        b_[c] += a * phi_bc;
    }

    double face_pressure_x(int i, int j) const {  // pressure at x-face i of row j
        if (i == 0) return nx_ > 1 ? 1.5 * p_[idx(0, j)] - 0.5 * p_[idx(1, j)] : p_[idx(0, j)];
        if (i == nx_) return nx_ > 1 ? 1.5 * p_[idx(nx_ - 1, j)] - 0.5 * p_[idx(nx_ - 2, j)] : p_[idx(nx_ - 1, j)];
        return 0.5 * (p_[idx(i - 1, j)] + p_[idx(i, j)]);
    }
    double face_pressure_y(int i, int j) const {
        if (j == 0) return ny_ > 1 ? 1.5 * p_[idx(i, 0)] - 0.5 * p_[idx(i, 1)] : p_[idx(i, 0)];
        if (j == ny_) return ny_ > 1 ? 1.5 * p_[idx(i, ny_ - 1)] - 0.5 * p_[idx(i, ny_ - 2)] : p_[idx(i, ny_ - 1)];
        return 0.5 * (p_[idx(i, j - 1)] + p_[idx(i, j)]);
    }
    double grad_p_x(int i, int j) const { return (face_pressure_x(i + 1, j) - face_pressure_x(i, j)) / dx_; }
    double grad_p_y(int i, int j) const { return (face_pressure_y(i, j + 1) - face_pressure_y(i, j)) / dy_; }

    double solve_momentum_u() { return solve_momentum(true); }
    double solve_momentum_v() { return solve_momentum(false); }

    double solve_momentum(bool is_u) {
        clear_coeffs();
        std::vector<double>& phi = is_u ? u_ : v_;
        const double ptc = ptc_inv_dt_ * rho_ * vol_;
        for (int j = 0; j < ny_; ++j) {
            for (int i = 0; i < nx_; ++i) {
                const int c = idx(i, j);
                // interior faces
                if (i > 0) add_interior_face(-fx_[fx(i, j)], mu_face_x(i, j) * dy_ / dx_, aP_[c], aW_[c]);
                if (i < nx_ - 1) add_interior_face(fx_[fx(i + 1, j)], mu_face_x(i + 1, j) * dy_ / dx_, aP_[c], aE_[c]);
                if (j > 0) add_interior_face(-fyv_[fy(i, j)], mu_face_y(i, j) * dx_ / dy_, aP_[c], aS_[c]);
                if (j < ny_ - 1) add_interior_face(fyv_[fy(i, j + 1)], mu_face_y(i, j + 1) * dx_ / dy_, aP_[c], aN_[c]);

                // boundary faces
                if (i == 0) boundary_momentum_x(c, j, left_, -fx_[fx(0, j)], is_u, Side::left);
                if (i == nx_ - 1) boundary_momentum_x(c, j, right_, fx_[fx(nx_, j)], is_u, Side::right);
                if (j == 0) boundary_momentum_y(c, i, j, is_u, /*bottom=*/true);
                if (j == ny_ - 1) boundary_momentum_y(c, i, j, is_u, /*bottom=*/false);

                // pressure gradient and buoyancy
                b_[c] -= (is_u ? grad_p_x(i, j) : grad_p_y(i, j)) * vol_;
                if (!is_u && cfg_.boussinesq) b_[c] += rho_ * beta_ * props_.g * (t_[c] - t_ref_) * vol_;

                aP_[c] += ptc;
                b_[c] += ptc * (is_u ? u_tm_[c] : v_tm_[c]);

                // implicit under-relaxation
                aP_[c] /= cfg_.relax_uv;
                b_[c] += (1.0 - cfg_.relax_uv) * aP_[c] * phi[c];
            }
        }
        std::vector<double>& ap_store = is_u ? ap_u_ : ap_v_;
        ap_store = aP_;
        const double res = residual(phi, is_u ? &u_tm_ : &v_tm_, ptc_inv_dt_ * rho_ * vol_);
        adi_sweep(phi, cfg_.scalar_cycles);
        return res;
    }

    // Vertical boundary (left/right) contribution for momentum; F_out is the
    // outward mass flux through the face.
    void boundary_momentum_x(int c, int j, const detail::SideBc& bc, double F_out, bool is_u, Side side) {
        const double area = dy_;
        const double delta = 0.5 * dx_;
        switch (bc.type[j]) {
            case detail::BFace::wall: {
                if (is_u) {
                    // wall-normal component: laminar diffusion to zero at wall
                    aP_[c] += mu_ / delta * area;
                } else {
                    // tangential: wall shear (log-law or viscous)
                    aP_[c] += wall_mom_coeff(c, delta) * area;
                }
                break;
            }
            case detail::BFace::inlet: {
                const double u_bc = is_u ? (side == Side::left ? case_.u_inj : -case_.u_inj) : 0.0;
                const double D = mu_eff(c) / delta * area * bc.frac[j];
                add_boundary_face(c, F_out, D, u_bc);
                // the closed part of a partially open face acts as wall
                if (bc.frac[j] < 1.0) {
                    const double wall_area = area * (1.0 - bc.frac[j]);
                    aP_[c] += (is_u ? mu_ / delta : wall_mom_coeff(c, delta)) * wall_area;
                }
                break;
            }
            case detail::BFace::vent: {
                // fixed outflow: material leaves at the cell value, so the
                // continuity-subtracted convection term vanishes
                if (bc.frac[j] < 1.0) {
                    const double wall_area = area * (1.0 - bc.frac[j]);
                    aP_[c] += (is_u ? mu_ / delta : wall_mom_coeff(c, delta)) * wall_area;
                }
                break;
            }
        }
    }

    // Horizontal boundary (bottom/top): always solid walls.
    void boundary_momentum_y(int c, int /*i*/, int /*j*/, bool is_u, bool /*bottom*/) {
        const double area = dx_;
        const double delta = 0.5 * dy_;
        if (is_u)
            aP_[c] += wall_mom_coeff(c, delta) * area;  // tangential
        else
            aP_[c] += mu_ / delta * area;  // normal
    }

    // Rhie-Chow interpolation for interior face mass fluxes.
    void update_face_fluxes() {
        for (int j = 0; j < ny_; ++j) {
            for (int i = 1; i < nx_; ++i) {
                const int cw = idx(i - 1, j), ce = idx(i, j);
                const double dw = vol_ / ap_u_[cw], de = vol_ / ap_u_[ce];
                const double df = 0.5 * (dw + de);
                const double ubar = 0.5 * (u_[cw] + u_[ce]);
                const double gp = 0.5 * (dw * grad_p_x(i - 1, j) + de * grad_p_x(i, j));
                const double uf = ubar + gp - df * (p_[ce] - p_[cw]) / dx_;
                fx_[fx(i, j)] = rho_ * uf * dy_;
            }
        }
        for (int i = 0; i < nx_; ++i) {
            for (int j = 1; j < ny_; ++j) {
                const int cs = idx(i, j - 1), cn = idx(i, j);
                const double ds = vol_ / ap_v_[cs], dn = vol_ / ap_v_[cn];
                const double df = 0.5 * (ds + dn);
                const double vbar = 0.5 * (v_[cs] + v_[cn]);
                const double gp = 0.5 * (ds * grad_p_y(i, j - 1) + dn * grad_p_y(i, j));
                const double vf = vbar + gp - df * (p_[cn] - p_[cs]) / dy_;
                fyv_[fy(i, j)] = rho_ * vf * dx_;
            }
        }
    }

    double cell_mass_imbalance(int i, int j) const {
        return fx_[fx(i + 1, j)] - fx_[fx(i, j)] + fyv_[fy(i, j + 1)] - fyv_[fy(i, j)];
    }

    double solve_pressure_correction() {
        clear_coeffs();
        double mass_residual = 0.0;
        for (int j = 0; j < ny_; ++j) {
            for (int i = 0; i < nx_; ++i) {
                const int c = idx(i, j);
                if (i > 0) {
                    const double d = 0.5 * (vol_ / ap_u_[idx(i - 1, j)] + vol_ / ap_u_[c]);
                    const double coef = rho_ * d * dy_ / dx_;
                    aW_[c] += coef;
                    aP_[c] += coef;
                }
                if (i < nx_ - 1) {
                    const double d = 0.5 * (vol_ / ap_u_[c] + vol_ / ap_u_[idx(i + 1, j)]);
                    const double coef = rho_ * d * dy_ / dx_;
                    aE_[c] += coef;
                    aP_[c] += coef;
                }
                if (j > 0) {
                    const double d = 0.5 * (vol_ / ap_v_[idx(i, j - 1)] + vol_ / ap_v_[c]);
                    const double coef = rho_ * d * dx_ / dy_;
                    aS_[c] += coef;
                    aP_[c] += coef;
                }
                if (j < ny_ - 1) {
                    const double d = 0.5 * (vol_ / ap_v_[c] + vol_ / ap_v_[idx(i, j + 1)]);
                    const double coef = rho_ * d * dx_ / dy_;
                    aN_[c] += coef;
                    aP_[c] += coef;
                }
                const double imb = cell_mass_imbalance(i, j);
                b_[c] = -imb;
                mass_residual += std::abs(imb);
            }
        }
        // line relaxation on the correction; the pure-Neumann system is
        // singular, so the mean is subtracted afterwards.
        std::fill(pc_.begin(), pc_.end(), 0.0);
        adi_sweep(pc_, cfg_.pressure_cycles);
        double mean_pc = 0.0;
        for (double x : pc_) mean_pc += x;
        mean_pc /= n_;
        for (double& x : pc_) x -= mean_pc;

        // corrections
        for (int j = 0; j < ny_; ++j) {
            for (int i = 0; i < nx_; ++i) {
                const int c = idx(i, j);
                p_[c] += cfg_.relax_p * pc_[c];
                const double pw = (i > 0) ? pc_[c - 1] : pc_[c];
                const double pe = (i < nx_ - 1) ? pc_[c + 1] : pc_[c];
                const double ps = (j > 0) ? pc_[c - nx_] : pc_[c];
                const double pn = (j < ny_ - 1) ? pc_[c + nx_] : pc_[c];
                u_[c] -= vol_ / ap_u_[c] * (pe - pw) / (2.0 * dx_) * ((i > 0 && i < nx_ - 1) ? 1.0 : 2.0);
                v_[c] -= vol_ / ap_v_[c] * (pn - ps) / (2.0 * dy_) * ((j > 0 && j < ny_ - 1) ? 1.0 : 2.0);
            }
        }
        for (int j = 0; j < ny_; ++j) {
            for (int i = 1; i < nx_; ++i) {
                const int cw = idx(i - 1, j), ce = idx(i, j);
                const double d = 0.5 * (vol_ / ap_u_[cw] + vol_ / ap_u_[ce]);
                fx_[fx(i, j)] += rho_ * d * dy_ / dx_ * (pc_[cw] - pc_[ce]);
            }
        }
        for (int i = 0; i < nx_; ++i) {
            for (int j = 1; j < ny_; ++j) {
                const int cs = idx(i, j - 1), cn = idx(i, j);
                const double d = 0.5 * (vol_ / ap_v_[cs] + vol_ / ap_v_[cn]);
                fyv_[fy(i, j)] += rho_ * d * dx_ / dy_ * (pc_[cs] - pc_[cn]);
            }
        }
        // keep the pressure level pinned
        double pmean = 0.0;
        for (double x : p_) pmean += x;
        pmean /= n_;
        for (double& x : p_) x -= pmean;
        return mass_residual;
    }

    double lambda_eff(int c) const { return props_.lambda + props_.cp * mut_[c] / pr_t_; }
    double lambda_face_x(int i, int j) const {
        return props_.lambda + props_.cp * 0.5 * (mut_[idx(i - 1, j)] + mut_[idx(i, j)]) / pr_t_;
    }
    double lambda_face_y(int i, int j) const {
        return props_.lambda + props_.cp * 0.5 * (mut_[idx(i, j - 1)] + mut_[idx(i, j)]) / pr_t_;
    }

    double solve_temperature() {
        clear_coeffs();
        const double cp = props_.cp;
        const double ptc = ptc_inv_dt_ * rho_ * cp * vol_;
        for (int j = 0; j < ny_; ++j) {
            for (int i = 0; i < nx_; ++i) {
                const int c = idx(i, j);
                if (i > 0) add_interior_face(-fx_[fx(i, j)] * cp, lambda_face_x(i, j) * dy_ / dx_, aP_[c], aW_[c]);
                if (i < nx_ - 1)
                    add_interior_face(fx_[fx(i + 1, j)] * cp, lambda_face_x(i + 1, j) * dy_ / dx_, aP_[c], aE_[c]);
                if (j > 0) add_interior_face(-fyv_[fy(i, j)] * cp, lambda_face_y(i, j) * dx_ / dy_, aP_[c], aS_[c]);
                if (j < ny_ - 1)
                    add_interior_face(fyv_[fy(i, j + 1)] * cp, lambda_face_y(i, j + 1) * dx_ / dy_, aP_[c], aN_[c]);

                // vertical boundaries: adiabatic walls, inlet Dirichlet, vent outflow
                if (i == 0) boundary_temperature_x(c, j, left_, -fx_[fx(0, j)]);
                if (i == nx_ - 1) boundary_temperature_x(c, j, right_, fx_[fx(nx_, j)]);
                // bottom wall
                if (j == 0) {
                    if (case_.bottom_mode == BottomWallMode::fixed_temperature) {
                        const double h = wall_heat_coeff(c, 0.5 * dy_) * dx_;
                        aP_[c] += h;
                        b_[c] += h * case_.t_bottom;
                    }
                }
                // top wall
                if (j == ny_ - 1) {
                    if (case_.top_mode == TopWallMode::fixed_temperature) {
                        const double h = wall_heat_coeff(c, 0.5 * dy_) * dx_;
                        aP_[c] += h;
                        b_[c] += h * case_.t_top;
                    } else {
                        b_[c] -= case_.q_top * dx_;  // prescribed heat removal
                    }
                }
                aP_[c] += ptc;
                b_[c] += ptc * t_tm_[c];
                aP_[c] /= cfg_.relax_t;
                b_[c] += (1.0 - cfg_.relax_t) * aP_[c] * t_[c];
            }
        }
        const double res = residual(t_, &t_tm_, ptc_inv_dt_ * rho_ * props_.cp * vol_);
        adi_sweep(t_, cfg_.scalar_cycles);
        return res;
    }

    void boundary_temperature_x(int c, int j, const detail::SideBc& bc, double F_out) {
        const double cp = props_.cp;
        switch (bc.type[j]) {
            case detail::BFace::wall: break;  // adiabatic sidewall
            case detail::BFace::inlet: {
                const double D = lambda_eff(c) / (0.5 * dx_) * dy_ * bc.frac[j];
                add_boundary_face(c, F_out * cp, D, case_.t_inj);
                break;
            }
            case detail::BFace::vent: break;  // outflow at the cell value
        }
    }

    // Velocity-gradient production terms via central differences.
    void velocity_gradients(int i, int j, double& ux, double& uy, double& vx, double& vy) const {
        auto dX = [&](const std::vector<double>& f) {
            const int c = idx(i, j);
            if (i > 0 && i < nx_ - 1) return (f[c + 1] - f[c - 1]) / (2 * dx_);
            if (i == 0) return (f[c + 1] - f[c]) / dx_;
            return (f[c] - f[c - 1]) / dx_;
        };
        auto dY = [&](const std::vector<double>& f) {
            const int c = idx(i, j);
            if (j > 0 && j < ny_ - 1) return (f[c + nx_] - f[c - nx_]) / (2 * dy_);
            if (j == 0) return (f[c + nx_] - f[c]) / dy_;
            return (f[c] - f[c - nx_]) / dy_;
        };
        ux = dX(u_);
        uy = dY(u_);
        vx = dX(v_);
        vy = dY(v_);
    }

    double buoyancy_production(int i, int j) const {
        if (!cfg_.boussinesq) return 0.0;
        const int c = idx(i, j);
        double dtdy;
        if (j > 0 && j < ny_ - 1)
            dtdy = (t_[c + nx_] - t_[c - nx_]) / (2 * dy_);
        else if (j == 0)
            dtdy = (t_[c + nx_] - t_[c]) / dy_;
        else
            dtdy = (t_[c] - t_[c - nx_]) / dy_;
        return -props_.g * beta_ * (mut_[c] / pr_t_) * dtdy;
    }

    bool is_wall_adjacent_solid(int i, int j) const {
        if (j == 0 || j == ny_ - 1) return true;
        if (i == 0 && left_.type[j] == detail::BFace::wall) return true;
        if (i == nx_ - 1 && right_.type[j] == detail::BFace::wall) return true;
        return false;
    }

    double near_wall_distance(int i, int j) const {
        double d = std::numeric_limits<double>::max();
        if (j == 0 || j == ny_ - 1) d = std::min(d, 0.5 * dy_);
        if ((i == 0 && left_.type[j] == detail::BFace::wall) ||
            (i == nx_ - 1 && right_.type[j] == detail::BFace::wall))
            d = std::min(d, 0.5 * dx_);
        return d;
    }

    double solve_k() {
        clear_coeffs();
        const bool low_re = cfg_.turbulence == TurbulenceModel::low_re;
        const double ptc = ptc_inv_dt_ * rho_ * vol_;
        for (int j = 0; j < ny_; ++j) {
            for (int i = 0; i < nx_; ++i) {
                const int c = idx(i, j);
                auto gamma_k = [&](int cc) { return mu_ + mut_[cc] / sigma_k_; };
                if (i > 0)
                    add_interior_face(-fx_[fx(i, j)], 0.5 * (gamma_k(c - 1) + gamma_k(c)) * dy_ / dx_, aP_[c], aW_[c]);
                if (i < nx_ - 1)
                    add_interior_face(fx_[fx(i + 1, j)], 0.5 * (gamma_k(c) + gamma_k(c + 1)) * dy_ / dx_, aP_[c], aE_[c]);
                if (j > 0)
                    add_interior_face(-fyv_[fy(i, j)], 0.5 * (gamma_k(c - nx_) + gamma_k(c)) * dx_ / dy_, aP_[c], aS_[c]);
                if (j < ny_ - 1)
                    add_interior_face(fyv_[fy(i, j + 1)], 0.5 * (gamma_k(c) + gamma_k(c + nx_)) * dx_ / dy_, aP_[c],
                                      aN_[c]);

                // boundary faces
                if (i == 0) boundary_scalar_ke(c, j, left_, -fx_[fx(0, j)], k_in_, gamma_k(c), true);
                if (i == nx_ - 1) boundary_scalar_ke(c, j, right_, fx_[fx(nx_, j)], k_in_, gamma_k(c), true);
                if (low_re) {
                    // k = 0 on walls, resolved through the viscous sublayer
                    if (j == 0) aP_[c] += mu_ / (0.5 * dy_) * dx_;
                    if (j == ny_ - 1) aP_[c] += mu_ / (0.5 * dy_) * dx_;
                }

                // production and destruction
                double ux, uy, vx, vy;
                velocity_gradients(i, j, ux, uy, vx, vy);
                const double s2 = 2.0 * (ux * ux + vy * vy) + (uy + vx) * (uy + vx);
                double gk = mut_[c] * s2;
                const double y_p = near_wall_distance(i, j);
                if (!low_re && is_wall_adjacent_solid(i, j)) {
                    // log-layer equilibrium production from the wall shear
                    const double ustar = std::pow(props_.c_mu, 0.25) * std::sqrt(std::max(k_[c], cfg_.k_min));
                    const double ut = (j == 0 || j == ny_ - 1) ? std::abs(u_[c]) : std::abs(v_[c]);
                    const double tau_w = wall_mom_coeff(c, y_p) * ut;
                    gk = tau_w * tau_w / (rho_ * kappa_ * std::max(ustar, 1e-12) * y_p);
                }
                const double gb = buoyancy_production(i, j);
                b_[c] += (gk + std::max(gb, 0.0)) * vol_;
                const double k_old = std::max(k_[c], cfg_.k_min);
                aP_[c] += rho_ * std::max(eps_[c], cfg_.eps_min) / k_old * vol_;
                if (gb < 0.0) aP_[c] += -gb / k_old * vol_;

                aP_[c] += ptc;
                b_[c] += ptc * k_tm_[c];
                aP_[c] /= cfg_.relax_ke;
                b_[c] += (1.0 - cfg_.relax_ke) * aP_[c] * k_[c];
            }
        }
        const double res = relative_residual(k_, nullptr, &k_tm_, ptc_inv_dt_ * rho_ * vol_);
        adi_sweep(k_, cfg_.scalar_cycles);
        for (double& x : k_) x = std::max(x, cfg_.k_min);
        return res;
    }

    void boundary_scalar_ke(int c, int j, const detail::SideBc& bc, double F_out, double phi_in, double gamma,
                            bool /*is_k*/) {
        switch (bc.type[j]) {
            case detail::BFace::wall: break;  // handled by wall model / zero-gradient
            case detail::BFace::inlet: {
                const double D = gamma / (0.5 * dx_) * dy_ * bc.frac[j];
                add_boundary_face(c, F_out, D, phi_in);
                break;
            }
            case detail::BFace::vent: break;  // outflow at the cell value
        }
        if (cfg_.turbulence == TurbulenceModel::low_re && bc.type[j] == detail::BFace::wall)
            aP_[c] += mu_ / (0.5 * dx_) * dy_;  // k -> 0 at the wall
    }

    double solve_eps() {
        clear_coeffs();
        const bool low_re = cfg_.turbulence == TurbulenceModel::low_re;
        const double nu = mu_ / rho_;
        const double ptc = ptc_inv_dt_ * rho_ * vol_;
        for (int j = 0; j < ny_; ++j) {
            for (int i = 0; i < nx_; ++i) {
                const int c = idx(i, j);
                // wall-adjacent cells carry a fixed near-wall value
                if (is_wall_adjacent_solid(i, j)) {
                    const double y_p = near_wall_distance(i, j);
                    const double kk = std::max(k_[c], cfg_.k_min);
                    const double eps_fix = low_re ? 2.0 * nu * kk / (y_p * y_p)
                                                  : std::pow(props_.c_mu, 0.75) * std::pow(kk, 1.5) / (kappa_ * y_p);
                    aP_[c] = 1.0;
                    b_[c] = std::max(eps_fix, cfg_.eps_min);
                    aE_[c] = aW_[c] = aN_[c] = aS_[c] = 0.0;
                    eps_fixed_[c] = 1;
                    continue;
                }
                eps_fixed_[c] = 0;
                auto g_at = [&](int cc) { return mu_ + mut_[cc] / sigma_eps_; };
                const double gamma_e = g_at(c);
                if (i > 0) add_interior_face(-fx_[fx(i, j)], 0.5 * (g_at(c - 1) + gamma_e) * dy_ / dx_, aP_[c], aW_[c]);
                if (i < nx_ - 1)
                    add_interior_face(fx_[fx(i + 1, j)], 0.5 * (gamma_e + g_at(c + 1)) * dy_ / dx_, aP_[c], aE_[c]);
                if (j > 0) add_interior_face(-fyv_[fy(i, j)], 0.5 * (g_at(c - nx_) + gamma_e) * dx_ / dy_, aP_[c], aS_[c]);
                if (j < ny_ - 1)
                    add_interior_face(fyv_[fy(i, j + 1)], 0.5 * (gamma_e + g_at(c + nx_)) * dx_ / dy_, aP_[c], aN_[c]);
                if (i == 0) boundary_scalar_ke(c, j, left_, -fx_[fx(0, j)], eps_in_, gamma_e, false);
                if (i == nx_ - 1) boundary_scalar_ke(c, j, right_, fx_[fx(nx_, j)], eps_in_, gamma_e, false);

                double ux, uy, vx, vy;
                velocity_gradients(i, j, ux, uy, vx, vy);
                const double s2 = 2.0 * (ux * ux + vy * vy) + (uy + vx) * (uy + vx);
                const double gk = mut_[c] * s2;
                const double gb = buoyancy_production(i, j);
                const double kk = std::max(k_[c], cfg_.k_min);
                const double ee = std::max(eps_[c], cfg_.eps_min);
                double f2 = 1.0;
                if (low_re) {
                    const double ret = kk * kk / (nu * ee);
                    f2 = 1.0 - 0.3 * std::exp(-ret * ret);
                }
                b_[c] += c1_eps_ * ee / kk * (gk + std::max(gb, 0.0)) * vol_;
                aP_[c] += c2_eps_ * f2 * rho_ * ee / kk * vol_;

                aP_[c] += ptc;
                b_[c] += ptc * e_tm_[c];
                aP_[c] /= cfg_.relax_ke;
                b_[c] += (1.0 - cfg_.relax_ke) * aP_[c] * eps_[c];
            }
        }
        const double res = relative_residual(eps_, &eps_fixed_, &e_tm_, ptc_inv_dt_ * rho_ * vol_);
        adi_sweep(eps_, cfg_.scalar_cycles);
        for (double& x : eps_) x = std::max(x, cfg_.eps_min);
        return res;
    }

    // Residual relative to the diagonal flow magnitude, skipping rows pinned
    // to a fixed value (their mismatch only measures wall-model chatter).
    double relative_residual(const std::vector<double>& phi, const std::vector<std::uint8_t>* skip,
                             const std::vector<double>* anchor = nullptr, double f = 0.0) const {
        double raw = 0.0, denom = 0.0;
        for (int j = 0; j < ny_; ++j) {
            for (int i = 0; i < nx_; ++i) {
                const int c = idx(i, j);
                if (skip && (*skip)[c]) continue;
                double rhs = b_[c];
                if (i > 0) rhs += aW_[c] * phi[c - 1];
                if (i < nx_ - 1) rhs += aE_[c] * phi[c + 1];
                if (j > 0) rhs += aS_[c] * phi[c - nx_];
                if (j < ny_ - 1) rhs += aN_[c] * phi[c + nx_];
                double cell = rhs - aP_[c] * phi[c];
                if (anchor) cell -= f * ((*anchor)[c] - phi[c]);
                raw += std::abs(cell);
                denom += std::abs(aP_[c] * phi[c]);
            }
        }
        return raw / std::max(denom, 1e-300);
    }

    // Steady-state imbalance of the assembled system at the current iterate.
    // The pseudo-transient anchor contribution f*(anchor - phi) is removed so
    // the value measures the steady equations, not the inner stepping problem.
    double residual(const std::vector<double>& phi, const std::vector<double>* anchor = nullptr,
                    double f = 0.0) const {
        double r = 0.0;
        for (int j = 0; j < ny_; ++j) {
            for (int i = 0; i < nx_; ++i) {
                const int c = idx(i, j);
                double rhs = b_[c];
                if (i > 0) rhs += aW_[c] * phi[c - 1];
                if (i < nx_ - 1) rhs += aE_[c] * phi[c + 1];
                if (j > 0) rhs += aS_[c] * phi[c - nx_];
                if (j < ny_ - 1) rhs += aN_[c] * phi[c + nx_];
                double cell = rhs - aP_[c] * phi[c];
                if (anchor) cell -= f * ((*anchor)[c] - phi[c]);
                r += std::abs(cell);
            }
        }
        return r;
    }

    // Alternating-direction line relaxation: each cycle solves every x-line
    // and every y-line implicitly with the Thomas algorithm, carrying
    // boundary information across the whole domain per pass.
    void adi_sweep(std::vector<double>& phi, int cycles) {
        const int m = std::max(nx_, ny_);
        tdma_low_.resize(m);
        tdma_rhs_.resize(m);
        for (int cyc = 0; cyc < cycles; ++cyc) {
            for (int j = 0; j < ny_; ++j) {  // x-lines
                const int row = j * nx_;
                double* low = tdma_low_.data();
                double* rhs = tdma_rhs_.data();
                {
                    const int c = row;
                    double r = b_[c];
                    if (j > 0) r += aS_[c] * phi[c - nx_];
                    if (j < ny_ - 1) r += aN_[c] * phi[c + nx_];
                    low[0] = aP_[c];
                    rhs[0] = r;
                }
                for (int i = 1; i < nx_; ++i) {
                    const int c = row + i;
                    double r = b_[c];
                    if (j > 0) r += aS_[c] * phi[c - nx_];
                    if (j < ny_ - 1) r += aN_[c] * phi[c + nx_];
                    const double w = aW_[c] / low[i - 1];
                    low[i] = aP_[c] - w * aE_[c - 1];
                    rhs[i] = r + w * rhs[i - 1];
                }
                phi[row + nx_ - 1] = rhs[nx_ - 1] / low[nx_ - 1];
                for (int i = nx_ - 2; i >= 0; --i)
                    phi[row + i] = (rhs[i] + aE_[row + i] * phi[row + i + 1]) / low[i];
            }
            for (int i = 0; i < nx_; ++i) {  // y-lines
                double* low = tdma_low_.data();
                double* rhs = tdma_rhs_.data();
                {
                    const int c = i;
                    double r = b_[c];
                    if (i > 0) r += aW_[c] * phi[c - 1];
                    if (i < nx_ - 1) r += aE_[c] * phi[c + 1];
                    low[0] = aP_[c];
                    rhs[0] = r;
                }
                for (int j = 1; j < ny_; ++j) {
                    const int c = j * nx_ + i;
                    double r = b_[c];
                    if (i > 0) r += aW_[c] * phi[c - 1];
                    if (i < nx_ - 1) r += aE_[c] * phi[c + 1];
                    const double w = aS_[c] / low[j - 1];
                    low[j] = aP_[c] - w * aN_[c - nx_];
                    rhs[j] = r + w * rhs[j - 1];
                }
                phi[(ny_ - 1) * nx_ + i] = rhs[ny_ - 1] / low[ny_ - 1];
                for (int j = ny_ - 2; j >= 0; --j)
                    phi[j * nx_ + i] = (rhs[j] + aN_[j * nx_ + i] * phi[(j + 1) * nx_ + i]) / low[j];
            }
        }
    }

    void check_physical(int it) {
        for (int c = 0; c < n_; ++c) {
            if (!(t_[c] > 200.0 && t_[c] < 600.0))
                throw std::runtime_error("solver diverged for case " + case_.id + ": temperature " +
                                         format_double(t_[c]) + " K outside [200, 600] at iteration " +
                                         std::to_string(it));
        }
    }

    void finalize_stats(SolveStats& st) {
        double max_imb = 0.0;
        for (int j = 0; j < ny_; ++j)
            for (int i = 0; i < nx_; ++i) max_imb = std::max(max_imb, std::abs(cell_mass_imbalance(i, j)));
        st.max_cell_mass_imbalance = max_imb;

        const double cp = props_.cp;
        double q_in = 0.0, q_vent = 0.0, q_top = 0.0, q_bottom = 0.0;
        for (int j = 0; j < ny_; ++j) {
            auto account = [&](const detail::SideBc& bc, double F_out, int c) {
                if (bc.type[j] == detail::BFace::inlet)
                    q_in += -F_out * cp * case_.t_inj;  // inflow has F_out < 0
                else if (bc.type[j] == detail::BFace::vent)
                    q_vent += std::max(F_out, 0.0) * cp * t_[c];
            };
            account(left_, -fx_[fx(0, j)], idx(0, j));
            account(right_, fx_[fx(nx_, j)], idx(nx_ - 1, j));
        }
        for (int i = 0; i < nx_; ++i) {
            const int c_top = idx(i, ny_ - 1);
            if (case_.top_mode == TopWallMode::fixed_temperature)
                q_top += wall_heat_coeff(c_top, 0.5 * dy_) * dx_ * (t_[c_top] - case_.t_top);
            else
                q_top += case_.q_top * dx_;
            if (case_.bottom_mode == BottomWallMode::fixed_temperature) {
                const int c_bot = idx(i, 0);
                q_bottom += wall_heat_coeff(c_bot, 0.5 * dy_) * dx_ * (t_[c_bot] - case_.t_bottom);
            }
        }
        st.heat_in = q_in;
        st.heat_out_vent = q_vent;
        st.heat_out_top = q_top;
        st.heat_out_bottom = q_bottom;
        const double scale = std::max({std::abs(q_in), std::abs(q_top), std::abs(q_bottom), 1e-12});
        st.energy_balance_error = std::abs(q_in - q_vent - q_top - q_bottom) / scale;
    }

    CaseSpec case_;
    StructuredGrid2D grid_;
    SolverConfig cfg_;
    FluidProperties props_;
    int nx_ = 0, ny_ = 0, n_ = 0;
    double dx_ = 0, dy_ = 0, vol_ = 0;
    detail::SideBc left_, right_;
    double t_ref_ = 300.0, rho_ = 1.2, mu_ = 1.8e-5, beta_ = 1.0 / 300.0;
    double u_vent_ = 0.0, k_in_ = 0.0, eps_in_ = 0.0, a_in_ = 0.0;
    double scale_mom_ = 1.0, scale_mass_ = 1.0, scale_heat_ = 1.0;

    static constexpr double kappa_ = 0.41;
    static constexpr double e_wall_ = 9.793;
    static constexpr double pr_t_ = 0.9;
    static constexpr double c1_eps_ = 1.44;
    static constexpr double c2_eps_ = 1.92;
    static constexpr double sigma_k_ = 1.0;
    static constexpr double sigma_eps_ = 1.3;

    std::vector<double> u_, v_, p_, t_, k_, eps_, mut_;
    std::vector<double> ap_u_, ap_v_;
    std::vector<double> fx_, fyv_;  // face mass fluxes
    std::vector<double> aP_, aE_, aW_, aN_, aS_, b_, pc_;
    std::vector<double> tdma_low_, tdma_rhs_;
    double u_scale_ = 0.0;
    double ptc_inv_dt_ = 0.0;
    std::vector<double> u_tm_, v_tm_, t_tm_, k_tm_, e_tm_;
    std::vector<std::uint8_t> eps_fixed_;
};

inline FieldSnapshot solve_steady(const CaseSpec& c, const StructuredGrid2D& g, const SolverConfig& cfg,
                                  const FieldSnapshot* init = nullptr, SolveStats* stats = nullptr) {
    SimpleSolver solver(c, g, cfg, FluidProperties{});
    return solver.solve(init, stats);
}

inline StructuredGrid2D grid_for_mesh_size(const CaseSpec& c, double h) {
    if (h <= 0.0) throw std::runtime_error("mesh size must be positive");
    const double fnx = c.length / h, fny = c.height / h;
    const int nx = static_cast<int>(std::lround(fnx));
    const int ny = static_cast<int>(std::lround(fny));
    if (nx < 3 || ny < 3 || std::abs(fnx - nx) > 1e-9 * fnx || std::abs(fny - ny) > 1e-9 * fny)
        throw std::runtime_error("mesh size " + format_double(h) + " does not tile the " + format_double(c.length) +
                                 " x " + format_double(c.height) + " domain of case " + c.id);
    return StructuredGrid2D::for_case(c, nx, ny);
}

/// Solves a fine case through a coarse-to-fine cascade, carrying each stage's
/// solution forward as the initial state of the next.
inline FieldSnapshot solve_steady_cascade(const CaseSpec& c, const StructuredGrid2D& fine, const SolverConfig& cfg,
                                          SolveStats* stats = nullptr) {
    std::vector<std::pair<int, int>> stages;
    int sx = fine.nx(), sy = fine.ny();
    while (sx >= 64 && sy >= 64 && sx % 2 == 0 && sy % 2 == 0) {
        sx /= 2;
        sy /= 2;
        stages.push_back({sx, sy});
    }
    std::reverse(stages.begin(), stages.end());
    FieldSnapshot carry;
    bool have_carry = false;
    for (auto [snx, sny] : stages) {
        SolverConfig stage_cfg = cfg;
        stage_cfg.tolerance = std::max(cfg.tolerance * 20.0, 1e-5);
        StructuredGrid2D sg = StructuredGrid2D::for_case(c, snx, sny);
        carry = solve_steady(c, sg, stage_cfg, have_carry ? &carry : nullptr, nullptr);
        have_carry = true;
    }
    return solve_steady(c, fine, cfg, have_carry ? &carry : nullptr, stats);
}

struct CaseRunRequest {
    CaseSpec spec;
    std::vector<double> coarse_sizes;  // characteristic spacings for LF runs
    int fine_nx = 0, fine_ny = 0;      // HF grid
};

struct CaseRunRecord {
    std::string case_id;
    std::string fidelity;
    double mesh_size = 0.0;
    int nx = 0, ny = 0;
    int iterations = 0;
    double resid_mass = 0.0;
    double max_cell_mass_imbalance = 0.0;
    double energy_balance_error = 0.0;
};

struct CaseMatrixResult {
    std::vector<FieldSnapshot> snapshots;  // job order: each case's HF solve, then its LF solves
    std::vector<CaseRunRecord> manifest;
};

/// Runs every (case, mesh) job in the matrix: one high-fidelity solve per case
/// plus one low-fidelity solve per coarse spacing. Independent jobs run in
/// parallel; each solve is sequential and deterministic.
inline CaseMatrixResult run_case_matrix(const std::vector<CaseRunRequest>& requests, const SolverConfig& cfg_low,
                                        const SolverConfig& cfg_high, int workers = 0) {
    if (requests.empty()) throw std::runtime_error("case matrix: empty request list");
    struct Job {
        const CaseRunRequest* req;
        bool high;
        double h;  // LF spacing (unused for HF)
    };
    std::vector<Job> jobs;
    for (const auto& r : requests) {
        if (r.coarse_sizes.empty())
            throw std::runtime_error("case matrix: empty mesh list for case " + r.spec.id);
        if (r.fine_nx < 3 || r.fine_ny < 3)
            throw std::runtime_error("case matrix: missing fine mesh for case " + r.spec.id);
        jobs.push_back({&r, true, 0.0});
        for (double h : r.coarse_sizes) jobs.push_back({&r, false, h});
    }
    CaseMatrixResult result;
    result.snapshots.resize(jobs.size());
    result.manifest.resize(jobs.size());
    if (workers <= 0) workers = default_workers();
    parallel_for_each(jobs.size(), workers, [&](std::size_t jidx) {
        const Job& job = jobs[jidx];
        const CaseSpec& spec = job.req->spec;
        try {
            SolveStats st;
            FieldSnapshot snap;
            if (job.high) {
                StructuredGrid2D fine = StructuredGrid2D::for_case(spec, job.req->fine_nx, job.req->fine_ny);
                SolverConfig cfg = cfg_high;
                cfg.fidelity = "high";
                snap = solve_steady_cascade(spec, fine, cfg, &st);
            } else {
                StructuredGrid2D g = grid_for_mesh_size(spec, job.h);
                SolverConfig cfg = cfg_low;
                cfg.fidelity = "low";
                snap = solve_steady(spec, g, cfg, nullptr, &st);
            }
            CaseRunRecord rec;
            rec.case_id = spec.id;
            rec.fidelity = job.high ? "high" : "low";
            rec.mesh_size = snap.mesh_size;
            rec.nx = snap.grid.nx();
            rec.ny = snap.grid.ny();
            rec.iterations = st.iterations;
            rec.resid_mass = st.resid_mass;
            rec.max_cell_mass_imbalance = st.max_cell_mass_imbalance;
            rec.energy_balance_error = st.energy_balance_error;
            result.snapshots[jidx] = std::move(snap);
            result.manifest[jidx] = rec;
        } catch (const std::exception& e) {
            throw std::runtime_error("case " + spec.id + ": " + e.what());
        }
    });
    return result;
}

}  // namespace fsm
