#ifndef FPP_FORWARD_CORE_HPP
#define FPP_FORWARD_CORE_HPP

#include <array>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "fpp/common.hpp"
#include "fpp/ergodic.hpp"

namespace fpp {

// Exponential forward performance process
//   U(t,x) = -exp(-gamma x + y(V_t) - lambda t)
// together with its convex conjugate in closed form. Immutable; evaluation
// is pure. Risk tolerance -U_x/U_xx is identically 1/gamma.
class ExpForwardProcess {
public:
    ExpForwardProcess(double gamma, std::shared_ptr<const ErgodicSolution> ergodic);

    double gamma() const { return gamma_; }
    const ErgodicSolution& ergodic() const { return *erg_; }

    // exponent offset g(t,v) = y(v) - lambda t
    double offset(double t, double v) const;

    double value(double t, double v, double x) const;  // U
    double u_x(double t, double v, double x) const;
    double u_xx(double t, double v, double x) const;
    double u_xxx(double t, double v, double x) const;

    // convex conjugate and derivatives; z must be positive
    double conjugate(double t, double v, double z) const;      // U~
    double conjugate_z(double t, double v, double z) const;    // U~_z
    double conjugate_zz(double t, double v, double z) const;
    double conjugate_zzz(double t, double v, double z) const;

    // forward volatility alpha^i(t,x) = U(t,x) z^{e,i}(v) and the conjugate
    // volatility (alpha~_z)^i = -z^{e,i}/gamma
    double alpha_x(int i, double t, double v, double x) const;
    double alpha_tilde_z(int i, double v) const;

    // true when the last evaluation point fell outside the ergodic grid and
    // the linear-growth extension was used
    bool extrapolated() const { return extrapolated_ && extrapolated_->load(); }

private:
    double gamma_ = 1.0;
    std::shared_ptr<const ErgodicSolution> erg_;
    std::shared_ptr<std::atomic<bool>> extrapolated_;
};

struct FenchelResult {
    double value = 0.0;
    double x_star = 0.0;
    int doublings = 0;
};

// sup_x (u_slice(x) - x z) by golden section to x-tolerance 1e-10, with a
// sampled concavity pre-check and automatic box doubling on boundary hits
// (at most six). Optional derivative enables a Newton polish of the
// maximizer. Throws SolverError when the box cannot contain the maximizer.
FenchelResult fenchel_conjugate_numeric(const std::function<double(double)>& u_slice, double z,
                                        double box_lo, double box_hi,
                                        const std::function<double(double)>& u_slice_dx = nullptr);

// inf_z>0 (tilde(z) + x z), the bidual recovery of u(x).
double bidual_numeric(const std::function<double(double)>& tilde, double x, double z_lo,
                      double z_hi);

// A forward process together with its conjugate as callables of (t, v, .);
// either closed-form (exponential) or numeric (Markovian fields).
struct ConjugatePair {
    std::function<double(double, double, double)> u;
    std::function<double(double, double, double)> u_x;
    std::function<double(double, double, double)> u_xx;
    std::function<double(double, double, double)> u_xxx;
    std::function<double(double, double, double)> tilde;
    std::function<double(double, double, double)> tilde_z;
    std::function<double(double, double, double)> tilde_zz;
    std::function<double(double, double, double)> tilde_zzz;

    static ConjugatePair from_exponential(const ExpForwardProcess& p);
};

struct DualRelationReport {
    // inverse-marginal identities, value identities, curvature and third
    // derivative identities, each checked in both directions
    double dr1_primal = 0.0, dr1_dual = 0.0;
    double dr0_primal = 0.0, dr0_dual = 0.0;
    double dr5_primal = 0.0, dr5_dual = 0.0;
    double dr5p_primal = 0.0, dr5p_dual = 0.0;
    double max_abs() const;
};

// Max absolute residual of the conjugacy identities over the sample points
// (t, v, x).
DualRelationReport dual_relation_residuals(const ConjugatePair& pair,
                                           const std::vector<std::array<double, 3>>& points);

// Markovian forward field u(t, v, x) with derivatives, either analytic
// (named families) or finite differences over a CSV grid dump.
class MarkovianForwardField {
public:
    std::function<double(double, double, double)> u, u_t, u_v, u_vv;
    std::function<double(double, double, double)> u_x, u_xx, u_xxx, u_xv, u_xxv;
    // x-derivatives of the coefficient ratios, used by the decoupling-field
    // case dispatch; analytic families provide them exactly, grid fields by
    // finite differences.
    std::function<double(double, double, double)> phi1_x, phi2_x;

    std::string family;
    bool hjb_exact = false;  // whether the HJB residual is asserted (vs reported)

    std::vector<double> grid_t, grid_v, grid_x;

    double psi(double t, double v, double x, double theta_v, double rho) const;
    double phi1(double t, double v, double x) const;   // u_xxx / u_xx
    double phi2(double t, double v, double x) const;   // u_xxv / u_xx

    struct Bounds {
        double C_l = 0.0, C_u = 0.0, C_alpha = 0.0;
        double phi1_min = 0.0, phi1_max = 0.0;
        double phi2_abs_max = 0.0;
        double phi1_x_max = 0.0;           // sup of phi1_x (Case 2 needs < 0)
        double phi2_x_abs_max = 0.0;
        bool monotone_concave = true;
        double K = 0.0;                    // min feasible constant in the Case-2 bound
    };
    // Measured Assumption bounds over the stored grids; throws
    // InvariantError when u_x > 0 / u_xx < 0 fails on the interior grid.
    Bounds measure_bounds(double rho) const;

    // max over interior nodes of the forward HJB defect
    // u_t - (u_x theta + rho u_xv)^2 / (2 u_xx) + u_vv / 2 + l u_v
    double hjb_residual(const ScalarFn& theta, const ScalarFn& drift_l, double rho) const;

    // Named families.
    static MarkovianForwardField exponential_embedded(double gamma,
                                                      std::shared_ptr<const ErgodicSolution> erg,
                                                      std::vector<double> grid_t,
                                                      std::vector<double> grid_v,
                                                      std::vector<double> grid_x);
    // u = -exp(-x) + F(t,v), F = c0 + c1 exp(a v - a^2 t / 2); exact for
    // theta = 0, l = 0.
    static MarkovianForwardField additive_heat(double a, double c0, double c1,
                                               std::vector<double> grid_t,
                                               std::vector<double> grid_v,
                                               std::vector<double> grid_x);
    // u = utilde(x + eps tanh(v)) with utilde'' = -exp(-kappa), kappa' =
    // a + b tanh; phi2_x != 0 so it exercises the Case-2 gate. Not an exact
    // HJB solution; its residual is reported, not asserted.
    static MarkovianForwardField shifted_concave(double a, double b, double eps,
                                                 std::vector<double> grid_t,
                                                 std::vector<double> grid_v,
                                                 std::vector<double> grid_x);
    // grid dump with columns t,v,x,u on a complete lattice
    static MarkovianForwardField from_csv(const std::string& path);

    // Conjugate pair backed by the numeric Fenchel transform on x-slices.
    ConjugatePair conjugate_pair(double box_half_width = 50.0) const;
};

}  // namespace fpp

#endif
