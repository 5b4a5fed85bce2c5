#ifndef FPP_OCE_HPP
#define FPP_OCE_HPP

#include <map>
#include <string>
#include <vector>

#include "fpp/fbsde.hpp"

namespace fpp {

// Deflator: either the unit constant or a positive function of the factor
// state at the evaluation time, normalized to unit mean by simulation.
struct DeflatorSpec {
    double scalar = 1.0;
    ScalarFn fn;   // optional; h(V_t) > 0, normalized to mean one
    double floor = 1e-6;

    bool stochastic() const { return fn.valid(); }
    void validate() const;
};

// sup_r (mean u(P - r) + r) by golden section over the concave objective.
double static_oce(const std::function<double(double)>& utility,
                  const std::vector<double>& samples, double box_lo, double box_hi);

struct AxiomRow {
    std::string name;
    double lhs = 0.0;
    double rhs = 0.0;
    double margin = 0.0;     // signed slack, >= 0 passes
    double tolerance = 0.0;
    bool pass = false;
};

struct MaturityRow {
    double T = 0.0, T_prime = 0.0;
    double value_T = 0.0, value_Tp = 0.0;
    double diff = 0.0, tolerance = 0.0;
    bool pass = false;
};

struct OceReport {
    double value = 0.0;        // forward OCE F(t, P; eta, T) (expectation-reported)
    double normalized = 0.0;   // F~ = F - F(t, 0; eta, T)
    double xi_star = 0.0;      // maximizing initial allocation
    double dual_value = 0.0;   // certificate at the candidate optimizer q*
    double dual_se = 0.0;
    double dual_gap = 0.0;
    double forward_entropic_risk = 0.0;  // -F~(t, P; 1, T)
    double eta_mean = 1.0;
    std::vector<AxiomRow> axiom_results;
    std::vector<MaturityRow> maturity_checks;
    bool pass = true;
};

struct OceNumerics {
    PdeGridSpec pde{VGrid{-6.0, 6.0, 601}, 500};
    McSpec mc{20000, 1.0 / 250.0, 11};
    double v0 = 0.0;
    double t0 = 0.0;   // simulation start
    double dual_gap_tol = 5e-3;
    double exact_tol = 1e-8;  // for the identities exact in the exponential regime
};

// Normalized forward OCE in the exponential regime via the backward-field
// solve; fills value, normalized, xi_star, dual certificate and gap.
OceReport forward_oce_exponential(const MarketModel& model,
                                  std::shared_ptr<const ErgodicSolution> erg,
                                  const EndowmentSpec& endowment, const DeflatorSpec& eta,
                                  double t, double T, const OceNumerics& num);

struct CertificateResult {
    double value = 0.0;
    double se = 0.0;
};

// Monte-Carlo certificate eta E^{Q^q}[ P + (1/2gamma) int |z^{e,2} + q|^2 ]:
// an upper bound on the normalized forward OCE for any bounded q, tight at
// the optimizer. candidate_q is a feedback rule of (t, v); additionally a
// replication gain int pi dW^{1,Q} can be added to the payoff.
CertificateResult forward_oce_dual_certificate(
    const MarketModel& model, std::shared_ptr<const ErgodicSolution> erg,
    const EndowmentSpec& endowment, const DeflatorSpec& eta, double t, double T,
    const std::function<double(double, double)>& candidate_q, const OceNumerics& num,
    const std::function<double(double, double)>& replication_pi = nullptr,
    double constant_shift = 0.0);

// Axiom battery: monotonicity, cash invariance, concavity,
// replication invariance, positivity, constancy.
std::vector<AxiomRow> axiom_suite(const MarketModel& model,
                                  std::shared_ptr<const ErgodicSolution> erg,
                                  const EndowmentSpec& P1, const EndowmentSpec& P2, double c,
                                  double lambda, const std::function<double(double, double)>& pi,
                                  const DeflatorSpec& eta, double t, double T,
                                  const OceNumerics& num);

MaturityRow oce_maturity_check(const MarketModel& model,
                               std::shared_ptr<const ErgodicSolution> erg,
                               const EndowmentSpec& endowment, const DeflatorSpec& eta, double t,
                               double T, double T_prime, const OceNumerics& num);

struct ClassicalReductionReport {
    double forward = 0.0;
    double classical = 0.0;
    double diff = 0.0;
    double se = 0.0;
    bool pass = false;
};

// theta = 0 and rho = 0 (endowment driven by the orthogonal noise only):
// the forward OCE must agree with the static OCE computed on identical
// terminal samples with the normalized exponential utility.
ClassicalReductionReport classical_reduction_check(const MarketModel& model,
                                                   std::shared_ptr<const ErgodicSolution> erg,
                                                   const EndowmentSpec& endowment, double t,
                                                   double T, const OceNumerics& num);

void export_axioms_csv(const std::string& path, const std::vector<AxiomRow>& rows);

}  // namespace fpp

#endif
