#ifndef FPP_FUNCTIONS_HPP
#define FPP_FUNCTIONS_HPP

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "fpp/common.hpp"

namespace fpp {

// Named scalar functions with declared bound / Lipschitz certificates.
// Bounded coefficients are a standing assumption of every solver here, so
// functions enter through this registry rather than as free-form
// expressions.
class ScalarFn {
public:
    ScalarFn() = default;
    ScalarFn(std::string name, std::function<double(double)> f, double bound,
             double lipschitz, std::string params = "");

    double operator()(double v) const { return f_(v); }
    const std::string& name() const { return name_; }
    const std::string& params() const { return params_; }
    double bound() const { return bound_; }       // certified sup |f|; inf for unbounded
    double lipschitz() const { return lipschitz_; }
    bool valid() const { return static_cast<bool>(f_); }

    void hash_into(Fnv1a& h) const;

    // Registry constructors.
    static ScalarFn zero();
    static ScalarFn constant(double value);
    // scale * tanh(slope * v)
    static ScalarFn tanh_scaled(double scale, double slope = 1.0);
    // clamp(slope * v, -cap, cap)
    static ScalarFn clipped_linear(double slope, double cap);
    // -kappa * v  (dissipative factor drift, unbounded but Lipschitz)
    static ScalarFn linear_mean_revert(double kappa);
    // piecewise-linear table from a two-column CSV (v,f), constant extension
    static ScalarFn grid_csv(const std::string& path);
    // piecewise-linear table from memory
    static ScalarFn grid_table(std::vector<double> v, std::vector<double> f, std::string label);

private:
    std::string name_;
    std::string params_;
    std::function<double(double)> f_;
    double bound_ = 0.0;
    double lipschitz_ = 0.0;
};

// Bounded payoff of the terminal pair (V_T, X_T) with a recorded Lipschitz
// constant in the wealth argument (needed by the decoupling-field regime).
class PayoffVX {
public:
    PayoffVX() = default;
    PayoffVX(std::string name, std::function<double(double, double)> f, double bound,
             double lip_x, std::string params = "");

    double operator()(double v, double x) const { return f_(v, x); }
    const std::string& name() const { return name_; }
    double bound() const { return bound_; }
    double lipschitz_x() const { return lip_x_; }
    bool valid() const { return static_cast<bool>(f_); }
    void hash_into(Fnv1a& h) const;

    // a * tanh(v) + b * tanh(x); L_{P,x} = |b|
    static PayoffVX tanh_vx(double a, double b);
    static PayoffVX from_scalar_v(const ScalarFn& p);  // P(v,x) = p(v)
    static PayoffVX constant(double c);

private:
    std::string name_;
    std::string params_;
    std::function<double(double, double)> f_;
    double bound_ = 0.0;
    double lip_x_ = 0.0;
};

}  // namespace fpp

#endif
