#include "fpp/functions.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace fpp {

ScalarFn::ScalarFn(std::string name, std::function<double(double)> f, double bound,
                   double lipschitz, std::string params)
    : name_(std::move(name)), params_(std::move(params)), f_(std::move(f)),
      bound_(bound), lipschitz_(lipschitz) {}

void ScalarFn::hash_into(Fnv1a& h) const {
    h.feed(name_);
    h.feed(params_);
    h.feed(bound_);
    h.feed(lipschitz_);
}

ScalarFn ScalarFn::zero() { return constant(0.0); }

ScalarFn ScalarFn::constant(double value) {
    std::ostringstream p;
    p << value;
    return ScalarFn("constant", [value](double) { return value; }, std::fabs(value), 0.0, p.str());
}

ScalarFn ScalarFn::tanh_scaled(double scale, double slope) {
    std::ostringstream p;
    p << scale << "," << slope;
    return ScalarFn("tanh_scaled",
                    [scale, slope](double v) { return scale * std::tanh(slope * v); },
                    std::fabs(scale), std::fabs(scale * slope), p.str());
}

ScalarFn ScalarFn::clipped_linear(double slope, double cap) {
    std::ostringstream p;
    p << slope << "," << cap;
    return ScalarFn("clipped_linear",
                    [slope, cap](double v) { return std::clamp(slope * v, -cap, cap); },
                    std::fabs(cap), std::fabs(slope), p.str());
}

ScalarFn ScalarFn::linear_mean_revert(double kappa) {
    std::ostringstream p;
    p << kappa;
    return ScalarFn("linear_mean_revert", [kappa](double v) { return -kappa * v; },
                    std::numeric_limits<double>::infinity(), std::fabs(kappa), p.str());
}

ScalarFn ScalarFn::grid_table(std::vector<double> v, std::vector<double> f, std::string label) {
    if (v.size() != f.size() || v.size() < 2)
        throw ConfigError("grid function: need at least two (v,f) rows");
    for (std::size_t i = 1; i < v.size(); ++i)
        if (!(v[i] > v[i - 1])) throw ConfigError("grid function: v column must increase");
    double bound = 0.0, lip = 0.0;
    for (std::size_t i = 0; i < f.size(); ++i) bound = std::max(bound, std::fabs(f[i]));
    for (std::size_t i = 1; i < f.size(); ++i)
        lip = std::max(lip, std::fabs((f[i] - f[i - 1]) / (v[i] - v[i - 1])));
    auto vv = std::make_shared<std::vector<double>>(std::move(v));
    auto ff = std::make_shared<std::vector<double>>(std::move(f));
    auto eval = [vv, ff](double x) {
        const auto& vs = *vv;
        const auto& fs = *ff;
        if (x <= vs.front()) return fs.front();
        if (x >= vs.back()) return fs.back();
        auto it = std::upper_bound(vs.begin(), vs.end(), x);
        std::size_t i = static_cast<std::size_t>(it - vs.begin()) - 1;
        double w = (x - vs[i]) / (vs[i + 1] - vs[i]);
        return fs[i] * (1.0 - w) + fs[i + 1] * w;
    };
    return ScalarFn("grid", std::move(eval), bound, lip, std::move(label));
}

ScalarFn ScalarFn::grid_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("grid_csv: cannot open " + path);
    std::vector<double> v, f;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        std::replace(line.begin(), line.end(), ',', ' ');
        std::istringstream ls(line);
        double a, b;
        if (ls >> a >> b) {
            v.push_back(a);
            f.push_back(b);
        }
    }
    return grid_table(std::move(v), std::move(f), path);
}

PayoffVX::PayoffVX(std::string name, std::function<double(double, double)> f, double bound,
                   double lip_x, std::string params)
    : name_(std::move(name)), params_(std::move(params)), f_(std::move(f)),
      bound_(bound), lip_x_(lip_x) {}

void PayoffVX::hash_into(Fnv1a& h) const {
    h.feed(name_);
    h.feed(params_);
    h.feed(bound_);
    h.feed(lip_x_);
}

PayoffVX PayoffVX::tanh_vx(double a, double b) {
    std::ostringstream p;
    p << a << "," << b;
    return PayoffVX("tanh_vx",
                    [a, b](double v, double x) { return a * std::tanh(v) + b * std::tanh(x); },
                    std::fabs(a) + std::fabs(b), std::fabs(b), p.str());
}

PayoffVX PayoffVX::from_scalar_v(const ScalarFn& p) {
    ScalarFn copy = p;
    return PayoffVX("of_v:" + p.name(), [copy](double v, double) { return copy(v); },
                    p.bound(), 0.0, p.params());
}

PayoffVX PayoffVX::constant(double c) {
    std::ostringstream p;
    p << c;
    return PayoffVX("constant", [c](double, double) { return c; }, std::fabs(c), 0.0, p.str());
}

}  // namespace fpp
