#include "bspde/regression.hpp"

#include <cmath>

#include "bspde/error.hpp"

namespace bspde {

namespace {

constexpr double kMinRcond = 1e-13;

std::vector<std::vector<int>> monomials(std::size_t vars, int degree, bool cross) {
    std::vector<std::vector<int>> out;
    out.emplace_back(vars, 0);
    if (!cross) {
        for (int e = 1; e <= degree; ++e)
            for (std::size_t v = 0; v < vars; ++v) {
                std::vector<int> m(vars, 0);
                m[v] = e;
                out.push_back(std::move(m));
            }
        return out;
    }
    std::vector<int> cur(vars, 0);
    for (int total = 1; total <= degree; ++total) {
        auto rec = [&](auto&& self, std::size_t v, int left) -> void {
            if (v + 1 == vars) {
                cur[v] = left;
                out.push_back(cur);
                return;
            }
            for (int e = left; e >= 0; --e) {
                cur[v] = e;
                self(self, v + 1, left - e);
            }
        };
        if (vars > 0) rec(rec, 0, total);
    }
    return out;
}

}  // namespace

void BasisConfig::validate() const {
    if (degree < 0) throw ConfigError("picard", "basis degree must be >= 0");
    if (!(ridge >= 0.0)) throw ConfigError("picard", "ridge must be >= 0");
}

std::size_t basis_size(const BasisConfig& basis, std::size_t vars) {
    return monomials(vars, basis.degree, basis.cross_terms).size();
}

RegressionPlan::RegressionPlan(const DriverPaths& drivers, const BasisConfig& basis, std::vector<std::string>* warnings)
    : drivers_(&drivers), basis_(basis) {
    basis.validate();
    for (std::size_t i = 0; i < drivers.channels(); ++i) {
        cell_offset_.push_back(total_cells_);
        total_cells_ += drivers.cells(i);
    }
    const std::size_t n = drivers.grid().steps;
    steps_.resize(n);
    for (std::size_t j = 0; j < n; ++j) build_step(j, warnings);

    const std::size_t M = drivers.paths();
    const double inv = 1.0 / static_cast<double>(M);
    const auto d = static_cast<std::size_t>(drivers.brownian_dim());
    const bool jumps = drivers.compensated();
    for (std::size_t j = 0; j < n; ++j) {
        Step& s = steps_[j];
        const bool has_next = j + 1 < n;
        if (has_next) s.next = s.phi.transpose() * steps_[j + 1].phi * inv;
        Eigen::VectorXd w(static_cast<Eigen::Index>(M));
        auto moments = [&](std::vector<Eigen::MatrixXd>& self, std::vector<Eigen::MatrixXd>& next) {
            const Eigen::MatrixXd weighted = s.phi.array().colwise() * w.array();
            self.push_back(weighted.transpose() * s.phi * inv);
            if (has_next) next.push_back(weighted.transpose() * steps_[j + 1].phi * inv);
        };
        for (std::size_t l = 0; l < d; ++l) {
            for (std::size_t m = 0; m < M; ++m) w(static_cast<Eigen::Index>(m)) = drivers.dW(m, j)[l];
            moments(s.self_w, s.next_w);
        }
        if (jumps) {
            for (std::size_t ch = 0; ch < drivers.channels(); ++ch)
                for (std::size_t c = 0; c < drivers.cells(ch); ++c) {
                    for (std::size_t m = 0; m < M; ++m) w(static_cast<Eigen::Index>(m)) = drivers.dN(m, ch, j, c);
                    moments(s.self_n, s.next_n);
                }
        }
    }
}

void RegressionPlan::build_step(std::size_t j, std::vector<std::string>* warnings) {
    const DriverPaths& dr = *drivers_;
    const std::size_t M = dr.paths();
    const auto d = static_cast<std::size_t>(dr.brownian_dim());
    const std::size_t h = basis_.include_jumps ? dr.channels() : 0;
    Step& s = steps_[j];

    auto state = [&](std::size_t m, std::size_t v) { return v < d ? dr.W(m, j)[v] : dr.L(m, j)[v - d]; };
    for (std::size_t v = 0; v < d + h; ++v) {
        double mean = 0.0;
        for (std::size_t m = 0; m < M; ++m) mean += state(m, v);
        mean /= static_cast<double>(M);
        double var = 0.0;
        for (std::size_t m = 0; m < M; ++m) var += (state(m, v) - mean) * (state(m, v) - mean);
        const double sd = std::sqrt(var / static_cast<double>(M));
        if (sd > 1e-12) {
            s.state_vars.push_back(v);
            s.mean.push_back(mean);
            s.sd.push_back(sd);
        }
    }

    const std::size_t S = s.state_vars.size();
    Eigen::MatrixXd z(static_cast<Eigen::Index>(M), static_cast<Eigen::Index>(S));
    for (std::size_t m = 0; m < M; ++m)
        for (std::size_t k = 0; k < S; ++k)
            z(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(k)) = (state(m, s.state_vars[k]) - s.mean[k]) / s.sd[k];

    for (int degree = S == 0 ? 0 : basis_.degree; degree >= 0; --degree) {
        s.exponents = monomials(S, degree, basis_.cross_terms);
        const auto nb = static_cast<Eigen::Index>(s.exponents.size());
        s.phi.resize(static_cast<Eigen::Index>(M), nb);
        for (Eigen::Index b = 0; b < nb; ++b) {
            const auto& e = s.exponents[static_cast<std::size_t>(b)];
            for (std::size_t m = 0; m < M; ++m) {
                double v = 1.0;
                for (std::size_t k = 0; k < S; ++k)
                    for (int p = 0; p < e[k]; ++p) v *= z(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(k));
                s.phi(static_cast<Eigen::Index>(m), b) = v;
            }
        }
        s.feature_scale.resize(nb);
        for (Eigen::Index b = 0; b < nb; ++b) {
            const double rms = std::sqrt(s.phi.col(b).squaredNorm() / static_cast<double>(M));
            s.feature_scale(b) = rms > 0.0 ? rms : 1.0;
            s.phi.col(b) /= s.feature_scale(b);
        }
        const Eigen::MatrixXd G = s.phi.transpose() * s.phi / static_cast<double>(M);
        s.gram.compute(G);
        s.degree = degree;
        s.ridge = 0.0;
        if (s.gram.info() == Eigen::Success && s.gram.rcond() >= kMinRcond) break;
        if (basis_.ridge > 0.0) {
            s.gram.compute(G + basis_.ridge * Eigen::MatrixXd::Identity(nb, nb));
            s.ridge = basis_.ridge;
            if (warnings)
                warnings->push_back("regression at step " + std::to_string(j) + ": singular Gram matrix, ridge " +
                                    std::to_string(basis_.ridge) + " added");
            if (s.gram.info() == Eigen::Success && s.gram.rcond() >= kMinRcond) break;
        }
        if (degree == 0) throw DivergedError("picard", "regression at step " + std::to_string(j) + " is singular even at degree 0");
        if (warnings)
            warnings->push_back("regression at step " + std::to_string(j) + ": still singular, basis degree lowered to " +
                                std::to_string(degree - 1));
    }
    s.mean_feature = s.phi.colwise().mean().transpose();
}

Eigen::MatrixXd RegressionPlan::solve(std::size_t j, const Eigen::MatrixXd& rhs) const { return steps_[j].gram.solve(rhs); }

}  // namespace bspde
