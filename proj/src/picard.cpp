#include "bspde/picard.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>

#include "bspde/error.hpp"
#include "bspde/expression.hpp"
#include "bspde/parallel.hpp"

namespace bspde {

TerminalCondition zero_terminal(int q) {
    TerminalCondition h;
    h.name = "zero";
    h.value = [q](std::span<const double>, const DriverView&, std::span<double> out) {
        std::fill(out.begin(), out.begin() + q, 0.0);
    };
    h.derivative = [q](const MultiIndex&, std::span<const double>, const DriverView&, std::span<double> out) {
        std::fill(out.begin(), out.begin() + q, 0.0);
        return true;
    };
    return h;
}

TerminalCondition expression_terminal(const std::vector<std::string>& exprs, const ModelDims& dims) {
    if (exprs.size() != static_cast<std::size_t>(dims.q))
        throw ConfigError("picard", "terminal condition needs q=" + std::to_string(dims.q) + " expressions, got " +
                                        std::to_string(exprs.size()));
    std::vector<std::string> vars;
    for (int a = 1; a <= dims.p; ++a) vars.push_back("x" + std::to_string(a));
    for (int l = 1; l <= dims.d; ++l) vars.push_back("W" + std::to_string(l));
    for (int i = 1; i <= dims.h; ++i) vars.push_back("L" + std::to_string(i));
    auto compiled = std::make_shared<std::vector<Expression>>();
    bool deterministic = true;
    for (const auto& e : exprs) {
        compiled->push_back(Expression::parse(e, vars));
        for (int l = 1; l <= dims.d; ++l) deterministic = deterministic && !compiled->back().uses("W" + std::to_string(l));
        for (int i = 1; i <= dims.h; ++i) deterministic = deterministic && !compiled->back().uses("L" + std::to_string(i));
    }
    TerminalCondition h;
    h.name = "expression";
    h.deterministic = deterministic;
    const auto p = static_cast<std::size_t>(dims.p);
    const auto d = static_cast<std::size_t>(dims.d);
    const auto nh = static_cast<std::size_t>(dims.h);
    h.value = [compiled, p, d, nh](std::span<const double> x, const DriverView& at_T, std::span<double> out) {
        std::vector<double> args(p + d + nh, 0.0);
        std::copy(x.begin(), x.end(), args.begin());
        if (!at_T.empty()) {
            const auto w = at_T.W();
            const auto l = at_T.L();
            std::copy(w.begin(), w.end(), args.begin() + static_cast<std::ptrdiff_t>(p));
            std::copy(l.begin(), l.end(), args.begin() + static_cast<std::ptrdiff_t>(p + d));
        }
        for (std::size_t r = 0; r < compiled->size(); ++r) out[r] = (*compiled)[r](args);
    };
    return h;
}

// ---------------------------------------------------------------------------
// Problem

Problem::Problem(GridPtr grid, ModelDims dims, LevySpec levy, const DriverPaths& drivers, TerminalCondition terminal,
                 const BasisConfig& basis)
    : grid_(std::move(grid)),
      dims_(dims),
      levy_(std::move(levy)),
      drivers_(&drivers),
      terminal_(std::move(terminal)),
      plan_((dims_.validate(), drivers), basis, &warnings_) {
    if (grid_->dim() != dims_.p) throw ConfigError("picard", "grid dimension differs from p");
    if (drivers.brownian_dim() != dims_.d)
        throw ConfigError("picard", "driver paths carry d=" + std::to_string(drivers.brownian_dim()) + ", dims say d=" +
                                        std::to_string(dims_.d));
    if (drivers.channels() != levy_.size() || levy_.size() != static_cast<std::size_t>(dims_.h))
        throw ConfigError("picard", "jump channels of drivers, levy spec and dims disagree");
    if (dims_.h > 0 && !drivers.compensated()) throw ConfigError("picard", "jump paths must be compensated");
    if (!terminal_.value) throw ConfigError("picard", "terminal condition has no value function");
    const std::size_t M = drivers.paths();
    for (std::size_t j = 0; j < plan_.steps(); ++j)
        if (plan_.step(j).size() * 10 > M)
            throw ConfigError("picard", "regression basis of " + std::to_string(plan_.step(j).size()) +
                                            " functions needs at least " + std::to_string(plan_.step(j).size() * 10) +
                                            " paths (basis count <= paths/10), got " + std::to_string(M));

    const std::size_t rows = terminal_.deterministic ? 1 : M;
    const std::size_t N = grid_->size();
    const auto q = static_cast<std::size_t>(dims_.q);
    auto values = std::make_shared<Eigen::MatrixXd>(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(N * q));
    std::vector<double> out(q);
    const std::size_t n = drivers.grid().steps;
    for (std::size_t m = 0; m < rows; ++m) {
        const DriverView view = terminal_.deterministic ? DriverView{} : DriverView(&drivers, m, n);
        for (std::size_t i = 0; i < N; ++i) {
            terminal_.value(grid_->node(i), view, out);
            for (std::size_t r = 0; r < q; ++r) {
                if (!std::isfinite(out[r]))
                    throw ConfigError("picard", "terminal condition is not finite at node " + std::to_string(i));
                (*values)(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(i * q + r)) = out[r];
            }
        }
    }
    terminal_values_ = std::move(values);
}

std::shared_ptr<const Eigen::MatrixXd> Problem::terminal_derivative(const MultiIndex& alpha) const {
    const Eigen::MatrixXd& H = *terminal_values_;
    auto out = std::make_shared<Eigen::MatrixXd>(H.rows(), H.cols());
    const std::size_t N = grid_->size();
    const auto q = static_cast<std::size_t>(dims_.q);
    const std::size_t n = drivers_->grid().steps;
    std::vector<double> buf(q);
    for (Eigen::Index m = 0; m < H.rows(); ++m) {
        const DriverView view = terminal_.deterministic ? DriverView{} : DriverView(drivers_, static_cast<std::size_t>(m), n);
        bool exact = static_cast<bool>(terminal_.derivative);
        for (std::size_t i = 0; i < N && exact; ++i) {
            exact = terminal_.derivative(alpha, grid_->node(i), view, buf);
            for (std::size_t r = 0; r < q && exact; ++r) (*out)(m, static_cast<Eigen::Index>(i * q + r)) = buf[r];
        }
        if (!exact) {
            GriddedField f(grid_, dims_.q, std::vector<double>(H.row(m).begin(), H.row(m).end()));
            const GriddedField df = partial_derivative(f, alpha);
            for (std::size_t c = 0; c < N * q; ++c) (*out)(m, static_cast<Eigen::Index>(c)) = df.values()[c];
        }
    }
    return out;
}

FieldTriplet Problem::unpack(const Eigen::Ref<const Eigen::RowVectorXd>& row) const {
    const std::size_t wv = width_v();
    const std::size_t wb = width_bar();
    auto segment = [&](std::size_t offset, std::size_t len) {
        return std::vector<double>(row.data() + offset, row.data() + offset + len);
    };
    FieldTriplet t;
    t.V = GriddedField(grid_, dims_.q, segment(0, wv));
    t.Vbar = GriddedField(grid_, dims_.q * dims_.d, segment(wv, wb));
    for (std::size_t ch = 0; ch < levy_.size(); ++ch) {
        t.Vtilde.emplace_back();
        for (std::size_t c = 0; c < levy_.channels[ch].cells(); ++c)
            t.Vtilde.back().emplace_back(grid_, dims_.q, segment(wv + wb + (plan_.cell_offset(ch) + c) * wv, wv));
    }
    return t;
}

Eigen::RowVectorXd Problem::pack(const FieldTriplet& t) const {
    Eigen::RowVectorXd row = Eigen::RowVectorXd::Zero(static_cast<Eigen::Index>(width()));
    const std::size_t wv = width_v();
    const std::size_t wb = width_bar();
    auto put = [&](const GriddedField& f, std::size_t offset) {
        const auto v = f.values();
        std::copy(v.begin(), v.end(), row.data() + offset);
    };
    put(t.V, 0);
    if (!t.Vbar.empty()) put(t.Vbar, wv);
    for (std::size_t ch = 0; ch < t.Vtilde.size(); ++ch)
        for (std::size_t c = 0; c < t.Vtilde[ch].size(); ++c) put(t.Vtilde[ch][c], wv + wb + (plan_.cell_offset(ch) + c) * wv);
    return row;
}

// ---------------------------------------------------------------------------
// SolutionSeries

SolutionSeries::SolutionSeries(ProblemPtr problem) : problem_(std::move(problem)) {
    const std::size_t n = problem_->time_grid().steps;
    coef_.resize(n);
    for (std::size_t j = 0; j < n; ++j)
        coef_[j] = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(problem_->plan().step(j).size()),
                                         static_cast<Eigen::Index>(problem_->width()));
    pi_.assign(n, 1);
    terminal_ = problem_->terminal_values();
    terminal_scale_ = 0.0;
}

bool SolutionSeries::path_independent(std::size_t step) const {
    if (step < coef_.size()) return pi_[step] != 0;
    return terminal_scale_ == 0.0 || terminal_->rows() == 1;
}

Eigen::RowVectorXd SolutionSeries::row(std::size_t step, std::size_t path) const {
    const Problem& P = *problem_;
    if (step < coef_.size()) {
        if (pi_[step]) return coef_[step].row(0);
        return P.plan().step(step).phi.row(static_cast<Eigen::Index>(path)) * coef_[step];
    }
    Eigen::RowVectorXd r = Eigen::RowVectorXd::Zero(static_cast<Eigen::Index>(P.width()));
    if (terminal_scale_ != 0.0) {
        const Eigen::Index m = terminal_->rows() == 1 ? 0 : static_cast<Eigen::Index>(path);
        r.head(static_cast<Eigen::Index>(P.width_v())) = terminal_scale_ * terminal_->row(m);
    }
    return r;
}

FieldTriplet SolutionSeries::realize(std::size_t step, std::size_t path) const { return problem_->unpack(row(step, path)); }

FieldTriplet SolutionSeries::mean(std::size_t step) const {
    const Problem& P = *problem_;
    if (step < coef_.size()) {
        if (pi_[step]) return P.unpack(coef_[step].row(0));
        return P.unpack(P.plan().step(step).mean_feature.transpose() * coef_[step]);
    }
    Eigen::RowVectorXd r = Eigen::RowVectorXd::Zero(static_cast<Eigen::Index>(P.width()));
    r.head(static_cast<Eigen::Index>(P.width_v())) = terminal_scale_ * terminal_->colwise().mean();
    return P.unpack(r);
}

SolutionSeries SolutionSeries::operator-(const SolutionSeries& other) const {
    if (problem_ != other.problem_) throw PreconditionError("picard", "series from different problems");
    SolutionSeries out(problem_);
    for (std::size_t j = 0; j < coef_.size(); ++j) {
        out.coef_[j] = coef_[j] - other.coef_[j];
        out.pi_[j] = static_cast<char>(pi_[j] && other.pi_[j]);
    }
    if (terminal_ == other.terminal_ || other.terminal_scale_ == 0.0) {
        out.terminal_ = terminal_;
        out.terminal_scale_ = terminal_scale_ - (terminal_ == other.terminal_ ? other.terminal_scale_ : 0.0);
    } else if (terminal_scale_ == 0.0) {
        out.terminal_ = other.terminal_;
        out.terminal_scale_ = -other.terminal_scale_;
    } else {
        throw PreconditionError("picard", "cannot subtract series with different terminal data");
    }
    return out;
}

// ---------------------------------------------------------------------------
// PicardConfig

void PicardConfig::validate() const {
    if (!(gamma >= 0.0) || !std::isfinite(gamma)) throw ConfigError("picard", "gamma must be finite (0 selects the default rule)");
    if (max_iters < 1) throw ConfigError("picard", "max_iters must be >= 1");
    if (!(tol > 0.0)) throw ConfigError("picard", "tol must be > 0");
    if (c_max < 0) throw ConfigError("picard", "c_max must be >= 0");
    if (diag_k_max < 1) throw ConfigError("picard", "diag_k_max must be >= 1");
    if (threads < 1) throw ConfigError("picard", "threads must be >= 1");
    basis.validate();
}

double default_gamma(double lipschitz, double horizon) {
    return std::max(1.0, 12.0 * std::pow(lipschitz, 4) * (horizon + 1.0));
}

double gamma_hat(double lipschitz, double gamma) { return 3.0 * lipschitz * lipschitz / (2.0 * gamma); }

double PicardConfig::resolved_gamma(double lipschitz, double horizon) const {
    return gamma > 0.0 ? gamma : default_gamma(lipschitz, horizon);
}

// ---------------------------------------------------------------------------
// Generator

namespace {

void cache_for(const OperatorPair& op, FieldTriplet& t) {
    // Both caches reach max(k, m): the solver treats the orders as equal.
    const int order = std::max(op.k, op.m);
    if (order == 0) return;
    t.V.cache_derivatives(order);
    if (!t.Vbar.empty()) t.Vbar.cache_derivatives(order);
}

template <class Row>
void put(Row&& row, const GriddedField& f) {
    const auto v = f.values();
    for (std::size_t c = 0; c < v.size(); ++c) row(static_cast<Eigen::Index>(c)) = v[c];
}

}  // namespace

Generator evaluate_generator(const OperatorPair& op, const SolutionSeries& U, int threads) {
    const Problem& P = U.problem();
    const RegressionPlan& plan = P.plan();
    const TimeGrid& tg = P.time_grid();
    const std::size_t n = tg.steps;
    const std::size_t M = P.drivers().paths();
    const auto wv = static_cast<Eigen::Index>(P.width_v());
    const auto wb = static_cast<Eigen::Index>(P.width_bar());
    const bool has_j = static_cast<bool>(op.diffusion) && wb > 0;
    Generator g;
    g.drift.resize(n);
    g.diffusion.resize(n);
    g.path_independent.assign(n, 0);
    for (std::size_t j = 0; j < n; ++j) {
        const auto& step = plan.step(j);
        const auto nb = static_cast<Eigen::Index>(step.size());
        g.drift[j] = Eigen::MatrixXd::Zero(nb, wv);
        g.diffusion[j] = Eigen::MatrixXd::Zero(nb, wb);
        OperatorContext ctx;
        ctx.t = tg.time(j);
        ctx.levy = &P.levy();
        const bool deterministic = op.adaptedness == Adaptedness::deterministic;
        if (deterministic && (op.linear || U.path_independent(j))) {
            const Eigen::Index rows = U.path_independent(j) ? 1 : nb;
            for (Eigen::Index b = 0; b < rows; ++b) {
                FieldTriplet t = P.unpack(U.coefficients(j).row(b));
                cache_for(op, t);
                put(g.drift[j].row(b), eval_drift(op, ctx, t));
                if (has_j) put(g.diffusion[j].row(b), eval_diffusion(op, ctx, t));
            }
            g.path_independent[j] = static_cast<char>(U.path_independent(j));
            continue;
        }
        // Per-path evaluation, projected with chunk-ordered reduction.
        const std::size_t chunks = chunk_count(M);
        std::vector<Eigen::MatrixXd> acc_l(chunks, Eigen::MatrixXd::Zero(nb, wv));
        std::vector<Eigen::MatrixXd> acc_j(chunks, Eigen::MatrixXd::Zero(nb, has_j ? wb : 0));
        for_chunks(M, threads, [&](std::size_t c, std::size_t begin, std::size_t end) {
            Eigen::RowVectorXd lrow(wv), jrow(has_j ? wb : 0);
            for (std::size_t m = begin; m < end; ++m) {
                OperatorContext local = ctx;
                local.drivers = DriverView(&P.drivers(), m, j);
                FieldTriplet t = U.realize(j, m);
                cache_for(op, t);
                put(lrow, eval_drift(op, local, t));
                const auto phi = step.phi.row(static_cast<Eigen::Index>(m));
                acc_l[c].noalias() += phi.transpose() * lrow;
                if (has_j) {
                    put(jrow, eval_diffusion(op, local, t));
                    acc_j[c].noalias() += phi.transpose() * jrow;
                }
            }
        });
        Eigen::MatrixXd sum_l = Eigen::MatrixXd::Zero(nb, wv);
        for (const auto& a : acc_l) sum_l += a;
        g.drift[j] = plan.solve(j, sum_l / static_cast<double>(M));
        if (has_j) {
            Eigen::MatrixXd sum_j = Eigen::MatrixXd::Zero(nb, wb);
            for (const auto& a : acc_j) sum_j += a;
            g.diffusion[j] = plan.solve(j, sum_j / static_cast<double>(M));
        }
    }
    return g;
}

// ---------------------------------------------------------------------------
// Backward sweep

SolutionSeries backward_sweep(const ProblemPtr& problem, std::shared_ptr<const Eigen::MatrixXd> terminal, double scale,
                              const Generator& gen, int iteration, bool standard_errors) {
    const Problem& P = *problem;
    const RegressionPlan& plan = P.plan();
    const DriverPaths& dr = P.drivers();
    const std::size_t n = P.time_grid().steps;
    const double dt = P.time_grid().dt();
    const std::size_t M = dr.paths();
    const double invM = 1.0 / static_cast<double>(M);
    const auto q = static_cast<std::size_t>(P.dims().q);
    const auto d = static_cast<std::size_t>(P.dims().d);
    const std::size_t N = P.grid()->size();
    const auto wv = static_cast<Eigen::Index>(P.width_v());
    const auto wb = static_cast<Eigen::Index>(P.width_bar());
    const Eigen::Index width = static_cast<Eigen::Index>(P.width());

    SolutionSeries out(problem);
    out.terminal_ = std::move(terminal);
    out.terminal_scale_ = scale;
    if (standard_errors) out.vbar_se_.assign(n, Eigen::RowVectorXd());
    const Eigen::MatrixXd H = scale * (*out.terminal_);
    bool pi_next = scale == 0.0 || H.rows() == 1;

    // Scatter Z_l (columns node*q + r) into V̄ columns (node*q + r)*d + l.
    auto scatter_bar = [&](Eigen::MatrixXd& C, const Eigen::MatrixXd& Z, std::size_t l) {
        for (Eigen::Index c = 0; c < wv; ++c) C.col(wv + c * static_cast<Eigen::Index>(d) + static_cast<Eigen::Index>(l)) += Z.col(c);
    };

    for (std::size_t jj = n; jj-- > 0;) {
        const auto& step = plan.step(jj);
        const auto nb = static_cast<Eigen::Index>(step.size());
        const bool last = jj + 1 == n;
        Eigen::MatrixXd E = Eigen::MatrixXd::Zero(nb, wv);
        const Eigen::MatrixXd* Cnext = last ? nullptr : &out.coef_[jj + 1];
        if (pi_next) {
            E.row(0) = last ? Eigen::RowVectorXd(H.row(0)) : Eigen::RowVectorXd(Cnext->row(0).head(wv));
        } else if (last) {
            E = plan.solve(jj, step.phi.transpose() * H * invM);
        } else {
            E = plan.solve(jj, step.next * Cnext->leftCols(wv));
        }

        Eigen::MatrixXd C = Eigen::MatrixXd::Zero(nb, width);
        C.leftCols(wv) = E + dt * gen.drift[jj];
        if (wb > 0) C.middleCols(wv, wb) = gen.diffusion[jj];

        if (!pi_next) {
            // Σ φ_j w (V_{j+1} − φ_j E) / M for a weight w (ΔW_l or ΔÑ_cell).
            auto residual_moment = [&](const Eigen::MatrixXd& self, const Eigen::MatrixXd* next,
                                       const std::function<double(std::size_t)>& weight) {
                Eigen::MatrixXd R = -self * E;
                if (last) {
                    Eigen::MatrixXd wphi = step.phi;
                    for (std::size_t m = 0; m < M; ++m) wphi.row(static_cast<Eigen::Index>(m)) *= weight(m);
                    R.noalias() += wphi.transpose() * H * invM;
                } else {
                    R.noalias() += *next * Cnext->leftCols(wv);
                }
                return R;
            };
            for (std::size_t l = 0; l < d; ++l) {
                const Eigen::MatrixXd R = residual_moment(step.self_w[l], last ? nullptr : &step.next_w[l],
                                                          [&](std::size_t m) { return dr.dW(m, jj)[l]; });
                scatter_bar(C, plan.solve(jj, R) / dt, l);
            }
            for (std::size_t ch = 0; ch < dr.channels(); ++ch) {
                for (std::size_t c = 0; c < dr.cells(ch); ++c) {
                    const double comp = dr.compensator(ch, c);
                    if (comp <= 0.0) continue;
                    const std::size_t g = plan.cell_offset(ch) + c;
                    const Eigen::MatrixXd R = residual_moment(step.self_n[g], last ? nullptr : &step.next_n[g],
                                                              [&](std::size_t m) { return dr.dN(m, ch, jj, c); });
                    C.middleCols(wv + wb + static_cast<Eigen::Index>(g) * wv, wv) = plan.solve(jj, R) / comp;
                }
            }
            if (standard_errors && d > 0) {
                Eigen::RowVectorXd s1 = Eigen::RowVectorXd::Zero(wb), s2 = Eigen::RowVectorXd::Zero(wb);
                for (std::size_t m = 0; m < M; ++m) {
                    const auto mi = static_cast<Eigen::Index>(m);
                    const Eigen::RowVectorXd next_v =
                        last ? Eigen::RowVectorXd(H.row(mi))
                             : Eigen::RowVectorXd(plan.step(jj + 1).phi.row(mi) * Cnext->leftCols(wv));
                    const Eigen::RowVectorXd res = next_v - step.phi.row(mi) * E;
                    for (std::size_t l = 0; l < d; ++l) {
                        const double w = dr.dW(m, jj)[l] / dt;
                        for (Eigen::Index c = 0; c < wv; ++c) {
                            const double v = w * res(c);
                            const Eigen::Index col = c * static_cast<Eigen::Index>(d) + static_cast<Eigen::Index>(l);
                            s1(col) += v;
                            s2(col) += v * v;
                        }
                    }
                }
                const Eigen::RowVectorXd mean = s1 * invM;
                out.vbar_se_[jj] = ((s2 * invM - mean.cwiseProduct(mean)).cwiseMax(0.0) * invM).cwiseSqrt();
            }
        } else if (standard_errors) {
            out.vbar_se_[jj] = Eigen::RowVectorXd::Zero(wb);
        }

        if (!C.allFinite())
            throw DivergedError("picard", "non-finite solution values at iteration " + std::to_string(iteration) +
                                              ", step " + std::to_string(jj) + " (t=" +
                                              std::to_string(P.time_grid().time(jj)) + ")");
        out.coef_[jj] = std::move(C);
        out.pi_[jj] = static_cast<char>(pi_next && gen.path_independent[jj]);
        pi_next = out.pi_[jj] != 0;
    }
    (void)q;
    (void)N;
    return out;
}

SolutionSeries martingale_step(const OperatorPair& op, const SolutionSeries& U, const PicardConfig& cfg, int iteration,
                               Generator* used) {
    Generator gen = evaluate_generator(op, U, cfg.threads);
    SolutionSeries next = backward_sweep(U.problem_ptr(), U.problem().terminal_values(), 1.0, gen, iteration, cfg.standard_errors);
    if (used) *used = std::move(gen);
    return next;
}

std::map<MultiIndex, SolutionSeries> propagate_derivative_system(const OperatorPair& op, const SolutionSeries& U,
                                                                 const PicardConfig& cfg, int c, const Generator* gen) {
    std::map<MultiIndex, SolutionSeries> out;
    if (c <= 0) return out;
    Generator own;
    if (!gen) {
        own = evaluate_generator(op, U, cfg.threads);
        gen = &own;
    }
    const Problem& P = U.problem();
    const GridPtr& grid = P.grid();
    const int q = P.dims().q;
    const int qd = q * P.dims().d;
    auto differentiate = [&](const Eigen::MatrixXd& rows, int comps, const MultiIndex& alpha, bool only_first) {
        Eigen::MatrixXd res = Eigen::MatrixXd::Zero(rows.rows(), rows.cols());
        if (comps == 0) return res;
        const Eigen::Index used = only_first ? std::min<Eigen::Index>(1, rows.rows()) : rows.rows();
        for (Eigen::Index b = 0; b < used; ++b) {
            GriddedField f(grid, comps, std::vector<double>(rows.row(b).begin(), rows.row(b).end()));
            put(res.row(b), partial_derivative(f, alpha));
        }
        return res;
    };
    for (int order = 1; order <= c; ++order) {
        for (const auto& alpha : multi_indices(P.dims().p, order)) {
            Generator g;
            g.path_independent = gen->path_independent;
            for (std::size_t j = 0; j < gen->drift.size(); ++j) {
                const bool first = gen->path_independent[j] != 0;
                g.drift.push_back(differentiate(gen->drift[j], q, alpha, first));
                g.diffusion.push_back(differentiate(gen->diffusion[j], qd, alpha, first));
            }
            out.emplace(alpha, backward_sweep(U.problem_ptr(), P.terminal_derivative(alpha), 1.0, g, 0, false));
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Outer loop

void cauchy_estimate(PicardDiagnostics& diag) {
    const auto& it = diag.iterations;
    diag.s_hat = 0.0;
    for (std::size_t i = 2; i < it.size(); ++i) {
        const double den = it[i - 1].delta + it[i - 2].delta;
        if (it[i].delta == 0.0) continue;
        diag.s_hat = std::max(diag.s_hat, den > 0.0 ? it[i].delta / den : std::numeric_limits<double>::infinity());
    }
    const double d1 = it.size() > 0 ? it[0].delta : 0.0;
    const double d2 = it.size() > 1 ? it[1].delta : 0.0;
    const double s = diag.s_hat;
    diag.cauchy_tail = s < 0.5 ? s / (1.0 - 2.0 * s) * (2.0 * d2 + d1) : std::numeric_limits<double>::infinity();
}

PicardResult picard_solve(const OperatorPair& op, const ProblemPtr& problem, const PicardConfig& cfg) {
    op.validate();
    cfg.validate();
    if (!(op.dims == problem->dims())) throw ConfigError("picard", "operator dimensions differ from the problem's");
    PicardDiagnostics diag;
    diag.lipschitz = op.lipschitz;
    diag.gamma = cfg.resolved_gamma(op.lipschitz, problem->time_grid().horizon);
    diag.gamma_hat = gamma_hat(op.lipschitz, diag.gamma);
    diag.warnings = problem->warnings();
    if (op.adaptedness == Adaptedness::path_functional)
        diag.warnings.emplace_back("operator '" + op.name + "' is path-functional: regression on (W, L) is experimental");
    NormWeights w;
    w.k_max = cfg.diag_k_max;
    w.gamma = diag.gamma;

    SolutionSeries U(problem);
    if (cfg.init == PicardConfig::Init::terminal) U = martingale_step(zero_operator(problem->dims()), U, cfg, 0);

    SolutionSeries best = U;
    Generator best_gen, gen;
    double best_delta = std::numeric_limits<double>::infinity();
    int rising = 0;
    for (int i = 1; i <= cfg.max_iters; ++i) {
        const auto start = std::chrono::steady_clock::now();
        SolutionSeries next = martingale_step(op, U, cfg, i, &gen);
        IterationRecord rec;
        rec.iteration = i;
        rec.delta = mgamma_norm(next - U, w, cfg.threads);
        if (diag.iterations.empty()) {
            rec.ratio = std::numeric_limits<double>::quiet_NaN();
        } else {
            const double prev = diag.iterations.back().delta;
            rec.ratio = prev > 0.0 ? rec.delta / prev : (rec.delta > 0.0 ? std::numeric_limits<double>::infinity() : 0.0);
        }
        rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        diag.iterations.push_back(rec);
        diag.iterations_used = i;
        U = std::move(next);
        if (rec.delta < best_delta) {
            best_delta = rec.delta;
            best = U;
            best_gen = gen;
        }
        if (!std::isfinite(rec.delta))
            throw DivergedError("picard", "iteration " + std::to_string(i) + ": iteration norm is not finite");
        if (rec.delta <= cfg.tol) {
            diag.converged = true;
            break;
        }
        rising = rec.ratio > 1.0 ? rising + 1 : 0;
        if (rising >= 3) {
            diag.aborted = true;
            diag.warnings.push_back("iteration " + std::to_string(i) + ": Δ grew three times in a row; aborted");
            break;
        }
    }
    cauchy_estimate(diag);
    PicardResult result{diag.converged ? U : best, std::move(diag), {}};
    const Generator& used = result.diagnostics.converged ? gen : best_gen;
    if (cfg.c_max > 0) result.derivatives = propagate_derivative_system(op, result.solution, cfg, cfg.c_max, &used);
    return result;
}

// ---------------------------------------------------------------------------
// Forward reconstruction

ForwardResidual reconstruct_forward(const SolutionSeries& solution, const OperatorPair& op, int threads,
                                    std::size_t max_paths) {
    const Problem& P = solution.problem();
    const DriverPaths& dr = P.drivers();
    const std::size_t n = P.time_grid().steps;
    const double dt = P.time_grid().dt();
    const std::size_t M = max_paths > 0 ? std::min(max_paths, dr.paths()) : dr.paths();
    const auto d = static_cast<std::size_t>(P.dims().d);
    const auto wv = static_cast<Eigen::Index>(P.width_v());
    const auto wb = static_cast<Eigen::Index>(P.width_bar());
    const bool coefficient_form = op.linear && op.adaptedness == Adaptedness::deterministic;
    const Generator gen = evaluate_generator(op, solution, threads);
    const bool has_j = static_cast<bool>(op.diffusion) && wb > 0;

    ForwardResidual res;
    res.per_path.assign(M, 0.0);
    for_chunks(M, threads, [&](std::size_t, std::size_t begin, std::size_t end) {
        for (std::size_t m = begin; m < end; ++m) {
            Eigen::RowVectorXd x = solution.row(0, m).head(wv);
            for (std::size_t j = 0; j < n; ++j) {
                const Eigen::RowVectorXd r = solution.row(j, m);
                Eigen::RowVectorXd L(wv), J = Eigen::RowVectorXd::Zero(wb);
                if (coefficient_form || gen.path_independent[j]) {
                    const auto phi = P.plan().step(j).phi.row(static_cast<Eigen::Index>(m));
                    L = gen.path_independent[j] ? Eigen::RowVectorXd(gen.drift[j].row(0)) : Eigen::RowVectorXd(phi * gen.drift[j]);
                    if (wb > 0)
                        J = gen.path_independent[j] ? Eigen::RowVectorXd(gen.diffusion[j].row(0))
                                                    : Eigen::RowVectorXd(phi * gen.diffusion[j]);
                } else {
                    OperatorContext ctx;
                    ctx.t = P.time_grid().time(j);
                    ctx.levy = &P.levy();
                    ctx.drivers = DriverView(&dr, m, j);
                    FieldTriplet t = P.unpack(r);
                    cache_for(op, t);
                    put(L, eval_drift(op, ctx, t));
                    if (has_j) put(J, eval_diffusion(op, ctx, t));
                }
                x -= dt * L;
                const auto dW = dr.dW(m, j);
                for (Eigen::Index c = 0; c < wv; ++c)
                    for (std::size_t l = 0; l < d; ++l) {
                        const Eigen::Index col = c * static_cast<Eigen::Index>(d) + static_cast<Eigen::Index>(l);
                        x(c) -= (J(col) - r(wv + col)) * dW[l];
                    }
                for (std::size_t ch = 0; ch < dr.channels(); ++ch)
                    for (std::size_t c = 0; c < dr.cells(ch); ++c) {
                        const auto g = static_cast<Eigen::Index>(P.plan().cell_offset(ch) + c);
                        x += dr.dN(m, ch, j, c) * r.segment(wv + wb + g * wv, wv);
                    }
            }
            const Eigen::Index hm = P.terminal_values()->rows() == 1 ? 0 : static_cast<Eigen::Index>(m);
            const Eigen::RowVectorXd diff = x - P.terminal_values()->row(hm);
            res.per_path[m] = std::sqrt(diff.squaredNorm() / static_cast<double>(wv));
        }
    });
    double s = 0.0;
    for (double v : res.per_path) s += v * v;
    res.rms = std::sqrt(s / static_cast<double>(M));
    return res;
}

}  // namespace bspde
