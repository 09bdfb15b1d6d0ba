#include "bspde/config.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <deque>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <type_traits>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "bspde/error.hpp"
#include "bspde/expression.hpp"

namespace bspde {

namespace {

namespace pt = boost::property_tree;

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    if (trim(s).empty()) return out;
    std::string item;
    std::istringstream is(s);
    while (std::getline(is, item, sep)) out.push_back(trim(item));
    return out;
}

std::string join(const std::vector<std::string>& v, const char* sep) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) out += (i ? sep : "") + v[i];
    return out;
}

std::string join(const std::vector<double>& v) {
    std::vector<std::string> s;
    for (double x : v) s.push_back(format_double(x));
    return join(s, ", ");
}

// Tracks which keys were read so the leftovers can be reported.
class Reader {
public:
    Reader(const pt::ptree& root, std::vector<std::string>& errors) : root_(root), errors_(errors) {}

    bool has(const std::string& section) const { return root_.find(section) != root_.not_found(); }

    const std::string* raw(const std::string& sec, const std::string& key) {
        used_[sec].insert(key);
        auto it = root_.find(sec);
        if (it == root_.not_found()) return nullptr;
        auto kt = it->second.find(key);
        if (kt == it->second.not_found()) return nullptr;
        values_.push_back(trim(kt->second.data()));
        return &values_.back();
    }

    void str(const std::string& sec, const std::string& key, std::string& out) {
        if (const auto* v = raw(sec, key)) out = *v;
    }

    void num(const std::string& sec, const std::string& key, double& out) {
        if (const auto* v = raw(sec, key)) parse_double(sec, key, *v, out);
    }

    template <class Int>
    void integer(const std::string& sec, const std::string& key, Int& out) {
        if (const auto* v = raw(sec, key)) {
            long long x = 0;
            const auto res = std::from_chars(v->data(), v->data() + v->size(), x);
            if (res.ec != std::errc() || res.ptr != v->data() + v->size() || (std::is_unsigned_v<Int> && x < 0))
                bad(sec, key, *v, std::is_unsigned_v<Int> ? "a nonnegative integer" : "an integer");
            else
                out = static_cast<Int>(x);
        }
    }

    void flag(const std::string& sec, const std::string& key, bool& out) {
        if (const auto* v = raw(sec, key)) {
            if (*v == "true" || *v == "1" || *v == "yes")
                out = true;
            else if (*v == "false" || *v == "0" || *v == "no")
                out = false;
            else
                bad(sec, key, *v, "true or false");
        }
    }

    void nums(const std::string& sec, const std::string& key, std::vector<double>& out) {
        if (const auto* v = raw(sec, key)) {
            out.clear();
            for (const auto& item : split(*v, ',')) {
                double x = 0.0;
                if (parse_double(sec, key, item, x)) out.push_back(x);
            }
        }
    }

    void exprs(const std::string& sec, const std::string& key, std::vector<std::string>& out) {
        if (const auto* v = raw(sec, key)) out = split(*v, ';');
    }

    void unknown_keys() {
        for (const auto& [sec, body] : root_) {
            if (body.empty() && !body.data().empty()) {
                errors_.push_back("key '" + sec + "' outside any section");
                continue;
            }
            auto u = used_.find(sec);
            if (u == used_.end()) {
                errors_.push_back("unknown section [" + sec + "]");
                continue;
            }
            for (const auto& [key, value] : body)
                if (!u->second.count(key)) errors_.push_back("unknown key '" + key + "' in section [" + sec + "]");
        }
    }

    void touch(const std::string& sec) { used_[sec]; }

private:
    bool parse_double(const std::string& sec, const std::string& key, const std::string& v, double& out) {
        double x = 0.0;
        const auto res = std::from_chars(v.data(), v.data() + v.size(), x);
        if (res.ec != std::errc() || res.ptr != v.data() + v.size()) {
            bad(sec, key, v, "a number");
            return false;
        }
        out = x;
        return true;
    }

    void bad(const std::string& sec, const std::string& key, const std::string& v, const char* want) {
        errors_.push_back("[" + sec + "] " + key + " = '" + v + "': expected " + want);
    }

    const pt::ptree& root_;
    std::vector<std::string>& errors_;
    std::map<std::string, std::set<std::string>> used_;
    std::deque<std::string> values_;  // keeps returned pointers alive
};

template <class Fn>
void collect(std::vector<std::string>& errors, Fn&& fn) {
    try {
        fn();
    } catch (const Error& e) {
        errors.push_back(e.module() + ": " + e.what());
    }
}

const std::set<std::string> kLevyKinds{"atoms", "gamma", "stable", "exponential"};

}  // namespace

std::vector<std::string> validate_config(const RunConfig& c) {
    std::vector<std::string> errors;
    auto need = [&](bool ok, const std::string& msg) {
        if (!ok) errors.push_back(msg);
    };
    need(c.seed.has_value(), "[run] seed is mandatory (no clock-based default)");
    need(c.paths >= 1, "[run] paths must be >= 1");
    collect(errors, [&] { c.dims.validate(); });

    const bool finance = c.op_kind == "finance";
    if (c.domain_kind == "box") {
        need(c.resolution >= 3, "[domain] resolution ≥ 3 required, got " + std::to_string(c.resolution));
        need(c.lower.size() == static_cast<std::size_t>(c.dims.p) && c.upper.size() == c.lower.size(),
             "[domain] lower and upper need p = " + std::to_string(c.dims.p) + " entries");
        for (std::size_t a = 0; a < std::min(c.lower.size(), c.upper.size()); ++a)
            need(c.lower[a] < c.upper[a], "[domain] lower < upper required on axis " + std::to_string(a + 1));
    } else if (c.domain_kind == "annulus") {
        need(c.resolution >= 3, "[domain] resolution ≥ 3 required, got " + std::to_string(c.resolution));
        need(c.inner >= 0.0 && c.outer > c.inner, "[domain] 0 <= inner < outer required");
    } else {
        errors.push_back("[domain] kind must be box or annulus, got '" + c.domain_kind + "'");
    }

    need(c.horizon > 0.0 && std::isfinite(c.horizon), "[time] horizon must be > 0");
    need(c.steps >= 1, "[time] steps must be >= 1");

    need(static_cast<int>(c.levy.size()) == c.dims.h,
         "[dims] h = " + std::to_string(c.dims.h) + " but " + std::to_string(c.levy.size()) + " [levyN] sections");
    for (std::size_t i = 0; i < c.levy.size(); ++i) {
        const auto& ch = c.levy[i];
        const std::string sec = "[levy" + std::to_string(i + 1) + "] ";
        if (!kLevyKinds.count(ch.kind)) errors.push_back(sec + "kind must be atoms, gamma, stable or exponential");
        if (ch.kind == "atoms")
            need(ch.sizes.size() == ch.masses.size(), sec + "sizes and masses differ in length");
        else
            need(ch.cells >= 1 && ch.z_cap > 0.0, sec + "cells >= 1 and z_cap > 0 required");
    }
    if (errors.empty()) collect(errors, [&] { make_levy(c).validate(); });

    const std::set<std::string> ops{"zero", "linear", "expression", "finance"};
    if (!ops.count(c.op_kind))
        errors.push_back("[operator] kind must be zero, linear, expression or finance, got '" + c.op_kind + "'");
    if (c.op_kind == "linear" || c.op_kind == "expression") {
        if (errors.empty()) {
            collect(errors, [&] {
                const GridPtr grid = make_grid(make_domain(c));
                make_operator(c, grid).validate();
            });
        }
    }
    if (finance) {
        need(c.dims == (ModelDims{1, 1, 2, 0}), "[dims] the finance operator needs p = 1, q = 1, d = 2, h = 0");
        need(c.fin_derivatives == "log_chebyshev" || c.fin_derivatives == "finite_difference",
             "[finance] derivatives must be log_chebyshev or finite_difference");
        need(c.fin_resolution >= 1, "[finance] resolution must be >= 1");
        collect(errors, [&] { make_finance_model(c).validate(); });
    }

    if (c.terminal_kind == "expression") {
        need(c.terminal.size() == static_cast<std::size_t>(c.dims.q),
             "[terminal] values needs q = " + std::to_string(c.dims.q) + " expressions");
        if (c.terminal.size() == static_cast<std::size_t>(c.dims.q))
            collect(errors, [&] { make_terminal(c); });
    } else if (c.terminal_kind != "zero") {
        errors.push_back("[terminal] kind must be zero or expression, got '" + c.terminal_kind + "'");
    }

    need(c.init == "zero" || c.init == "terminal", "[picard] init must be zero or terminal");
    collect(errors, [&] { make_picard(c, 1).validate(); });
    need(c.k_max >= 1, "[norms] k_max must be >= 1");

    if (c.has_environment) {
        const std::set<std::string> presets{"frozen", "ou", "gbm", "custom"};
        if (!presets.count(c.env_preset))
            errors.push_back("[environment] preset must be frozen, ou, gbm or custom");
        else
            collect(errors, [&] { make_environment(c).validate(); });
        need(c.env_derivative_order >= 0, "[environment] derivative_order must be >= 0");
    }
    return errors;
}

RunConfig parse_config(const std::string& text, bool validate) {
    pt::ptree root;
    try {
        std::istringstream is(text);
        pt::ini_parser::read_ini(is, root);
    } catch (const pt::ini_parser_error& e) {
        throw ConfigError("config", "line " + std::to_string(e.line()) + ": " + e.message());
    }

    RunConfig c;
    std::vector<std::string> errors;
    Reader r(root, errors);

    r.touch("run");
    if (const auto* v = r.raw("run", "seed")) {
        std::uint64_t s = 0;
        const auto res = std::from_chars(v->data(), v->data() + v->size(), s);
        if (res.ec != std::errc() || res.ptr != v->data() + v->size())
            errors.push_back("[run] seed = '" + *v + "': expected a nonnegative integer");
        else
            c.seed = s;
    }
    r.integer("run", "paths", c.paths);
    r.str("run", "name", c.name);

    r.integer("dims", "p", c.dims.p);
    r.integer("dims", "q", c.dims.q);
    r.integer("dims", "d", c.dims.d);
    r.integer("dims", "h", c.dims.h);

    r.str("domain", "kind", c.domain_kind);
    r.nums("domain", "lower", c.lower);
    r.nums("domain", "upper", c.upper);
    r.integer("domain", "resolution", c.resolution);
    r.num("domain", "inner", c.inner);
    r.num("domain", "outer", c.outer);

    r.num("time", "horizon", c.horizon);
    r.integer("time", "steps", c.steps);

    const std::string op = "operator";
    r.str(op, "kind", c.op_kind);
    r.exprs(op, "a", c.lin_a);
    r.exprs(op, "b", c.lin_b);
    r.str(op, "c", c.lin_c);
    r.exprs(op, "abar", c.lin_abar);
    r.exprs(op, "bbar", c.lin_bbar);
    r.str(op, "cbar", c.lin_cbar);
    r.exprs(op, "ja", c.lin_ja);
    r.exprs(op, "jb", c.lin_jb);
    r.str(op, "jc", c.lin_jc);
    r.str(op, "drift", c.drift);
    r.exprs(op, "diffusion", c.diffusion);
    r.num(op, "lipschitz", c.lipschitz);

    r.str("terminal", "kind", c.terminal_kind);
    r.exprs("terminal", "values", c.terminal);

    for (int i = 1; r.has("levy" + std::to_string(i)); ++i) {
        const std::string sec = "levy" + std::to_string(i);
        LevyChannelConfig ch;
        r.str(sec, "kind", ch.kind);
        r.nums(sec, "sizes", ch.sizes);
        r.nums(sec, "masses", ch.masses);
        r.num(sec, "a", ch.a);
        r.num(sec, "b", ch.b);
        r.num(sec, "z_cap", ch.z_cap);
        r.num(sec, "epsilon", ch.epsilon);
        r.num(sec, "intensity", ch.intensity);
        r.integer(sec, "cells", ch.cells);
        c.levy.push_back(ch);
    }

    r.num("picard", "gamma", c.gamma);
    r.integer("picard", "max_iters", c.max_iters);
    r.num("picard", "tol", c.tol);
    r.integer("picard", "basis_degree", c.basis_degree);
    r.flag("picard", "cross_terms", c.cross_terms);
    r.num("picard", "ridge", c.ridge);
    r.flag("picard", "include_jumps", c.include_jumps);
    r.integer("picard", "c_max", c.c_max);
    r.integer("picard", "diag_k_max", c.diag_k_max);
    r.str("picard", "init", c.init);
    r.flag("picard", "standard_errors", c.standard_errors);

    r.integer("norms", "k_max", c.k_max);

    c.has_environment = r.has("environment");
    const std::string env = "environment";
    r.str(env, "preset", c.env_preset);
    r.nums(env, "x0", c.env_x0);
    r.num(env, "b", c.env_b);
    r.num(env, "theta", c.env_theta);
    r.num(env, "mu", c.env_mu);
    r.num(env, "sigma", c.env_sigma);
    r.integer(env, "noise_dim", c.env_noise_dim);
    r.exprs(env, "drift", c.env_drift);
    r.exprs(env, "diffusion", c.env_diffusion);
    r.num(env, "lipschitz", c.env_lipschitz);
    r.integer(env, "derivative_order", c.env_derivative_order);

    const std::string fin = "finance";
    r.num(fin, "r", c.fin_r);
    r.str(fin, "beta", c.fin_beta);
    r.str(fin, "sigma", c.fin_sigma);
    r.str(fin, "c", c.fin_c);
    r.str(fin, "d", c.fin_d);
    r.num(fin, "rho", c.fin_rho);
    r.num(fin, "gamma", c.fin_gamma);
    r.num(fin, "b", c.fin_b);
    r.num(fin, "kappa", c.fin_kappa);
    r.num(fin, "x0", c.fin_x0);
    r.num(fin, "y0", c.fin_y0);
    r.num(fin, "x_max", c.fin_x_max);
    r.num(fin, "compare_max", c.fin_compare_max);
    r.integer(fin, "resolution", c.fin_resolution);
    r.num(fin, "v_tolerance", c.fin_v_tolerance);
    r.integer(fin, "wealth_paths", c.fin_wealth_paths);
    r.integer(fin, "error_paths", c.fin_error_paths);
    r.str(fin, "derivatives", c.fin_derivatives);
    r.integer(fin, "degree", c.fin_degree);
    r.integer(fin, "factor_ny", c.fin_factor_ny);
    r.integer(fin, "factor_nt", c.fin_factor_nt);

    r.str("output", "dir", c.out_dir);
    r.integer("output", "csv_paths", c.csv_paths);

    r.unknown_keys();
    if (validate) {
        // fields that failed to parse keep their defaults, so this still
        // reports independent problems such as a missing seed
        const auto more = validate_config(c);
        errors.insert(errors.end(), more.begin(), more.end());
    }
    if (!errors.empty()) throw ConfigError("config", join(errors, "\n"));
    return c;
}

void require_valid(const RunConfig& cfg) {
    const auto errors = validate_config(cfg);
    if (!errors.empty()) throw ConfigError("config", join(errors, "\n"));
}

RunConfig load_config(const std::string& path, bool validate) {
    std::ifstream is(path);
    if (!is) throw ConfigError("config", "cannot read " + path);
    std::ostringstream ss;
    ss << is.rdbuf();
    return parse_config(ss.str(), validate);
}

std::string serialize_config(const RunConfig& c) {
    std::ostringstream os;
    auto kv = [&os](const char* key, const std::string& value) { os << key << " = " << value << '\n'; };
    auto num = [&](const char* key, double v) { kv(key, format_double(v)); };
    auto integer = [&](const char* key, long long v) { kv(key, std::to_string(v)); };
    auto flag = [&](const char* key, bool v) { kv(key, v ? "true" : "false"); };

    os << "[run]\n";
    if (c.seed) kv("seed", std::to_string(*c.seed));
    integer("paths", static_cast<long long>(c.paths));
    kv("name", c.name);

    os << "\n[dims]\n";
    integer("p", c.dims.p);
    integer("q", c.dims.q);
    integer("d", c.dims.d);
    integer("h", c.dims.h);

    os << "\n[domain]\n";
    kv("kind", c.domain_kind);
    kv("lower", join(c.lower));
    kv("upper", join(c.upper));
    integer("resolution", c.resolution);
    num("inner", c.inner);
    num("outer", c.outer);

    os << "\n[time]\n";
    num("horizon", c.horizon);
    integer("steps", static_cast<long long>(c.steps));

    os << "\n[operator]\n";
    kv("kind", c.op_kind);
    kv("a", join(c.lin_a, "; "));
    kv("b", join(c.lin_b, "; "));
    kv("c", c.lin_c);
    kv("abar", join(c.lin_abar, "; "));
    kv("bbar", join(c.lin_bbar, "; "));
    kv("cbar", c.lin_cbar);
    kv("ja", join(c.lin_ja, "; "));
    kv("jb", join(c.lin_jb, "; "));
    kv("jc", c.lin_jc);
    kv("drift", c.drift);
    kv("diffusion", join(c.diffusion, "; "));
    num("lipschitz", c.lipschitz);

    os << "\n[terminal]\n";
    kv("kind", c.terminal_kind);
    kv("values", join(c.terminal, "; "));

    for (std::size_t i = 0; i < c.levy.size(); ++i) {
        const auto& ch = c.levy[i];
        os << "\n[levy" << i + 1 << "]\n";
        kv("kind", ch.kind);
        kv("sizes", join(ch.sizes));
        kv("masses", join(ch.masses));
        num("a", ch.a);
        num("b", ch.b);
        num("z_cap", ch.z_cap);
        num("epsilon", ch.epsilon);
        num("intensity", ch.intensity);
        integer("cells", ch.cells);
    }

    os << "\n[picard]\n";
    num("gamma", c.gamma);
    integer("max_iters", c.max_iters);
    num("tol", c.tol);
    integer("basis_degree", c.basis_degree);
    flag("cross_terms", c.cross_terms);
    num("ridge", c.ridge);
    flag("include_jumps", c.include_jumps);
    integer("c_max", c.c_max);
    integer("diag_k_max", c.diag_k_max);
    kv("init", c.init);
    flag("standard_errors", c.standard_errors);

    os << "\n[norms]\n";
    integer("k_max", c.k_max);

    if (c.has_environment) {
        os << "\n[environment]\n";
        kv("preset", c.env_preset);
        kv("x0", join(c.env_x0));
        num("b", c.env_b);
        num("theta", c.env_theta);
        num("mu", c.env_mu);
        num("sigma", c.env_sigma);
        integer("noise_dim", c.env_noise_dim);
        kv("drift", join(c.env_drift, "; "));
        kv("diffusion", join(c.env_diffusion, "; "));
        num("lipschitz", c.env_lipschitz);
        integer("derivative_order", c.env_derivative_order);
    }

    os << "\n[finance]\n";
    num("r", c.fin_r);
    kv("beta", c.fin_beta);
    kv("sigma", c.fin_sigma);
    kv("c", c.fin_c);
    kv("d", c.fin_d);
    num("rho", c.fin_rho);
    num("gamma", c.fin_gamma);
    num("b", c.fin_b);
    num("kappa", c.fin_kappa);
    num("x0", c.fin_x0);
    num("y0", c.fin_y0);
    num("x_max", c.fin_x_max);
    num("compare_max", c.fin_compare_max);
    integer("resolution", c.fin_resolution);
    num("v_tolerance", c.fin_v_tolerance);
    integer("wealth_paths", static_cast<long long>(c.fin_wealth_paths));
    integer("error_paths", static_cast<long long>(c.fin_error_paths));
    kv("derivatives", c.fin_derivatives);
    integer("degree", c.fin_degree);
    integer("factor_ny", static_cast<long long>(c.fin_factor_ny));
    integer("factor_nt", static_cast<long long>(c.fin_factor_nt));

    os << "\n[output]\n";
    kv("dir", c.out_dir);
    integer("csv_paths", static_cast<long long>(c.csv_paths));
    return os.str();
}

DomainSpec make_domain(const RunConfig& c) {
    if (c.domain_kind == "annulus") return DomainSpec::annulus(c.dims.p, c.inner, c.outer, c.resolution);
    std::vector<std::pair<double, double>> bounds;
    for (std::size_t a = 0; a < c.lower.size() && a < c.upper.size(); ++a) bounds.emplace_back(c.lower[a], c.upper[a]);
    return DomainSpec::box(std::move(bounds), c.resolution);
}

TimeGrid make_time_grid(const RunConfig& c) { return TimeGrid{c.horizon, c.steps}; }

LevySpec make_levy(const RunConfig& c) {
    LevySpec spec;
    for (const auto& ch : c.levy) {
        if (ch.kind == "atoms") {
            std::vector<std::pair<double, double>> atoms;
            for (std::size_t i = 0; i < ch.sizes.size() && i < ch.masses.size(); ++i)
                atoms.emplace_back(ch.sizes[i], ch.masses[i]);
            spec.channels.push_back(LevyChannel::atoms(std::move(atoms), ch.intensity));
        } else {
            spec.channels.push_back(LevyChannel::named(ch.kind, ch.a, ch.b, ch.z_cap, ch.epsilon, ch.intensity,
                                                       static_cast<std::size_t>(ch.cells)));
        }
    }
    return spec;
}

OperatorPair make_operator(const RunConfig& c, const GridPtr& grid) {
    if (c.op_kind == "zero") return zero_operator(c.dims);
    if (c.op_kind == "expression") return build_expression_operator(c.drift, c.diffusion, c.dims, c.lipschitz);
    if (c.op_kind == "finance") {
        XDerivativeRule rule;
        rule.degree = c.fin_degree;
        if (c.fin_derivatives == "finite_difference") rule.kind = XDerivativeRule::Kind::finite_difference;
        return build_fbspde_operator(make_finance_model(c), rule);
    }
    if (c.op_kind != "linear") throw ConfigError("config", "unknown operator kind '" + c.op_kind + "'");
    const auto vars = LinearCoefficients::variables(c.dims.p);
    auto list = [&vars](const std::vector<std::string>& v) {
        std::vector<Expression> out;
        for (const auto& s : v) out.push_back(Expression::parse(s, vars));
        return out;
    };
    LinearCoefficients lc;
    lc.a = list(c.lin_a);
    lc.b = list(c.lin_b);
    lc.c = Expression::parse(c.lin_c, vars);
    lc.abar = list(c.lin_abar);
    lc.bbar = list(c.lin_bbar);
    lc.cbar = Expression::parse(c.lin_cbar, vars);
    lc.ja = list(c.lin_ja);
    lc.jb = list(c.lin_jb);
    lc.jc = Expression::parse(c.lin_jc, vars);
    OperatorPair op = build_linear_operator(lc, c.dims, grid);
    if (c.lipschitz > 0.0) op.lipschitz = c.lipschitz;
    return op;
}

TerminalCondition make_terminal(const RunConfig& c) {
    if (c.terminal_kind == "expression") return expression_terminal(c.terminal, c.dims);
    return zero_terminal(c.dims.q);
}

PicardConfig make_picard(const RunConfig& c, int threads) {
    PicardConfig p;
    p.gamma = c.gamma;
    p.max_iters = c.max_iters;
    p.tol = c.tol;
    p.basis.degree = c.basis_degree;
    p.basis.cross_terms = c.cross_terms;
    p.basis.ridge = c.ridge;
    p.basis.include_jumps = c.include_jumps;
    p.c_max = c.c_max;
    p.diag_k_max = c.diag_k_max;
    p.init = c.init == "terminal" ? PicardConfig::Init::terminal : PicardConfig::Init::zero;
    p.threads = threads;
    p.standard_errors = c.standard_errors;
    return p;
}

NormWeights make_norms(const RunConfig& c, double gamma) {
    NormWeights w;
    w.k_max = c.k_max;
    w.gamma = gamma;
    return w;
}

EnvironmentSpec make_environment(const RunConfig& c) {
    if (c.env_preset == "frozen") return EnvironmentSpec::frozen(c.env_x0, c.env_b);
    if (c.env_preset == "ou") return EnvironmentSpec::ou(c.env_x0, c.env_b, c.env_theta, c.env_sigma);
    if (c.env_preset == "gbm") return EnvironmentSpec::gbm(c.env_x0, c.env_b, c.env_mu, c.env_sigma);
    return EnvironmentSpec::custom(c.env_drift, c.env_diffusion, c.env_noise_dim, c.env_x0, c.env_b, c.env_lipschitz);
}

FinanceModel make_finance_model(const RunConfig& c) {
    const auto y = FinanceModel::variables();
    FinanceModel m;
    m.r = c.fin_r;
    m.beta = Expression::parse(c.fin_beta, y);
    m.sigma = Expression::parse(c.fin_sigma, y);
    m.c = Expression::parse(c.fin_c, y);
    m.d = Expression::parse(c.fin_d, y);
    m.rho = c.fin_rho;
    m.gamma = c.fin_gamma;
    m.b = c.fin_b;
    m.kappa = c.fin_kappa;
    m.T = c.horizon;
    m.x0 = c.fin_x0;
    m.y0 = c.fin_y0;
    return m;
}

FinanceValidationConfig make_finance_validation(const RunConfig& c, int threads) {
    FinanceValidationConfig f;
    f.x_max = c.fin_x_max;
    f.compare_max = c.fin_compare_max;
    f.resolution = c.fin_resolution;
    f.steps = c.steps;
    f.paths = c.paths;
    f.seed = c.seed.value_or(0);
    f.picard = make_picard(c, threads);
    f.derivatives.degree = c.fin_degree;
    if (c.fin_derivatives == "finite_difference") f.derivatives.kind = XDerivativeRule::Kind::finite_difference;
    f.factor.ny = c.fin_factor_ny;
    f.factor.nt = c.fin_factor_nt;
    f.v_tolerance = c.fin_v_tolerance;
    f.wealth_paths = c.fin_wealth_paths;
    f.error_paths = c.fin_error_paths;
    return f;
}

std::uint64_t fnv1a64(const std::string& bytes) {
    std::uint64_t h = 14695981039346656037ull;
    for (unsigned char ch : bytes) {
        h ^= ch;
        h *= 1099511628211ull;
    }
    return h;
}

}  // namespace bspde
