#include "bspde/expression.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <numbers>

#include "bspde/error.hpp"

namespace bspde {

class ExpressionParser {
public:
    ExpressionParser(const std::string& text, Expression& out) : text_(text), out_(out) {}

    void run() {
        expr();
        skip_ws();
        if (pos_ != text_.size()) fail("unexpected '" + std::string(1, text_[pos_]) + "'");
    }

private:
    using Op = Expression::Op;

    void emit(Op op, double value = 0.0, std::size_t slot = 0) { out_.program_.push_back({op, value, slot}); }

    [[noreturn]] void fail(const std::string& msg) const {
        throw ConfigError("expression", "in '" + text_ + "' at column " + std::to_string(pos_ + 1) + ": " + msg);
    }

    void skip_ws() {
        while (pos_ < text_.size() && std::isspace(static_cast<unsigned char>(text_[pos_]))) ++pos_;
    }

    bool accept(char c) {
        skip_ws();
        if (pos_ < text_.size() && text_[pos_] == c) {
            ++pos_;
            return true;
        }
        return false;
    }

    void expr() {
        term();
        for (;;) {
            if (accept('+')) {
                term();
                emit(Op::add);
            } else if (accept('-')) {
                term();
                emit(Op::sub);
            } else {
                return;
            }
        }
    }

    void term() {
        unary();
        for (;;) {
            if (accept('*')) {
                unary();
                emit(Op::mul);
            } else if (accept('/')) {
                unary();
                emit(Op::div);
            } else {
                return;
            }
        }
    }

    void unary() {
        if (accept('-')) {
            unary();
            emit(Op::neg);
        } else if (accept('+')) {
            unary();
        } else {
            power();
        }
    }

    void power() {
        primary();
        if (accept('^')) {
            unary();
            emit(Op::pow);
        }
    }

    void primary() {
        skip_ws();
        if (pos_ >= text_.size()) fail("unexpected end of expression");
        const char c = text_[pos_];
        if (accept('(')) {
            expr();
            if (!accept(')')) fail("expected ')'");
            return;
        }
        if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') {
            double value = 0.0;
            const char* begin = text_.data() + pos_;
            const auto [ptr, ec] = std::from_chars(begin, text_.data() + text_.size(), value);
            if (ec != std::errc{}) fail("malformed number");
            pos_ += static_cast<std::size_t>(ptr - begin);
            emit(Op::push, value);
            return;
        }
        if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
            std::size_t end = pos_;
            while (end < text_.size() &&
                   (std::isalnum(static_cast<unsigned char>(text_[end])) || text_[end] == '_'))
                ++end;
            const std::string name = text_.substr(pos_, end - pos_);
            pos_ = end;
            if (accept('(')) {
                static const std::pair<const char*, Op> functions[] = {
                    {"sin", Op::sin}, {"cos", Op::cos},   {"exp", Op::exp},
                    {"log", Op::log}, {"sqrt", Op::sqrt}, {"abs", Op::abs}};
                const auto* f = std::find_if(std::begin(functions), std::end(functions),
                                             [&](const auto& e) { return name == e.first; });
                if (f == std::end(functions)) fail("unknown function '" + name + "'");
                expr();
                if (!accept(')')) fail("expected ')'");
                emit(f->second);
                return;
            }
            if (name == "pi") {
                emit(Op::push, std::numbers::pi);
                return;
            }
            const auto& vars = out_.variables_;
            const auto it = std::find(vars.begin(), vars.end(), name);
            if (it == vars.end()) fail("unknown variable '" + name + "'");
            emit(Op::var, 0.0, static_cast<std::size_t>(it - vars.begin()));
            return;
        }
        fail("unexpected '" + std::string(1, c) + "'");
    }

    const std::string& text_;
    Expression& out_;
    std::size_t pos_ = 0;
};

Expression Expression::parse(const std::string& text, std::vector<std::string> variables) {
    Expression e;
    e.text_ = text;
    e.variables_ = std::move(variables);
    e.program_.clear();
    ExpressionParser(e.text_, e).run();
    return e;
}

Expression Expression::constant(double value) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, value);
    Expression e;
    e.text_.assign(buf, res.ptr);
    e.program_ = {Instr{Op::push, value, 0}};
    return e;
}

bool Expression::uses(const std::string& name) const {
    const auto it = std::find(variables_.begin(), variables_.end(), name);
    if (it == variables_.end()) return false;
    const auto slot = static_cast<std::size_t>(it - variables_.begin());
    return std::any_of(program_.begin(), program_.end(),
                       [&](const Instr& i) { return i.op == Op::var && i.slot == slot; });
}

bool Expression::is_constant() const noexcept {
    return std::none_of(program_.begin(), program_.end(), [](const Instr& i) { return i.op == Op::var; });
}

double Expression::operator()(std::span<const double> args) const {
    double stack[64];
    std::size_t top = 0;
    for (const Instr& in : program_) {
        switch (in.op) {
            case Op::push: stack[top++] = in.value; break;
            case Op::var: stack[top++] = in.slot < args.size() ? args[in.slot] : 0.0; break;
            case Op::add: --top; stack[top - 1] += stack[top]; break;
            case Op::sub: --top; stack[top - 1] -= stack[top]; break;
            case Op::mul: --top; stack[top - 1] *= stack[top]; break;
            case Op::div: --top; stack[top - 1] /= stack[top]; break;
            case Op::pow: --top; stack[top - 1] = std::pow(stack[top - 1], stack[top]); break;
            case Op::neg: stack[top - 1] = -stack[top - 1]; break;
            case Op::sin: stack[top - 1] = std::sin(stack[top - 1]); break;
            case Op::cos: stack[top - 1] = std::cos(stack[top - 1]); break;
            case Op::exp: stack[top - 1] = std::exp(stack[top - 1]); break;
            case Op::log: stack[top - 1] = std::log(stack[top - 1]); break;
            case Op::sqrt: stack[top - 1] = std::sqrt(stack[top - 1]); break;
            case Op::abs: stack[top - 1] = std::abs(stack[top - 1]); break;
        }
        if (top >= 63) throw ConfigError("expression", "expression '" + text_ + "' is nested too deeply");
    }
    return stack[0];
}

}  // namespace bspde
