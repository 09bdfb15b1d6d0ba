#pragma once

#include <span>
#include <string>
#include <vector>

namespace bspde {

/// A compiled arithmetic expression over named variables.
///
/// Grammar: numbers, variables, `pi`, binary `+ - * / ^` (`^` is right
/// associative), unary minus, parentheses and the functions
/// `sin cos exp log sqrt abs`. Variables are bound by position: the i-th name
/// passed to `parse` reads slot i of the argument span.
class Expression {
public:
    Expression() = default;

    /// Throws ConfigError on syntax errors or unknown identifiers.
    static Expression parse(const std::string& text, std::vector<std::string> variables);

    /// Convenience for constants.
    static Expression constant(double value);

    double operator()(std::span<const double> args) const;
    double operator()(double a) const { return (*this)(std::span<const double>(&a, 1)); }

    const std::string& text() const noexcept { return text_; }
    const std::vector<std::string>& variables() const noexcept { return variables_; }

    /// True if the expression reads the named variable.
    bool uses(const std::string& name) const;

    /// True if no variable is read.
    bool is_constant() const noexcept;

private:
    enum class Op : unsigned char { push, var, add, sub, mul, div, pow, neg, sin, cos, exp, log, sqrt, abs };
    struct Instr {
        Op op;
        double value = 0.0;
        std::size_t slot = 0;
    };

    friend class ExpressionParser;

    std::string text_ = "0";
    std::vector<std::string> variables_;
    std::vector<Instr> program_{Instr{Op::push, 0.0, 0}};
};

}  // namespace bspde
