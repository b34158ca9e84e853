#pragma once

// Constraint expression language: parsing, evaluation and exact symbolic
// differentiation over named series.
//
//   expr   := term (('+'|'-') term)*
//   term   := factor (('*'|'/') factor)*
//   factor := atom ('^' factor)?
//   atom   := number | identifier | '(' expr ')' | '-' atom
//
// '^' binds tightest and associates to the right. Exponents must reduce to
// a constant at parse time.

#include <cctype>
#include <cmath>
#include <cstddef>
#include <limits>
#include <map>
#include <memory>
#include <set>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace nlcr {

class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, std::size_t offset)
      : std::runtime_error(what + " at offset " + std::to_string(offset)),
        offset_(offset) {}
  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

class EvalError : public std::runtime_error {
 public:
  enum class Kind { unbound_variable, division_by_zero, domain };
  EvalError(Kind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}
  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

inline bool is_identifier(std::string_view s) {
  if (s.empty()) return false;
  auto head = static_cast<unsigned char>(s.front());
  if (!(std::isalpha(head) || head == '_')) return false;
  for (char ch : s.substr(1)) {
    auto c = static_cast<unsigned char>(ch);
    if (!(std::isalnum(c) || c == '_' || c == '.')) return false;
  }
  return true;
}

/// Immutable expression tree. Copies share nodes, so passing by value is cheap
/// and concurrent evaluation from many threads is safe.
class Expression {
 public:
  enum class Kind { constant, variable, negate, add, sub, mul, div, pow };
  static constexpr std::size_t unbound = std::numeric_limits<std::size_t>::max();

  Expression() : Expression(constant(0.0)) {}

  static Expression constant(double v) {
    auto n = std::make_shared<Node>();
    n->kind = Kind::constant;
    n->value = v;
    return Expression(std::move(n));
  }

  static Expression variable(std::string name, std::size_t slot = unbound) {
    if (!is_identifier(name))
      throw std::invalid_argument("invalid identifier '" + name + "'");
    auto n = std::make_shared<Node>();
    n->kind = Kind::variable;
    n->name = std::move(name);
    n->slot = slot;
    return Expression(std::move(n));
  }

  static Expression negate(Expression operand) {
    auto n = std::make_shared<Node>();
    n->kind = Kind::negate;
    n->lhs = std::move(operand.node_);
    return Expression(std::move(n));
  }

  static Expression binary(Kind op, Expression lhs, Expression rhs) {
    if (op == Kind::constant || op == Kind::variable || op == Kind::negate)
      throw std::invalid_argument("not a binary operator");
    if (op == Kind::pow && !rhs.is_constant())
      throw std::invalid_argument("exponent must be a constant");
    auto n = std::make_shared<Node>();
    n->kind = op;
    n->lhs = std::move(lhs.node_);
    n->rhs = std::move(rhs.node_);
    return Expression(std::move(n));
  }

  Kind kind() const noexcept { return node_->kind; }
  bool is_constant() const noexcept { return node_->kind == Kind::constant; }
  bool is_constant(double v) const noexcept {
    return is_constant() && node_->value == v;
  }
  double value() const noexcept { return node_->value; }
  const std::string& name() const noexcept { return node_->name; }
  std::size_t slot() const noexcept { return node_->slot; }

  /// Operand of negate, or left child of a binary node.
  Expression left() const { return Expression(node_->lhs); }
  Expression right() const { return Expression(node_->rhs); }

  /// Structural equality (same tree shape, operators, constants and names).
  friend bool operator==(const Expression& a, const Expression& b) {
    return equal(a.node_.get(), b.node_.get());
  }

  /// Evaluates with variables looked up by name.
  double evaluate(const std::map<std::string, double, std::less<>>& binding) const {
    return eval_named(*node_, binding);
  }

  /// Evaluates with variables looked up by slot; every variable must be bound
  /// (see bind()).
  double evaluate(std::span<const double> values) const {
    return eval_slots(*node_, values);
  }

  /// Returns a copy whose variables carry their position in `vocabulary`.
  /// Throws if a variable is not in the vocabulary.
  Expression bind(const std::vector<std::string>& vocabulary) const {
    std::map<std::string, std::size_t, std::less<>> index;
    for (std::size_t i = 0; i < vocabulary.size(); ++i) index[vocabulary[i]] = i;
    return bind_impl(index);
  }

  std::set<std::string> variables() const {
    std::set<std::string> out;
    collect(*node_, out);
    return out;
  }

  std::string to_string() const {
    std::ostringstream os;
    print(os, *node_, 0);
    return os.str();
  }

 private:
  struct Node {
    Kind kind = Kind::constant;
    double value = 0.0;
    std::string name;
    std::size_t slot = unbound;
    std::shared_ptr<const Node> lhs;
    std::shared_ptr<const Node> rhs;
  };

  explicit Expression(std::shared_ptr<const Node> n) : node_(std::move(n)) {}

  static bool equal(const Node* a, const Node* b) {
    if (a == b) return true;
    if (!a || !b || a->kind != b->kind) return false;
    switch (a->kind) {
      case Kind::constant: return a->value == b->value;
      case Kind::variable: return a->name == b->name;
      case Kind::negate: return equal(a->lhs.get(), b->lhs.get());
      default:
        return equal(a->lhs.get(), b->lhs.get()) && equal(a->rhs.get(), b->rhs.get());
    }
  }

  static double apply(Kind k, double a, double b) {
    switch (k) {
      case Kind::add: return a + b;
      case Kind::sub: return a - b;
      case Kind::mul: return a * b;
      case Kind::div:
        if (b == 0.0) throw EvalError(EvalError::Kind::division_by_zero, "division by zero");
        return a / b;
      case Kind::pow: {
        if (a == 0.0 && b < 0.0)
          throw EvalError(EvalError::Kind::division_by_zero, "zero raised to a negative power");
        double r = std::pow(a, b);
        if (!std::isfinite(r))
          throw EvalError(EvalError::Kind::domain, "non-finite power");
        return r;
      }
      default: return std::numeric_limits<double>::quiet_NaN();
    }
  }

  template <class Map>
  static double eval_named(const Node& n, const Map& binding) {
    switch (n.kind) {
      case Kind::constant: return n.value;
      case Kind::variable: {
        auto it = binding.find(n.name);
        if (it == binding.end())
          throw EvalError(EvalError::Kind::unbound_variable, "unbound variable '" + n.name + "'");
        return it->second;
      }
      case Kind::negate: return -eval_named(*n.lhs, binding);
      default: return apply(n.kind, eval_named(*n.lhs, binding), eval_named(*n.rhs, binding));
    }
  }

  static double eval_slots(const Node& n, std::span<const double> v) {
    switch (n.kind) {
      case Kind::constant: return n.value;
      case Kind::variable:
        if (n.slot >= v.size())
          throw EvalError(EvalError::Kind::unbound_variable, "unbound variable '" + n.name + "'");
        return v[n.slot];
      case Kind::negate: return -eval_slots(*n.lhs, v);
      default: return apply(n.kind, eval_slots(*n.lhs, v), eval_slots(*n.rhs, v));
    }
  }

  template <class Index>
  Expression bind_impl(const Index& index) const {
    const Node& n = *node_;
    switch (n.kind) {
      case Kind::constant: return *this;
      case Kind::variable: {
        auto it = index.find(n.name);
        if (it == index.end())
          throw std::invalid_argument("variable '" + n.name + "' is not a known series");
        return variable(n.name, it->second);
      }
      case Kind::negate: return negate(left().bind_impl(index));
      default: return binary(n.kind, left().bind_impl(index), right().bind_impl(index));
    }
  }

  static void collect(const Node& n, std::set<std::string>& out) {
    if (n.kind == Kind::variable) out.insert(n.name);
    if (n.lhs) collect(*n.lhs, out);
    if (n.rhs) collect(*n.rhs, out);
  }

  static int precedence(Kind k) {
    switch (k) {
      case Kind::add:
      case Kind::sub: return 1;
      case Kind::mul:
      case Kind::div: return 2;
      case Kind::negate: return 3;
      case Kind::pow: return 4;
      default: return 5;
    }
  }

  static void print(std::ostream& os, const Node& n, int parent) {
    int p = precedence(n.kind);
    bool paren = p < parent;
    if (paren) os << '(';
    switch (n.kind) {
      case Kind::constant: {
        std::ostringstream num;
        num.precision(17);
        num << n.value;
        if (n.value < 0 && parent > 0) os << '(' << num.str() << ')';
        else os << num.str();
        break;
      }
      case Kind::variable: os << n.name; break;
      case Kind::negate:
        os << '-';
        print(os, *n.lhs, 4);
        break;
      default: {
        static constexpr const char* ops[] = {"", "", "", "+", "-", "*", "/", "^"};
        // Left-associative operators need parentheses on a right child of
        // equal precedence; '^' needs them on the left.
        print(os, *n.lhs, n.kind == Kind::pow ? p + 1 : p);
        os << ops[static_cast<int>(n.kind)];
        print(os, *n.rhs, n.kind == Kind::pow ? p : p + 1);
      }
    }
    if (paren) os << ')';
  }

  std::shared_ptr<const Node> node_;
};

// Smart constructors with the minimal syntactic simplification used by the
// differentiator: constant folding, 0 and 1 identities, x^0 and x^1.
namespace build {

inline Expression c(double v) { return Expression::constant(v); }

inline Expression neg(const Expression& a) {
  if (a.is_constant()) return c(-a.value());
  if (a.kind() == Expression::Kind::negate) return a.left();
  return Expression::negate(a);
}

inline Expression add(const Expression& a, const Expression& b) {
  if (a.is_constant() && b.is_constant()) return c(a.value() + b.value());
  if (a.is_constant(0.0)) return b;
  if (b.is_constant(0.0)) return a;
  return Expression::binary(Expression::Kind::add, a, b);
}

inline Expression sub(const Expression& a, const Expression& b) {
  if (a.is_constant() && b.is_constant()) return c(a.value() - b.value());
  if (b.is_constant(0.0)) return a;
  if (a.is_constant(0.0)) return neg(b);
  return Expression::binary(Expression::Kind::sub, a, b);
}

inline Expression mul(const Expression& a, const Expression& b) {
  if (a.is_constant() && b.is_constant()) return c(a.value() * b.value());
  if (a.is_constant(0.0) || b.is_constant(0.0)) return c(0.0);
  if (a.is_constant(1.0)) return b;
  if (b.is_constant(1.0)) return a;
  if (a.is_constant(-1.0)) return neg(b);
  if (b.is_constant(-1.0)) return neg(a);
  return Expression::binary(Expression::Kind::mul, a, b);
}

inline Expression div(const Expression& a, const Expression& b) {
  if (a.is_constant() && b.is_constant() && b.value() != 0.0) return c(a.value() / b.value());
  if (a.is_constant(0.0)) return c(0.0);
  if (b.is_constant(1.0)) return a;
  return Expression::binary(Expression::Kind::div, a, b);
}

inline Expression pow(const Expression& base, double exponent) {
  if (exponent == 0.0) return c(1.0);
  if (exponent == 1.0) return base;
  if (base.is_constant()) {
    double r = std::pow(base.value(), exponent);
    if (std::isfinite(r)) return c(r);
  }
  return Expression::binary(Expression::Kind::pow, base, c(exponent));
}

}  // namespace build

namespace detail {

class Parser {
 public:
  explicit Parser(std::string_view text) : s_(text) {}

  Expression parse_all() {
    Expression e = expr();
    skip();
    if (pos_ != s_.size()) fail("unexpected character '" + std::string(1, s_[pos_]) + "'");
    return e;
  }

 private:
  [[noreturn]] void fail(const std::string& msg) const { throw ParseError(msg, pos_); }

  void skip() {
    while (pos_ < s_.size() && std::isspace(static_cast<unsigned char>(s_[pos_]))) ++pos_;
  }

  bool accept(char ch) {
    skip();
    if (pos_ < s_.size() && s_[pos_] == ch) {
      ++pos_;
      return true;
    }
    return false;
  }

  Expression expr() {
    Expression lhs = term();
    for (;;) {
      if (accept('+')) lhs = Expression::binary(Expression::Kind::add, lhs, term());
      else if (accept('-')) lhs = Expression::binary(Expression::Kind::sub, lhs, term());
      else return lhs;
    }
  }

  Expression term() {
    Expression lhs = factor();
    for (;;) {
      if (accept('*')) lhs = Expression::binary(Expression::Kind::mul, lhs, factor());
      else if (accept('/')) lhs = Expression::binary(Expression::Kind::div, lhs, factor());
      else return lhs;
    }
  }

  Expression factor() {
    Expression base = atom();
    skip();
    std::size_t at = pos_;
    if (!accept('^')) return base;
    Expression exponent = factor();
    if (!exponent.is_constant()) {
      double v;
      if (!fold(exponent, v, at)) throw ParseError("exponent must be a constant", at);
      exponent = Expression::constant(v);
    }
    return Expression::binary(Expression::Kind::pow, base, exponent);
  }

  Expression atom() {
    skip();
    if (pos_ >= s_.size()) {
      // Running out inside parentheses points at the innermost unclosed '('.
      if (!open_.empty()) throw ParseError("unclosed parenthesis", open_.back());
      fail("unexpected end of input");
    }
    char ch = s_[pos_];
    if (ch == '(') {
      open_.push_back(pos_++);
      Expression inner = expr();
      if (!accept(')')) {
        skip();
        if (pos_ >= s_.size()) throw ParseError("unclosed parenthesis", open_.back());
        fail("expected ')'");
      }
      open_.pop_back();
      return inner;
    }
    if (ch == '-') {
      ++pos_;
      return Expression::negate(atom());
    }
    if (std::isdigit(static_cast<unsigned char>(ch)) || ch == '.') return number();
    if (std::isalpha(static_cast<unsigned char>(ch)) || ch == '_') return identifier();
    fail("unexpected character '" + std::string(1, ch) + "'");
  }

  Expression number() {
    std::size_t start = pos_;
    auto digits = [&] {
      std::size_t n = 0;
      while (pos_ < s_.size() && std::isdigit(static_cast<unsigned char>(s_[pos_]))) ++pos_, ++n;
      return n;
    };
    std::size_t n = digits();
    if (pos_ < s_.size() && s_[pos_] == '.') {
      ++pos_;
      n += digits();
    }
    if (n == 0) fail("malformed number");
    if (pos_ < s_.size() && (s_[pos_] == 'e' || s_[pos_] == 'E')) {
      std::size_t save = pos_++;
      if (pos_ < s_.size() && (s_[pos_] == '+' || s_[pos_] == '-')) ++pos_;
      if (digits() == 0) pos_ = save;
    }
    return Expression::constant(std::stod(std::string(s_.substr(start, pos_ - start))));
  }

  Expression identifier() {
    std::size_t start = pos_;
    while (pos_ < s_.size()) {
      auto c = static_cast<unsigned char>(s_[pos_]);
      if (!(std::isalnum(c) || c == '_' || c == '.')) break;
      ++pos_;
    }
    return Expression::variable(std::string(s_.substr(start, pos_ - start)));
  }

  // Folds a variable-free subtree; false when it references a variable.
  static bool fold(const Expression& e, double& out, std::size_t at) {
    try {
      out = e.evaluate(std::span<const double>{});
      return true;
    } catch (const EvalError& err) {
      if (err.kind() == EvalError::Kind::unbound_variable) return false;
      throw ParseError(err.what(), at);
    }
  }

  std::string_view s_;
  std::size_t pos_ = 0;
  std::vector<std::size_t> open_;
};

}  // namespace detail

inline Expression parse_expression(std::string_view text) {
  return detail::Parser(text).parse_all();
}

namespace detail {

/// Replaces every variable-free subtree by its value (subtrees whose
/// evaluation fails are kept as they are).
inline Expression fold_constants(const Expression& e) {
  using K = Expression::Kind;
  if (e.kind() == K::constant || e.kind() == K::variable) return e;
  if (e.variables().empty()) {
    try {
      return Expression::constant(e.evaluate(std::span<const double>{}));
    } catch (const EvalError&) {
      return e;
    }
  }
  if (e.kind() == K::negate) return build::neg(fold_constants(e.left()));
  Expression l = fold_constants(e.left()), r = fold_constants(e.right());
  switch (e.kind()) {
    case K::add: return build::add(l, r);
    case K::sub: return build::sub(l, r);
    case K::mul: return build::mul(l, r);
    case K::div: return build::div(l, r);
    default: return build::pow(l, r.value());
  }
}

inline Expression derive(const Expression& e, std::string_view wrt);

}  // namespace detail

/// Symbolic partial derivative with respect to the series `wrt`.
inline Expression differentiate(const Expression& e, std::string_view wrt) {
  return detail::derive(detail::fold_constants(e), wrt);
}

inline Expression detail::derive(const Expression& e, std::string_view wrt) {
  using K = Expression::Kind;
  using namespace build;
  auto differentiate = [](const Expression& x, std::string_view v) { return derive(x, v); };
  switch (e.kind()) {
    case K::constant: return c(0.0);
    case K::variable: return c(e.name() == wrt ? 1.0 : 0.0);
    case K::negate: return neg(differentiate(e.left(), wrt));
    case K::add: return add(differentiate(e.left(), wrt), differentiate(e.right(), wrt));
    case K::sub: return sub(differentiate(e.left(), wrt), differentiate(e.right(), wrt));
    case K::mul: {
      Expression l = e.left(), r = e.right();
      return add(mul(differentiate(l, wrt), r), mul(l, differentiate(r, wrt)));
    }
    case K::div: {
      Expression l = e.left(), r = e.right();
      Expression dl = differentiate(l, wrt), dr = differentiate(r, wrt);
      if (dr.is_constant(0.0)) return div(dl, r);
      Expression num = sub(mul(dl, r), mul(l, dr));
      return div(num, pow(r, 2.0));
    }
    case K::pow: {
      double k = e.right().value();
      Expression base = e.left();
      return mul(mul(c(k), pow(base, k - 1.0)), differentiate(base, wrt));
    }
  }
  return c(0.0);
}

/// True when every first partial derivative simplifies to a constant.
inline bool is_linear(const Expression& e) {
  for (const auto& v : e.variables())
    if (!differentiate(e, v).is_constant()) return false;
  return true;
}

}  // namespace nlcr
