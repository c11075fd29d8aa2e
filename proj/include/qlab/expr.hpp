#pragma once

#include "qlab/common.hpp"

#include <cctype>
#include <map>
#include <memory>
#include <string>
#include <utility>
#include <vector>

namespace qlab {

/// Arithmetic expression language for model files: literals, named constants,
/// the scale `n`, state coordinates `x1..xd`, operators + - * / ^, and the
/// functions min, max, pos (positive part), neg, abs, sqrt, floor, exp, log.
class expression {
 public:
  struct context {
    double n = 0.0;
    const double* x = nullptr;  // x1..xd
    int d = 0;
  };

  static expression parse(const std::string& text,
                          const std::map<std::string, double>& constants = {}) {
    parser p{text, 0, &constants};
    node_ptr root = p.parse_sum();
    p.skip_ws();
    if (p.pos != text.size())
      throw model_error("expression: trailing input at '" + text.substr(p.pos) + "'");
    expression e;
    e.root_ = std::move(root);
    e.text_ = text;
    return e;
  }

  double eval(double n, const vec& x) const {
    context c{n, x.data(), static_cast<int>(x.size())};
    return root_->eval(c);
  }
  double eval_scalar(double n, double x1) const {
    context c{n, &x1, 1};
    return root_->eval(c);
  }

  const std::string& text() const { return text_; }

 private:
  struct node;
  using node_ptr = std::shared_ptr<const node>;

  enum class op { constant, coord, scale, add, sub, mul, div, pow, neg_sign, call };
  enum class fn { min, max, pos, neg, abs, sqrt, floor, exp, log };

  struct node {
    op kind;
    double value = 0.0;       // constant
    int coord_index = 0;      // coord (0-based)
    fn func = fn::min;        // call
    node_ptr a, b;

    double eval(const context& c) const {
      switch (kind) {
        case op::constant: return value;
        case op::scale: return c.n;
        case op::coord:
          if (coord_index >= c.d)
            throw model_error("expression: coordinate x" + std::to_string(coord_index + 1) +
                              " out of range for dimension " + std::to_string(c.d));
          return c.x[coord_index];
        case op::add: return a->eval(c) + b->eval(c);
        case op::sub: return a->eval(c) - b->eval(c);
        case op::mul: return a->eval(c) * b->eval(c);
        case op::div: return a->eval(c) / b->eval(c);
        case op::pow: return std::pow(a->eval(c), b->eval(c));
        case op::neg_sign: return -a->eval(c);
        case op::call: {
          const double u = a->eval(c);
          switch (func) {
            case fn::min: return std::min(u, b->eval(c));
            case fn::max: return std::max(u, b->eval(c));
            case fn::pos: return pos_part(u);
            case fn::neg: return neg_part(u);
            case fn::abs: return std::fabs(u);
            case fn::sqrt: return std::sqrt(u);
            case fn::floor: return std::floor(u);
            case fn::exp: return std::exp(u);
            case fn::log: return std::log(u);
          }
          return 0.0;
        }
      }
      return 0.0;
    }
  };

  struct parser {
    const std::string& s;
    std::size_t pos;
    const std::map<std::string, double>* constants;

    void skip_ws() {
      while (pos < s.size() && std::isspace(static_cast<unsigned char>(s[pos]))) ++pos;
    }
    bool consume(char c) {
      skip_ws();
      if (pos < s.size() && s[pos] == c) {
        ++pos;
        return true;
      }
      return false;
    }

    node_ptr parse_sum() {
      node_ptr lhs = parse_product();
      for (;;) {
        if (consume('+'))
          lhs = binary(op::add, lhs, parse_product());
        else if (consume('-'))
          lhs = binary(op::sub, lhs, parse_product());
        else
          return lhs;
      }
    }
    node_ptr parse_product() {
      node_ptr lhs = parse_unary();
      for (;;) {
        if (consume('*'))
          lhs = binary(op::mul, lhs, parse_unary());
        else if (consume('/'))
          lhs = binary(op::div, lhs, parse_unary());
        else
          return lhs;
      }
    }
    node_ptr parse_unary() {
      if (consume('-')) {
        auto n = std::make_shared<node>();
        n->kind = op::neg_sign;
        n->a = parse_unary();
        return n;
      }
      return parse_power();
    }
    node_ptr parse_power() {
      node_ptr base = parse_atom();
      if (consume('^')) return binary(op::pow, base, parse_unary());  // right assoc
      return base;
    }
    node_ptr parse_atom() {
      skip_ws();
      if (pos >= s.size()) throw model_error("expression: unexpected end of input");
      const char c = s[pos];
      if (c == '(') {
        ++pos;
        node_ptr e = parse_sum();
        if (!consume(')')) throw model_error("expression: missing ')'");
        return e;
      }
      if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') return parse_number();
      if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') return parse_ident();
      throw model_error(std::string("expression: unexpected character '") + c + "'");
    }
    node_ptr parse_number() {
      std::size_t end = pos;
      while (end < s.size() &&
             (std::isdigit(static_cast<unsigned char>(s[end])) || s[end] == '.' ||
              s[end] == 'e' || s[end] == 'E' ||
              ((s[end] == '+' || s[end] == '-') && (s[end - 1] == 'e' || s[end - 1] == 'E'))))
        ++end;
      auto n = std::make_shared<node>();
      n->kind = op::constant;
      n->value = std::stod(s.substr(pos, end - pos));
      pos = end;
      return n;
    }
    node_ptr parse_ident() {
      std::size_t end = pos;
      while (end < s.size() &&
             (std::isalnum(static_cast<unsigned char>(s[end])) || s[end] == '_'))
        ++end;
      const std::string name = s.substr(pos, end - pos);
      pos = end;
      if (name == "n") {
        auto n = std::make_shared<node>();
        n->kind = op::scale;
        return n;
      }
      if (name.size() >= 2 && name[0] == 'x') {
        bool digits = true;
        for (std::size_t i = 1; i < name.size(); ++i)
          digits = digits && std::isdigit(static_cast<unsigned char>(name[i]));
        if (digits) {
          auto n = std::make_shared<node>();
          n->kind = op::coord;
          n->coord_index = std::stoi(name.substr(1)) - 1;
          if (n->coord_index < 0) throw model_error("expression: bad coordinate " + name);
          return n;
        }
      }
      static const std::map<std::string, fn> fns = {
          {"min", fn::min}, {"max", fn::max},   {"pos", fn::pos},
          {"neg", fn::neg}, {"abs", fn::abs},   {"sqrt", fn::sqrt},
          {"floor", fn::floor}, {"exp", fn::exp}, {"log", fn::log}};
      skip_ws();
      if (pos < s.size() && s[pos] == '(') {
        auto it = fns.find(name);
        if (it == fns.end()) throw model_error("expression: unknown function '" + name + "'");
        ++pos;
        auto n = std::make_shared<node>();
        n->kind = op::call;
        n->func = it->second;
        n->a = parse_sum();
        if (it->second == fn::min || it->second == fn::max) {
          if (!consume(',')) throw model_error("expression: " + name + " takes two arguments");
          n->b = parse_sum();
        }
        if (!consume(')')) throw model_error("expression: missing ')' after " + name);
        return n;
      }
      auto it = constants->find(name);
      if (it == constants->end()) throw model_error("expression: unknown identifier '" + name + "'");
      auto n = std::make_shared<node>();
      n->kind = op::constant;
      n->value = it->second;
      return n;
    }
    static node_ptr binary(op kind, node_ptr a, node_ptr b) {
      auto n = std::make_shared<node>();
      n->kind = kind;
      n->a = std::move(a);
      n->b = std::move(b);
      return n;
    }
  };

  node_ptr root_;
  std::string text_;
};

}  // namespace qlab
