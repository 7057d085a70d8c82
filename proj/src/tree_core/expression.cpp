#include "treegress/expression.hpp"

#include "treegress/error.hpp"

#include <cmath>
#include <limits>

namespace treegress {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

enum class Op { Add, Sub, Mul, Div, Pow };

Op operator_of(const RankedSymbol& sym) {
  if (sym.name == "+" && sym.rank >= 2) return Op::Add;
  if (sym.name == "-" && (sym.rank == 1 || sym.rank == 2)) return Op::Sub;
  if (sym.name == "*" && sym.rank >= 2) return Op::Mul;
  if (sym.name == "/" && sym.rank == 2) return Op::Div;
  if (sym.name == "pow" && sym.rank == 2) return Op::Pow;
  throw Error(ErrorCode::UnknownOperator, "`" + sym.name + "`/" + std::to_string(sym.rank));
}

double safe_pow(double base, double exponent) {
  if (base < 0.0 && std::trunc(exponent) != exponent) return kNaN;
  return std::pow(base, exponent);
}

class Evaluator {
 public:
  Evaluator(const SymbolicExpression& expr, const Alphabet& alphabet, const InputColumns& inputs, std::size_t rows)
      : expr_(expr), alphabet_(alphabet), inputs_(inputs), rows_(rows) {}

  std::vector<double> run(const Tree& node) {
    const auto& sym = alphabet_[node.symbol];
    switch (sym.kind) {
      case SymbolKind::ConstMarker:
        return std::vector<double>(rows_, expr_.theta_c().at(next_c_++));
      case SymbolKind::DiscMarker:
        return std::vector<double>(rows_, to_double(expr_.theta_d().at(next_d_++)));
      case SymbolKind::Literal:
        return std::vector<double>(rows_, sym.literal);
      case SymbolKind::Hole:
        throw Error(ErrorCode::UnknownSymbol, "cannot evaluate a context hole");
      case SymbolKind::Variable: {
        auto it = inputs_.find(sym.name);
        if (it == inputs_.end()) throw Error(ErrorCode::MissingInput, "no input column `" + sym.name + "`");
        return std::vector<double>(it->second.begin(), it->second.end());
      }
      case SymbolKind::Operator:
        break;
    }
    const Op op = operator_of(sym);
    std::vector<double> acc = run(node.children[0]);
    if (op == Op::Sub && node.children.size() == 1) {
      for (auto& v : acc) v = -v;
      return acc;
    }
    for (std::size_t k = 1; k < node.children.size(); ++k) {
      const std::vector<double> rhs = run(node.children[k]);
      for (std::size_t i = 0; i < rows_; ++i) {
        switch (op) {
          case Op::Add: acc[i] += rhs[i]; break;
          case Op::Sub: acc[i] -= rhs[i]; break;
          case Op::Mul: acc[i] *= rhs[i]; break;
          case Op::Div: acc[i] = std::fabs(rhs[i]) < 1e-300 ? kNaN : acc[i] / rhs[i]; break;
          case Op::Pow: acc[i] = safe_pow(acc[i], rhs[i]); break;
        }
      }
    }
    return acc;
  }

 private:
  const SymbolicExpression& expr_;
  const Alphabet& alphabet_;
  const InputColumns& inputs_;
  std::size_t rows_;
  std::size_t next_c_ = 0;
  std::size_t next_d_ = 0;
};

}  // namespace

SymbolicExpression::SymbolicExpression(const Alphabet& alphabet, Tree tree, std::vector<double> theta_c,
                                       std::vector<Rational> theta_d, std::vector<std::size_t> ties)
    : tree_(std::move(tree)), theta_c_(std::move(theta_c)), theta_d_(std::move(theta_d)), ties_(std::move(ties)) {
  const std::size_t nc = count_const_markers(tree_, alphabet);
  const std::size_t nd = count_disc_markers(tree_, alphabet);
  if (theta_c_.size() != nc) {
    throw Error(ErrorCode::SizeMismatch, "tree has " + std::to_string(nc) + " continuous markers but theta_c has " +
                                             std::to_string(theta_c_.size()) + " entries");
  }
  if (theta_d_.size() != nd) {
    throw Error(ErrorCode::SizeMismatch, "tree has " + std::to_string(nd) + " discrete markers but theta_d has " +
                                             std::to_string(theta_d_.size()) + " entries");
  }
  for (double v : theta_c_) {
    if (!std::isfinite(v)) throw Error(ErrorCode::SizeMismatch, "theta_c entries must be finite");
  }
  if (!ties_.empty()) {
    if (ties_.size() != nc) throw Error(ErrorCode::SizeMismatch, "tie table size differs from theta_c");
    for (std::size_t i = 0; i < nc; ++i) {
      const std::size_t rep = ties_[i];
      if (rep > i || ties_[rep] != rep) throw Error(ErrorCode::SizeMismatch, "tie table is not canonical");
      if (theta_c_[i] != theta_c_[rep]) throw Error(ErrorCode::SizeMismatch, "tied parameters differ");
    }
  }
}

std::size_t count_const_markers(const Tree& tree, const Alphabet& alphabet) {
  std::size_t n = 0;
  for_each_preorder(tree, [&](const Tree& t) { n += alphabet.is_const_marker(t.symbol) ? 1 : 0; });
  return n;
}

std::size_t count_disc_markers(const Tree& tree, const Alphabet& alphabet) {
  std::size_t n = 0;
  for_each_preorder(tree, [&](const Tree& t) { n += alphabet.is_disc_marker(t.symbol) ? 1 : 0; });
  return n;
}

const std::vector<double>& Dataset::column(std::string_view name) const {
  for (std::size_t i = 0; i < input_names.size(); ++i) {
    if (input_names[i] == name) return inputs[i];
  }
  throw Error(ErrorCode::MissingInput, "no column `" + std::string(name) + "`");
}

InputColumns columns_of(const Dataset& data) {
  InputColumns cols;
  for (std::size_t i = 0; i < data.input_names.size(); ++i) {
    cols.emplace(data.input_names[i], std::span<const double>(data.inputs[i]));
  }
  return cols;
}

std::vector<double> eval_expression(const SymbolicExpression& expr, const Alphabet& alphabet,
                                    const InputColumns& inputs) {
  std::size_t rows = 1;
  bool first = true;
  for (const auto& [name, col] : inputs) {
    if (first) {
      rows = col.size();
      first = false;
    } else if (col.size() != rows) {
      throw Error(ErrorCode::LengthMismatch, "input column `" + name + "` has a different length");
    }
  }
  Evaluator ev(expr, alphabet, inputs, rows);
  return ev.run(expr.tree());
}

std::string to_line(const SymbolicExpression& expr, const Alphabet& alphabet) {
  std::string out = to_text(expr.tree(), alphabet);
  out += '\t';
  for (std::size_t i = 0; i < expr.theta_c().size(); ++i) {
    if (i) out += ',';
    out += format_double(expr.theta_c()[i]);
  }
  out += '\t';
  for (std::size_t i = 0; i < expr.theta_d().size(); ++i) {
    if (i) out += ',';
    out += format_fraction(expr.theta_d()[i]);
  }
  return out;
}

}  // namespace treegress
