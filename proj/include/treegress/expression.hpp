#pragma once

#include "treegress/numeric.hpp"
#include "treegress/tree.hpp"

#include <map>
#include <span>
#include <string>
#include <vector>

namespace treegress {

/// A candidate equation: tree structure plus the parameters bound to its
/// marker leaves. theta_c holds one entry per continuous-marker occurrence in
/// pre-order (all `...#` tags except `d#`); theta_d one entry per `d#`.
///
/// `ties` optionally maps each theta_c index to the index of the entry it is
/// tied to (its group representative, always the group's first index). Tied
/// entries hold equal values. Empty means every entry is free.
class SymbolicExpression {
 public:
  SymbolicExpression(const Alphabet& alphabet, Tree tree, std::vector<double> theta_c = {},
                     std::vector<Rational> theta_d = {}, std::vector<std::size_t> ties = {});

  const Tree& tree() const { return tree_; }
  const std::vector<double>& theta_c() const { return theta_c_; }
  const std::vector<Rational>& theta_d() const { return theta_d_; }
  const std::vector<std::size_t>& ties() const { return ties_; }

  friend bool operator==(const SymbolicExpression&, const SymbolicExpression&) = default;

 private:
  Tree tree_;
  std::vector<double> theta_c_;
  std::vector<Rational> theta_d_;
  std::vector<std::size_t> ties_;
};

/// Number of continuous / discrete marker occurrences.
std::size_t count_const_markers(const Tree& tree, const Alphabet& alphabet);
std::size_t count_disc_markers(const Tree& tree, const Alphabet& alphabet);

/// Tabular data: named input columns and a target column of equal length.
struct Dataset {
  std::vector<std::string> input_names;
  std::vector<std::vector<double>> inputs;  // one column per name
  std::string target_name;
  std::vector<double> targets;

  std::size_t rows() const { return targets.size(); }
  const std::vector<double>& column(std::string_view name) const;
};

using InputColumns = std::map<std::string, std::span<const double>, std::less<>>;

InputColumns columns_of(const Dataset& data);

/// Evaluates the expression at every row. Non-finite results (division by
/// |x| < 1e-300, negative base with non-integer exponent, overflow) are NaN
/// or ±inf in the output; callers treat them as impossible.
/// Throws Error{MissingInput | UnknownOperator | LengthMismatch}.
std::vector<double> eval_expression(const SymbolicExpression& expr, const Alphabet& alphabet,
                                    const InputColumns& inputs);

/// Tree text followed by the parameters, e.g. `(* c# x)\t2.5\t`.
std::string to_line(const SymbolicExpression& expr, const Alphabet& alphabet);

}  // namespace treegress
