#pragma once

#include "treegress/expression.hpp"
#include "treegress/numeric.hpp"
#include "treegress/random.hpp"
#include "treegress/tree.hpp"

#include <cstddef>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

namespace treegress {

struct SourcePos {
  std::size_t line = 0;
  std::size_t column = 0;
};

/// Probabilistic regular tree expression.
///
///   Symbol  f(e1, ..., en)        emit f, children from e1..en
///   Var     $x                    placeholder substituted by the binder of $x
///   Choice  choice{ w1: e1, ... } pick one branch with probability wi
///   Concat  l . subst($x, r)      every $x in l becomes an independent sample of r
///   Iter    iter $x { b }         every $x in b becomes an independent sample of the iteration
class Prte {
 public:
  enum class Kind { Symbol, Var, Choice, Concat, Iter };

  static Prte symbol(SymbolId symbol, std::vector<Prte> children = {}, SourcePos pos = {});
  static Prte var(std::string name, SourcePos pos = {});
  static Prte choice(std::vector<Rational> weights, std::vector<Prte> branches, SourcePos pos = {});
  static Prte concat(Prte left, std::string var, Prte right, SourcePos pos = {});
  static Prte iter(std::string var, Prte body, SourcePos pos = {});

  Kind kind() const { return kind_; }
  SymbolId symbol_id() const { return symbol_; }
  /// Variable name for Var, Concat and Iter.
  const std::string& var_name() const { return var_; }
  /// Symbol: arguments. Choice: branches. Concat: {left, right}. Iter: {body}.
  const std::vector<Prte>& children() const { return children_; }
  const std::vector<Rational>& weights() const { return weights_; }
  SourcePos pos() const { return pos_; }

  /// Structural equality; source positions are ignored.
  friend bool operator==(const Prte& a, const Prte& b);

 private:
  Kind kind_ = Kind::Symbol;
  SymbolId symbol_ = 0;
  std::string var_;
  std::vector<Prte> children_;
  std::vector<Rational> weights_;
  SourcePos pos_;
};

/// A pRTE flattened into indexed nodes with every variable resolved to its
/// binder. A Var node's `target` is the right operand of its Concat binder or
/// the Iter node that binds it. Choice, Var, Concat and Iter nodes are "unit"
/// nodes: they emit no symbol. Construction validates the expression.
class Grammar {
 public:
  struct Node {
    Prte::Kind kind = Prte::Kind::Symbol;
    SymbolId symbol = 0;
    std::vector<std::size_t> children;  // Symbol args, Choice branches, Concat {l, r}, Iter {body}
    std::vector<double> weights;        // Choice
    std::vector<Rational> exact_weights;
    std::size_t target = 0;             // Var
    SourcePos pos;
  };

  /// Strongly connected component of the unit graph. Components are listed so
  /// that every unit successor outside a component is solved before it.
  struct UnitComponent {
    std::vector<std::size_t> members;
    bool cyclic = false;
    // (I - A)^{-1} over the members when cyclic, row-major.
    std::vector<double> inverse;
    std::vector<Rational> exact_inverse;
  };

  /// Throws Error{UnboundVariable | WeightSumError | NonTerminatingIter}.
  explicit Grammar(const Prte& root);

  const std::vector<Node>& nodes() const { return nodes_; }
  const Node& node(std::size_t i) const { return nodes_[i]; }
  std::size_t root() const { return root_; }
  const std::vector<UnitComponent>& unit_components() const { return components_; }
  bool has_unit_cycles() const { return has_unit_cycles_; }

  /// Unit successors with their probabilities.
  template <class W, class F>
  void for_each_unit_edge(std::size_t i, F&& f) const;

 private:
  std::size_t flatten(const Prte& e, std::vector<std::pair<std::string, std::size_t>>& scope);
  void check_termination() const;
  void build_unit_components();

  std::vector<Node> nodes_;
  std::size_t root_ = 0;
  std::vector<UnitComponent> components_;
  bool has_unit_cycles_ = false;
};

template <class W>
W weight_as(const Grammar::Node& n, std::size_t k);
template <>
inline double weight_as<double>(const Grammar::Node& n, std::size_t k) { return n.weights[k]; }
template <>
inline Rational weight_as<Rational>(const Grammar::Node& n, std::size_t k) { return n.exact_weights[k]; }

template <class W, class F>
void Grammar::for_each_unit_edge(std::size_t i, F&& f) const {
  const Node& n = nodes_[i];
  switch (n.kind) {
    case Prte::Kind::Symbol: return;
    case Prte::Kind::Choice:
      for (std::size_t k = 0; k < n.children.size(); ++k) f(n.children[k], weight_as<W>(n, k));
      return;
    case Prte::Kind::Var: f(n.target, W(1)); return;
    case Prte::Kind::Concat:
    case Prte::Kind::Iter: f(n.children[0], W(1)); return;
  }
}

/// Solves the unit equations v[u] = sum_k w_k v[succ_k] for every unit node,
/// given v already filled in for all Symbol nodes. V must support V + W*V.
template <class W, class V>
void solve_unit_values(const Grammar& g, std::vector<V>& v, const V& zero);

/// Prior over one continuous parameter role.
struct ParamPrior {
  enum class Family { Exponential, Normal };
  Family family = Family::Normal;
  double a = 0.0;  // rate, or mean
  double b = 1.0;  // unused, or stddev

  static ParamPrior exponential(double rate) { return {Family::Exponential, rate, 0.0}; }
  static ParamPrior normal(double mean, double stddev) { return {Family::Normal, mean, stddev}; }

  double log_density(double x) const;
  double sample(Rng& rng) const;
  /// Natural length scale: 1/rate or stddev.
  double scale() const;

  friend bool operator==(const ParamPrior&, const ParamPrior&) = default;
};

/// All occurrences of `marker` below the same nearest ancestor whose symbol is
/// named `scope` share one parameter value.
struct TieRule {
  SymbolId marker = 0;
  std::string scope;
  friend bool operator==(const TieRule&, const TieRule&) = default;
};

/// A complete prior: tree series (the pRTE) plus parameter priors.
struct PriorSpec {
  std::string name;
  std::shared_ptr<const Alphabet> alphabet;
  Prte root;
  std::shared_ptr<const Grammar> grammar;
  unsigned max_depth = 50;
  std::map<SymbolId, ParamPrior> marker_priors;  // missing markers use N(0, 1)
  std::vector<Rational> theta_d_support;
  std::vector<TieRule> ties;
  bool explicit_alphabet = false;

  const ParamPrior& prior_for(SymbolId marker) const;
};

/// Builds and validates a PriorSpec around an already parsed expression.
PriorSpec make_prior(std::shared_ptr<const Alphabet> alphabet, Prte root, unsigned max_depth = 50);

/// Parses pRTE text. With `extend`, unknown symbols are added to `alphabet`
/// (rank taken from use); otherwise they are an error.
/// Throws SyntaxError{SyntaxError | WeightSumError | UnboundVariable | NonTerminatingIter | UnknownSymbol}.
Prte parse_prte(std::string_view text, Alphabet& alphabet, bool extend = true);

/// Canonical single-expression text. Top-level substitution chains are put on
/// separate lines.
std::string format_prte(const Prte& e, const Alphabet& alphabet);

/// Parses a prior file: `@` directives followed by pRTE text.
PriorSpec parse_prior(std::string_view text);
std::string format_prior(const PriorSpec& prior);

/// Draws a tree; depth overflows are discarded and redrawn.
/// Throws Error{DepthBudgetExhausted} after 1000 consecutive overflows.
Tree sample_tree(const PriorSpec& prior, Rng& rng);

/// sample_tree followed by parameter draws from the marker priors.
SymbolicExpression sample_expression(const PriorSpec& prior, Rng& rng);

struct Density {
  double value = 0.0;
  std::optional<Rational> exact;
};

/// Total probability of all derivations of `tree`. Depth is not truncated here.
Density prte_density(const PriorSpec& prior, const Tree& tree);
double prte_density_value(const PriorSpec& prior, const Tree& tree);
Rational prte_density_exact(const PriorSpec& prior, const Tree& tree);

/// One free parameter. Continuous slots index theta_c, discrete ones theta_d.
struct ParamSlot {
  SymbolId tag = 0;
  std::vector<std::size_t> members;
  std::vector<Address> addresses;  // pre-order, parallel to members
};

/// Free-parameter structure of a tree under a prior's tie rules. Slots are
/// ordered by the pre-order position of their first member.
struct ParamLayout {
  std::vector<ParamSlot> continuous;
  std::vector<ParamSlot> discrete;
  std::size_t theta_c_size = 0;
  std::size_t theta_d_size = 0;

  /// Tie table for SymbolicExpression (empty when every slot has one member).
  std::vector<std::size_t> ties() const;
};

ParamLayout param_layout(const Tree& tree, const PriorSpec& prior);

std::vector<double> free_continuous(const SymbolicExpression& expr, const ParamLayout& layout);
std::vector<Rational> free_discrete(const SymbolicExpression& expr, const ParamLayout& layout);
SymbolicExpression bind_params(const PriorSpec& prior, Tree tree, const ParamLayout& layout,
                               const std::vector<double>& continuous, const std::vector<Rational>& discrete);

/// log p(theta_c | t) + log p(theta_d | t); -inf outside the support.
double log_param_prior(const PriorSpec& prior, const ParamLayout& layout, const std::vector<double>& continuous,
                       const std::vector<Rational>& discrete);

// ---------------------------------------------------------------------------

template <class W, class V>
void solve_unit_values(const Grammar& g, std::vector<V>& v, const V& zero) {
  for (const auto& comp : g.unit_components()) {
    if (!comp.cyclic) {
      const std::size_t u = comp.members.front();
      V acc = zero;
      g.for_each_unit_edge<W>(u, [&](std::size_t s, const W& w) { acc = acc + w * v[s]; });
      v[u] = std::move(acc);
      continue;
    }
    const std::size_t m = comp.members.size();
    // b_i: contributions from successors outside the component.
    std::vector<V> rhs(m, zero);
    for (std::size_t i = 0; i < m; ++i) {
      g.for_each_unit_edge<W>(comp.members[i], [&](std::size_t s, const W& w) {
        bool inside = false;
        for (std::size_t j = 0; j < m; ++j) inside = inside || comp.members[j] == s;
        if (!inside) rhs[i] = rhs[i] + w * v[s];
      });
    }
    for (std::size_t i = 0; i < m; ++i) {
      V acc = zero;
      for (std::size_t j = 0; j < m; ++j) {
        W coef;
        if constexpr (std::is_same_v<W, double>) {
          coef = comp.inverse[i * m + j];
        } else {
          coef = comp.exact_inverse[i * m + j];
        }
        acc = acc + coef * rhs[j];
      }
      v[comp.members[i]] = std::move(acc);
    }
  }
}

}  // namespace treegress
