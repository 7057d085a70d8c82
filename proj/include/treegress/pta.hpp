#pragma once

#include "treegress/numeric.hpp"
#include "treegress/prte.hpp"
#include "treegress/random.hpp"
#include "treegress/tree.hpp"

#include <cstddef>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace treegress {

/// Probabilistic top-down tree automaton.
///
/// A run assigns a state to every node. Its weight is mu(root state) times,
/// for each inner node labeled f in state q with child states q1..qn, the
/// transition weight delta(f, q -> q1..qn). A run succeeds when every leaf's
/// (state, symbol) pair is final. A tree's value is the total weight of its
/// successful runs.
///
/// Weights are kept in double and, when every weight was given exactly, also
/// as rationals.
class Pta {
 public:
  struct Transition {
    SymbolId symbol = 0;
    std::size_t from = 0;
    std::vector<std::size_t> to;
    double p = 0.0;
    Rational exact;
  };

  Pta(std::shared_ptr<const Alphabet> alphabet, std::size_t states);

  /// One state, mu = 1, every transition weight 1, every (state, leaf) pair
  /// final: evaluates to 1 on every tree. The neutral element of product().
  static Pta universal(std::shared_ptr<const Alphabet> alphabet);

  void set_initial(std::size_t state, const Rational& p);
  void set_initial(std::size_t state, double p);
  void add_transition(SymbolId symbol, std::size_t from, std::vector<std::size_t> to, const Rational& p);
  void add_transition(SymbolId symbol, std::size_t from, std::vector<std::size_t> to, double p);
  void add_final(std::size_t state, SymbolId symbol);
  void set_state_name(std::size_t state, std::string name);

  const std::shared_ptr<const Alphabet>& alphabet() const { return alphabet_; }
  std::size_t num_states() const { return initial_.size(); }
  const std::vector<double>& initial() const { return initial_; }
  const std::vector<Rational>& initial_exact() const { return initial_exact_; }
  const std::vector<Transition>& transitions() const { return transitions_; }
  const std::set<std::pair<std::size_t, SymbolId>>& finals() const { return finals_; }
  bool is_final(std::size_t state, SymbolId symbol) const { return finals_.contains({state, symbol}); }
  const std::string& state_name(std::size_t state) const { return names_.at(state); }
  /// True when every weight has an exact rational value.
  bool exact() const { return exact_; }

  /// Indices into transitions() leaving `state` with `symbol`.
  const std::vector<std::size_t>& outgoing(std::size_t state, SymbolId symbol) const;
  /// Indices into transitions() leaving `state`, any symbol.
  const std::vector<std::size_t>& outgoing(std::size_t state) const;

  /// Checks the automaton invariants: mu sums to 1 within 1e-12, every
  /// transition weight is positive, each (f, q) row sums to at most 1 + 1e-12,
  /// tuple arity matches the symbol rank, every state is reachable.
  /// Returns a description of each violation.
  std::vector<std::string> check() const;

  /// Debug dump: {states, initial, transitions: [{symbol, from, to, p}], finals}.
  std::string to_json() const;

 private:
  void push_transition(Transition t);

  std::shared_ptr<const Alphabet> alphabet_;
  std::vector<double> initial_;
  std::vector<Rational> initial_exact_;
  std::vector<Transition> transitions_;
  std::set<std::pair<std::size_t, SymbolId>> finals_;
  std::vector<std::string> names_;
  std::map<std::pair<std::size_t, SymbolId>, std::vector<std::size_t>> by_state_symbol_;
  std::vector<std::vector<std::size_t>> by_state_;
  bool exact_ = true;
};

/// Compiles a prior's pRTE. States are the symbol-emitting positions of the
/// expression; leaf positions with equal symbols share one state. Unreachable
/// states are removed. Throws Error{StateBudgetExceeded} above `state_budget`.
Pta compile(const PriorSpec& prior, std::size_t state_budget = 10000);

/// Factor graph of a tree under an automaton: one state variable per node
/// (pre-order index), the observed symbol of each node, and one factor per
/// node linking its state, symbol and child states. Node 0 is the root and
/// carries the initial-distribution factor.
class FactorGraph {
 public:
  /// Throws Error{AlphabetMismatch} when the tree uses symbols outside the automaton's alphabet.
  FactorGraph(const Pta& pta, const Tree& tree);

  std::size_t size() const { return symbols_.size(); }
  SymbolId symbol(std::size_t node) const { return symbols_[node]; }
  const std::vector<std::size_t>& children(std::size_t node) const { return children_[node]; }
  std::ptrdiff_t parent(std::size_t node) const { return parent_[node]; }
  /// Node index of a Gorn address.
  std::size_t node_at(const Address& address) const;

  /// Children-before-parents order (reverse pre-order).
  std::vector<std::size_t> default_order() const;

  /// Eliminates state variables in `order`, which must list every node after
  /// all of its children, and returns the tree's value.
  template <class W>
  W contract(const std::vector<std::size_t>& order) const;

  /// Upward messages m[node][q]: total weight of successful runs of the
  /// subtree at `node` that start in state q. Validates `order` like contract().
  template <class W>
  std::vector<std::vector<W>> upward(const std::vector<std::size_t>& order) const;

  /// Upward message of one node given its children's messages.
  template <class W>
  std::vector<W> message(std::size_t node, const std::vector<std::vector<W>>& msgs) const;

 private:
  const Pta& pta_;
  std::vector<SymbolId> symbols_;
  std::vector<std::vector<std::size_t>> children_;
  std::vector<std::ptrdiff_t> parent_;
  std::vector<Address> addresses_;
};

/// Tree value by leaf-to-root factor-graph contraction.
/// Throws Error{AlphabetMismatch}.
double pta_eval(const Pta& pta, const Tree& tree);
/// Exact value; throws Error{AlphabetMismatch}, or std::logic_error when the automaton is not exact.
Rational pta_eval_exact(const Pta& pta, const Tree& tree);
Density pta_density(const Pta& pta, const Tree& tree);

/// Re-labels a tree over `from` into the automaton's alphabet by (name, rank).
/// Throws Error{AlphabetMismatch} for symbols the automaton does not know.
Tree translate_tree(const Tree& tree, const Alphabet& from, const Alphabet& to);

/// Upward messages at the root: value of `tree` started in each state.
std::vector<double> state_likelihoods(const Pta& pta, const Tree& tree);

/// Normalized distribution of the state at the single hole `?` of `context`.
/// Throws Error{ImpossibleContext} when no state is possible, and
/// Error{UnknownSymbol} when the context does not have exactly one hole leaf.
std::vector<double> context_marginal(const Pta& pta, const Tree& context);
/// Same, with the subtree at `address` treated as the hole.
std::vector<double> context_marginal(const Pta& pta, const Tree& tree, const Address& address);

struct GeneratedTree {
  Tree tree;
  /// Probability that the generative process started in the given state yields this tree (sum over runs).
  double probability = 0.0;
};

/// One generation attempt from `start`. Options at a state are its
/// transitions plus its final pairs (weight 1 each). Returns nullopt when the
/// tree grows deeper than `max_depth` or a dead end is drawn.
/// Throws Error{NotGenerative} when a state's options weigh more than 1.
std::optional<GeneratedTree> try_sample_from_state(const Pta& pta, std::size_t start, Rng& rng,
                                                   std::size_t max_depth);
/// Retries failed attempts; throws Error{DepthBudgetExhausted} after 1000.
GeneratedTree sample_from_state(const Pta& pta, std::size_t start, Rng& rng, std::size_t max_depth = 50);

/// Product automaton over state pairs; evaluates to the pointwise product of
/// the two series (not renormalized). Alphabets are merged by (name, rank).
/// Throws Error{StateBudgetExceeded}.
Pta product(const Pta& a, const Pta& b, std::size_t state_budget = 10000);

// ---------------------------------------------------------------------------

namespace detail {
template <class W>
W pta_weight(const Pta::Transition& t) {
  if constexpr (std::is_same_v<W, double>) {
    return t.p;
  } else {
    return t.exact;
  }
}
template <class W>
W pta_initial(const Pta& pta, std::size_t q) {
  if constexpr (std::is_same_v<W, double>) {
    return pta.initial()[q];
  } else {
    return pta.initial_exact()[q];
  }
}
}  // namespace detail

template <class W>
std::vector<W> FactorGraph::message(std::size_t node, const std::vector<std::vector<W>>& msgs) const {
  const std::size_t nq = pta_.num_states();
  std::vector<W> m(nq, W(0));
  const SymbolId sym = symbols_[node];
  const auto& kids = children_[node];
  for (std::size_t q = 0; q < nq; ++q) {
    if (kids.empty()) {
      if (pta_.is_final(q, sym)) m[q] = W(1);
      continue;
    }
    for (std::size_t ti : pta_.outgoing(q, sym)) {
      const auto& t = pta_.transitions()[ti];
      W w = detail::pta_weight<W>(t);
      for (std::size_t k = 0; k < kids.size() && w != W(0); ++k) w *= msgs[kids[k]][t.to[k]];
      m[q] += w;
    }
  }
  return m;
}

template <class W>
std::vector<std::vector<W>> FactorGraph::upward(const std::vector<std::size_t>& order) const {
  std::vector<std::vector<W>> msgs(size());
  std::vector<char> done(size(), 0);
  for (std::size_t node : order) {
    if (node >= size() || done[node]) throw std::invalid_argument("elimination order repeats or leaves the graph");
    for (std::size_t c : children_[node]) {
      if (!done[c]) throw std::invalid_argument("elimination order visits a parent before its child");
    }
    msgs[node] = message<W>(node, msgs);
    done[node] = 1;
  }
  return msgs;
}

template <class W>
W FactorGraph::contract(const std::vector<std::size_t>& order) const {
  if (order.size() != size()) throw std::invalid_argument("elimination order must list every node");
  const auto msgs = upward<W>(order);
  W total(0);
  for (std::size_t q = 0; q < pta_.num_states(); ++q) total += detail::pta_initial<W>(pta_, q) * msgs[0][q];
  return total;
}

}  // namespace treegress
