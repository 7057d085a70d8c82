#include "treegress/pta.hpp"

#include "treegress/error.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <deque>
#include <stdexcept>

namespace treegress {

// --- Pta --------------------------------------------------------------------

Pta::Pta(std::shared_ptr<const Alphabet> alphabet, std::size_t states)
    : alphabet_(std::move(alphabet)),
      initial_(states, 0.0),
      initial_exact_(states, Rational(0)),
      names_(states),
      by_state_(states) {
  for (std::size_t q = 0; q < states; ++q) names_[q] = "q" + std::to_string(q);
}

Pta Pta::universal(std::shared_ptr<const Alphabet> alphabet) {
  Pta pta(alphabet, 1);
  pta.set_initial(0, Rational(1));
  for (SymbolId id = 0; id < alphabet->size(); ++id) {
    if (id == Alphabet::kHole) continue;
    const unsigned rank = (*alphabet)[id].rank;
    if (rank == 0) {
      pta.add_final(0, id);
    } else {
      pta.add_transition(id, 0, std::vector<std::size_t>(rank, 0), Rational(1));
    }
  }
  pta.set_state_name(0, "any");
  return pta;
}

void Pta::set_initial(std::size_t state, const Rational& p) {
  initial_exact_.at(state) = p;
  initial_[state] = to_double(p);
}

void Pta::set_initial(std::size_t state, double p) {
  initial_.at(state) = p;
  exact_ = false;
}

void Pta::add_transition(SymbolId symbol, std::size_t from, std::vector<std::size_t> to, const Rational& p) {
  push_transition(Transition{symbol, from, std::move(to), to_double(p), p});
}

void Pta::add_transition(SymbolId symbol, std::size_t from, std::vector<std::size_t> to, double p) {
  push_transition(Transition{symbol, from, std::move(to), p, Rational(0)});
  exact_ = false;
}

void Pta::push_transition(Transition t) {
  if (t.from >= num_states()) throw std::out_of_range("transition source state out of range");
  for (std::size_t q : t.to) {
    if (q >= num_states()) throw std::out_of_range("transition target state out of range");
  }
  if (t.symbol >= alphabet_->size()) throw Error(ErrorCode::AlphabetMismatch, "transition symbol not in alphabet");
  const std::size_t idx = transitions_.size();
  by_state_symbol_[{t.from, t.symbol}].push_back(idx);
  by_state_[t.from].push_back(idx);
  transitions_.push_back(std::move(t));
}

void Pta::add_final(std::size_t state, SymbolId symbol) {
  if (state >= num_states()) throw std::out_of_range("final state out of range");
  finals_.emplace(state, symbol);
}

void Pta::set_state_name(std::size_t state, std::string name) { names_.at(state) = std::move(name); }

const std::vector<std::size_t>& Pta::outgoing(std::size_t state, SymbolId symbol) const {
  static const std::vector<std::size_t> kNone;
  auto it = by_state_symbol_.find({state, symbol});
  return it == by_state_symbol_.end() ? kNone : it->second;
}

const std::vector<std::size_t>& Pta::outgoing(std::size_t state) const { return by_state_.at(state); }

std::vector<std::string> Pta::check() const {
  std::vector<std::string> problems;
  double mu = 0.0;
  for (double p : initial_) {
    if (p < 0.0) problems.push_back("negative initial weight");
    mu += p;
  }
  if (std::fabs(mu - 1.0) > 1e-12) problems.push_back("initial distribution sums to " + format_double(mu));
  std::map<std::pair<std::size_t, SymbolId>, double> rows;
  for (const auto& t : transitions_) {
    if (!(t.p > 0.0)) problems.push_back("non-positive transition weight from " + names_[t.from]);
    if (t.to.size() != (*alphabet_)[t.symbol].rank) {
      problems.push_back("transition tuple length differs from the rank of " + (*alphabet_)[t.symbol].name);
    }
    rows[{t.from, t.symbol}] += t.p;
  }
  for (const auto& [key, total] : rows) {
    if (total > 1.0 + 1e-12) {
      problems.push_back("row (" + (*alphabet_)[key.second].name + ", " + names_[key.first] + ") sums to " +
                         format_double(total));
    }
  }
  std::vector<char> seen(num_states(), 0);
  std::deque<std::size_t> queue;
  for (std::size_t q = 0; q < num_states(); ++q) {
    if (initial_[q] > 0.0) {
      seen[q] = 1;
      queue.push_back(q);
    }
  }
  while (!queue.empty()) {
    const std::size_t q = queue.front();
    queue.pop_front();
    for (std::size_t ti : by_state_[q]) {
      for (std::size_t r : transitions_[ti].to) {
        if (!seen[r]) {
          seen[r] = 1;
          queue.push_back(r);
        }
      }
    }
  }
  for (std::size_t q = 0; q < num_states(); ++q) {
    if (!seen[q]) problems.push_back("state " + names_[q] + " is unreachable");
  }
  return problems;
}

std::string Pta::to_json() const {
  using nlohmann::json;
  json j;
  j["states"] = names_;
  j["initial"] = initial_;
  json ts = json::array();
  for (const auto& t : transitions_) {
    json to = json::array();
    for (std::size_t q : t.to) to.push_back(names_[q]);
    ts.push_back({{"symbol", (*alphabet_)[t.symbol].name}, {"from", names_[t.from]}, {"to", to}, {"p", t.p}});
  }
  j["transitions"] = ts;
  json fs = json::array();
  for (const auto& [q, s] : finals_) fs.push_back({names_[q], (*alphabet_)[s].name});
  j["finals"] = fs;
  return j.dump(2);
}

// --- compile ----------------------------------------------------------------

namespace {

// Sparse distribution over states, the value type of the unit-closure solve.
struct StateDist {
  std::map<std::size_t, Rational> p;

  friend StateDist operator+(StateDist a, const StateDist& b) {
    for (const auto& [q, w] : b.p) a.p[q] += w;
    return a;
  }
  friend StateDist operator*(const Rational& w, const StateDist& d) {
    StateDist out;
    if (w == 0) return out;
    for (const auto& [q, v] : d.p) out.p.emplace(q, w * v);
    return out;
  }
};

}  // namespace

Pta compile(const PriorSpec& prior, std::size_t state_budget) {
  const Grammar& g = *prior.grammar;
  const Alphabet& alpha = *prior.alphabet;
  const std::size_t n = g.nodes().size();

  // Provisional states: one per symbol position, leaves merged by symbol.
  std::vector<std::size_t> state_of(n, 0);
  std::vector<std::size_t> node_of_state;
  std::map<SymbolId, std::size_t> leaf_state;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& nd = g.node(i);
    if (nd.kind != Prte::Kind::Symbol) continue;
    if (nd.children.empty()) {
      auto [it, fresh] = leaf_state.emplace(nd.symbol, node_of_state.size());
      if (fresh) node_of_state.push_back(i);
      state_of[i] = it->second;
    } else {
      state_of[i] = node_of_state.size();
      node_of_state.push_back(i);
    }
  }

  // entry[i]: distribution of the first state reached from expression node i.
  std::vector<StateDist> entry(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (g.node(i).kind == Prte::Kind::Symbol) entry[i].p[state_of[i]] = 1;
  }
  solve_unit_values<Rational>(g, entry, StateDist{});

  struct Row {
    std::vector<std::size_t> to;
    Rational p;
  };
  const std::size_t provisional = node_of_state.size();
  std::vector<std::vector<Row>> rows(provisional);
  for (std::size_t s = 0; s < provisional; ++s) {
    const auto& nd = g.node(node_of_state[s]);
    if (nd.children.empty()) continue;
    std::vector<Row> acc{Row{{}, Rational(1)}};
    for (std::size_t c : nd.children) {
      std::vector<Row> next;
      for (const auto& r : acc) {
        for (const auto& [q, w] : entry[c].p) {
          if (w == 0) continue;
          Row e = r;
          e.to.push_back(q);
          e.p *= w;
          next.push_back(std::move(e));
        }
      }
      acc = std::move(next);
    }
    rows[s] = std::move(acc);
  }

  // Keep states reachable from the initial distribution.
  const StateDist& mu = entry[g.root()];
  std::vector<std::ptrdiff_t> renumber(provisional, -1);
  std::vector<std::size_t> order;
  std::deque<std::size_t> queue;
  auto visit = [&](std::size_t q) {
    if (renumber[q] >= 0) return;
    renumber[q] = static_cast<std::ptrdiff_t>(order.size());
    order.push_back(q);
    queue.push_back(q);
    if (order.size() > state_budget) {
      throw Error(ErrorCode::StateBudgetExceeded,
                  "compiled automaton needs more than " + std::to_string(state_budget) + " states");
    }
  };
  for (const auto& [q, w] : mu.p) {
    if (w != 0) visit(q);
  }
  while (!queue.empty()) {
    const std::size_t q = queue.front();
    queue.pop_front();
    for (const auto& r : rows[q]) {
      for (std::size_t t : r.to) visit(t);
    }
  }

  Pta pta(prior.alphabet, order.size());
  for (std::size_t k = 0; k < order.size(); ++k) {
    const std::size_t q = order[k];
    const auto& nd = g.node(node_of_state[q]);
    std::string name = alpha[nd.symbol].name;
    if (!nd.children.empty()) name += "@" + std::to_string(nd.pos.line) + ":" + std::to_string(nd.pos.column);
    pta.set_state_name(k, std::move(name));
    if (auto it = mu.p.find(q); it != mu.p.end()) pta.set_initial(k, it->second);
    if (nd.children.empty()) {
      pta.add_final(k, nd.symbol);
      continue;
    }
    for (const auto& r : rows[q]) {
      std::vector<std::size_t> to;
      for (std::size_t t : r.to) to.push_back(static_cast<std::size_t>(renumber[t]));
      pta.add_transition(nd.symbol, k, std::move(to), r.p);
    }
  }
  return pta;
}

// --- evaluation -------------------------------------------------------------

FactorGraph::FactorGraph(const Pta& pta, const Tree& tree) : pta_(pta) {
  const std::size_t alpha_size = pta.alphabet()->size();
  Address addr;
  auto build = [&](auto&& self, const Tree& t, std::ptrdiff_t parent) -> std::size_t {
    if (t.symbol >= alpha_size) {
      throw Error(ErrorCode::AlphabetMismatch, "tree symbol " + std::to_string(t.symbol) + " is outside the alphabet");
    }
    const std::size_t idx = symbols_.size();
    symbols_.push_back(t.symbol);
    children_.emplace_back();
    parent_.push_back(parent);
    addresses_.push_back(addr);
    for (std::size_t k = 0; k < t.children.size(); ++k) {
      addr.push_back(static_cast<unsigned>(k + 1));
      const std::size_t c = self(self, t.children[k], static_cast<std::ptrdiff_t>(idx));
      addr.pop_back();
      children_[idx].push_back(c);
    }
    return idx;
  };
  build(build, tree, -1);
}

std::size_t FactorGraph::node_at(const Address& address) const {
  std::size_t node = 0;
  for (unsigned k : address) {
    if (k == 0 || k > children_[node].size()) throw std::out_of_range("address not in tree");
    node = children_[node][k - 1];
  }
  return node;
}

std::vector<std::size_t> FactorGraph::default_order() const {
  std::vector<std::size_t> order(size());
  for (std::size_t i = 0; i < size(); ++i) order[i] = size() - 1 - i;
  return order;
}

double pta_eval(const Pta& pta, const Tree& tree) {
  FactorGraph fg(pta, tree);
  return fg.contract<double>(fg.default_order());
}

Rational pta_eval_exact(const Pta& pta, const Tree& tree) {
  if (!pta.exact()) throw std::logic_error("automaton has inexact weights");
  FactorGraph fg(pta, tree);
  return fg.contract<Rational>(fg.default_order());
}

Density pta_density(const Pta& pta, const Tree& tree) {
  Density d;
  if (pta.exact()) {
    d.exact = pta_eval_exact(pta, tree);
    d.value = to_double(*d.exact);
  } else {
    d.value = pta_eval(pta, tree);
  }
  return d;
}

Tree translate_tree(const Tree& tree, const Alphabet& from, const Alphabet& to) {
  const auto& sym = from[tree.symbol];
  auto id = to.find(sym.name, sym.rank);
  if (!id) throw Error(ErrorCode::AlphabetMismatch, "`" + sym.name + "`/" + std::to_string(sym.rank) + " not in alphabet");
  Tree out(*id);
  out.children.reserve(tree.children.size());
  for (const auto& c : tree.children) out.children.push_back(translate_tree(c, from, to));
  return out;
}

std::vector<double> state_likelihoods(const Pta& pta, const Tree& tree) {
  FactorGraph fg(pta, tree);
  return fg.upward<double>(fg.default_order())[0];
}

std::vector<double> context_marginal(const Pta& pta, const Tree& context) {
  const auto holes = positions_of(context, Alphabet::kHole);
  if (holes.size() != 1 || !context.at(holes[0]).is_leaf()) {
    throw Error(ErrorCode::UnknownSymbol, "a context needs exactly one hole leaf `?`");
  }
  const Address& hole = holes[0];
  FactorGraph fg(pta, context);
  const auto up = fg.upward<double>(fg.default_order());
  const std::size_t nq = pta.num_states();

  std::vector<double> down = pta.initial();
  std::size_t node = 0;
  for (unsigned step : hole) {
    const std::size_t k = step - 1;
    const auto& kids = fg.children(node);
    std::vector<double> next(nq, 0.0);
    for (std::size_t q = 0; q < nq; ++q) {
      if (down[q] == 0.0) continue;
      for (std::size_t ti : pta.outgoing(q, fg.symbol(node))) {
        const auto& t = pta.transitions()[ti];
        double w = down[q] * t.p;
        for (std::size_t j = 0; j < kids.size() && w != 0.0; ++j) {
          if (j != k) w *= up[kids[j]][t.to[j]];
        }
        next[t.to[k]] += w;
      }
    }
    down = std::move(next);
    node = kids[k];
  }
  double total = 0.0;
  for (double v : down) total += v;
  if (!(total > 0.0)) {
    throw Error(ErrorCode::ImpossibleContext, "no state at the hole " + format_address(hole) + " has positive weight");
  }
  for (double& v : down) v /= total;
  return down;
}

std::vector<double> context_marginal(const Pta& pta, const Tree& tree, const Address& address) {
  return context_marginal(pta, tree.with_subtree(address, Tree(Alphabet::kHole)));
}

// --- generation -------------------------------------------------------------

namespace {

constexpr std::size_t kMaxAttempts = 1000;

bool generate(const Pta& pta, std::size_t q, std::size_t depth, std::size_t max_depth, Rng& rng, Tree& out) {
  const auto& outgoing = pta.outgoing(q);
  std::vector<SymbolId> leaves;
  for (auto it = pta.finals().lower_bound({q, 0}); it != pta.finals().end() && it->first == q; ++it) {
    leaves.push_back(it->second);
  }
  double total = static_cast<double>(leaves.size());
  for (std::size_t ti : outgoing) total += pta.transitions()[ti].p;
  if (total > 1.0 + 1e-9) {
    throw Error(ErrorCode::NotGenerative,
                "options of state " + pta.state_name(q) + " weigh " + format_double(total) + " > 1");
  }
  double u = rng.uniform();
  for (SymbolId leaf : leaves) {
    if (u < 1.0) {
      out = Tree(leaf);
      return true;
    }
    u -= 1.0;
  }
  for (std::size_t ti : outgoing) {
    const auto& t = pta.transitions()[ti];
    if (u < t.p) {
      if (depth + 1 > max_depth) return false;
      out = Tree(t.symbol);
      out.children.resize(t.to.size());
      for (std::size_t k = 0; k < t.to.size(); ++k) {
        if (!generate(pta, t.to[k], depth + 1, max_depth, rng, out.children[k])) return false;
      }
      return true;
    }
    u -= t.p;
  }
  return false;  // missing mass: dead end
}

}  // namespace

std::optional<GeneratedTree> try_sample_from_state(const Pta& pta, std::size_t start, Rng& rng,
                                                   std::size_t max_depth) {
  if (start >= pta.num_states()) throw std::out_of_range("start state out of range");
  Tree t;
  if (!generate(pta, start, 0, max_depth, rng, t)) return std::nullopt;
  const double p = state_likelihoods(pta, t)[start];
  return GeneratedTree{std::move(t), p};
}

GeneratedTree sample_from_state(const Pta& pta, std::size_t start, Rng& rng, std::size_t max_depth) {
  for (std::size_t attempt = 0; attempt < kMaxAttempts; ++attempt) {
    if (auto g = try_sample_from_state(pta, start, rng, max_depth)) return std::move(*g);
  }
  throw Error(ErrorCode::DepthBudgetExhausted,
              std::to_string(kMaxAttempts) + " consecutive generations failed within depth " + std::to_string(max_depth));
}

// --- product ----------------------------------------------------------------

Pta product(const Pta& a, const Pta& b, std::size_t state_budget) {
  auto merged = std::make_shared<Alphabet>(*a.alphabet());
  const Alphabet& ab = *b.alphabet();
  std::vector<SymbolId> b_to_merged(ab.size());
  for (SymbolId id = 0; id < ab.size(); ++id) {
    b_to_merged[id] = id == Alphabet::kHole ? Alphabet::kHole : merged->add(ab[id].name, ab[id].rank);
  }
  const bool exact = a.exact() && b.exact();

  std::map<std::pair<std::size_t, std::size_t>, std::size_t> index;
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  std::deque<std::size_t> queue;
  auto state = [&](std::size_t p, std::size_t q) {
    auto [it, fresh] = index.emplace(std::make_pair(p, q), pairs.size());
    if (fresh) {
      pairs.emplace_back(p, q);
      queue.push_back(it->second);
      if (pairs.size() > state_budget) {
        throw Error(ErrorCode::StateBudgetExceeded,
                    "product automaton needs more than " + std::to_string(state_budget) + " states");
      }
    }
    return it->second;
  };

  struct PendingTransition {
    SymbolId symbol;
    std::size_t from;
    std::vector<std::size_t> to;
    double p;
    Rational exact;
  };
  std::vector<PendingTransition> pending;
  for (std::size_t p = 0; p < a.num_states(); ++p) {
    for (std::size_t q = 0; q < b.num_states(); ++q) {
      if (a.initial()[p] > 0.0 && b.initial()[q] > 0.0) state(p, q);
    }
  }
  while (!queue.empty()) {
    const std::size_t s = queue.front();
    queue.pop_front();
    const auto [p, q] = pairs[s];
    for (std::size_t ti : a.outgoing(p)) {
      const auto& ta = a.transitions()[ti];
      for (std::size_t tj : b.outgoing(q)) {
        const auto& tb = b.transitions()[tj];
        if (b_to_merged[tb.symbol] != ta.symbol || ta.to.size() != tb.to.size()) continue;
        std::vector<std::size_t> to;
        for (std::size_t k = 0; k < ta.to.size(); ++k) to.push_back(state(ta.to[k], tb.to[k]));
        pending.push_back({ta.symbol, s, std::move(to), ta.p * tb.p, exact ? ta.exact * tb.exact : Rational(0)});
      }
    }
  }

  Pta out(merged, pairs.size());
  for (std::size_t s = 0; s < pairs.size(); ++s) {
    const auto [p, q] = pairs[s];
    out.set_state_name(s, "(" + a.state_name(p) + "," + b.state_name(q) + ")");
    if (exact) {
      out.set_initial(s, a.initial_exact()[p] * b.initial_exact()[q]);
    } else {
      out.set_initial(s, a.initial()[p] * b.initial()[q]);
    }
    for (auto it = a.finals().lower_bound({p, 0}); it != a.finals().end() && it->first == p; ++it) {
      for (auto jt = b.finals().lower_bound({q, 0}); jt != b.finals().end() && jt->first == q; ++jt) {
        if (b_to_merged[jt->second] == it->second) out.add_final(s, it->second);
      }
    }
  }
  for (auto& t : pending) {
    if (exact) {
      out.add_transition(t.symbol, t.from, std::move(t.to), t.exact);
    } else {
      out.add_transition(t.symbol, t.from, std::move(t.to), t.p);
    }
  }
  return out;
}

}  // namespace treegress
