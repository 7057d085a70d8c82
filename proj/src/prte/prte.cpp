#include "treegress/prte.hpp"

#include "treegress/error.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numbers>

namespace treegress {

// --- Prte -------------------------------------------------------------------

Prte Prte::symbol(SymbolId symbol, std::vector<Prte> children, SourcePos pos) {
  Prte e;
  e.kind_ = Kind::Symbol;
  e.symbol_ = symbol;
  e.children_ = std::move(children);
  e.pos_ = pos;
  return e;
}

Prte Prte::var(std::string name, SourcePos pos) {
  Prte e;
  e.kind_ = Kind::Var;
  e.var_ = std::move(name);
  e.pos_ = pos;
  return e;
}

Prte Prte::choice(std::vector<Rational> weights, std::vector<Prte> branches, SourcePos pos) {
  if (weights.size() != branches.size() || branches.empty()) {
    throw Error(ErrorCode::SizeMismatch, "choice needs one weight per branch and at least one branch");
  }
  Prte e;
  e.kind_ = Kind::Choice;
  e.weights_ = std::move(weights);
  e.children_ = std::move(branches);
  e.pos_ = pos;
  return e;
}

Prte Prte::concat(Prte left, std::string var, Prte right, SourcePos pos) {
  Prte e;
  e.kind_ = Kind::Concat;
  e.var_ = std::move(var);
  e.children_.push_back(std::move(left));
  e.children_.push_back(std::move(right));
  e.pos_ = pos;
  return e;
}

Prte Prte::iter(std::string var, Prte body, SourcePos pos) {
  Prte e;
  e.kind_ = Kind::Iter;
  e.var_ = std::move(var);
  e.children_.push_back(std::move(body));
  e.pos_ = pos;
  return e;
}

bool operator==(const Prte& a, const Prte& b) {
  return a.kind_ == b.kind_ && a.symbol_ == b.symbol_ && a.var_ == b.var_ && a.weights_ == b.weights_ &&
         a.children_ == b.children_;
}

// --- Grammar ----------------------------------------------------------------

namespace {

[[noreturn]] void fail_at(ErrorCode code, SourcePos pos, const std::string& message) {
  throw SyntaxError(code, pos.line, pos.column, message);
}

template <class W>
bool invert_in_place(std::vector<W>& m, std::size_t n, std::vector<W>& inv) {
  inv.assign(n * n, W(0));
  for (std::size_t i = 0; i < n; ++i) inv[i * n + i] = W(1);
  for (std::size_t col = 0; col < n; ++col) {
    std::size_t pivot = col;
    if constexpr (std::is_same_v<W, double>) {
      for (std::size_t r = col + 1; r < n; ++r) {
        if (std::fabs(m[r * n + col]) > std::fabs(m[pivot * n + col])) pivot = r;
      }
    } else {
      while (pivot < n && m[pivot * n + col] == 0) ++pivot;
      if (pivot == n) return false;
    }
    if (m[pivot * n + col] == W(0)) return false;
    if (pivot != col) {
      for (std::size_t k = 0; k < n; ++k) {
        std::swap(m[pivot * n + k], m[col * n + k]);
        std::swap(inv[pivot * n + k], inv[col * n + k]);
      }
    }
    const W p = m[col * n + col];
    for (std::size_t k = 0; k < n; ++k) {
      m[col * n + k] /= p;
      inv[col * n + k] /= p;
    }
    for (std::size_t r = 0; r < n; ++r) {
      if (r == col || m[r * n + col] == W(0)) continue;
      const W f = m[r * n + col];
      for (std::size_t k = 0; k < n; ++k) {
        m[r * n + k] -= f * m[col * n + k];
        inv[r * n + k] -= f * inv[col * n + k];
      }
    }
  }
  return true;
}

}  // namespace

Grammar::Grammar(const Prte& root) {
  std::vector<std::pair<std::string, std::size_t>> scope;
  root_ = flatten(root, scope);
  check_termination();
  build_unit_components();
}

std::size_t Grammar::flatten(const Prte& e, std::vector<std::pair<std::string, std::size_t>>& scope) {
  const std::size_t idx = nodes_.size();
  nodes_.emplace_back();
  nodes_[idx].kind = e.kind();
  nodes_[idx].pos = e.pos();
  switch (e.kind()) {
    case Prte::Kind::Symbol: {
      nodes_[idx].symbol = e.symbol_id();
      std::vector<std::size_t> kids;
      for (const auto& c : e.children()) kids.push_back(flatten(c, scope));
      nodes_[idx].children = std::move(kids);
      break;
    }
    case Prte::Kind::Var: {
      auto it = std::find_if(scope.rbegin(), scope.rend(), [&](const auto& b) { return b.first == e.var_name(); });
      if (it == scope.rend()) fail_at(ErrorCode::UnboundVariable, e.pos(), "unbound variable " + e.var_name());
      nodes_[idx].target = it->second;
      break;
    }
    case Prte::Kind::Choice: {
      Rational sum = 0;
      std::vector<double> weights;
      for (const auto& w : e.weights()) {
        if (w <= 0 || w > 1) fail_at(ErrorCode::WeightSumError, e.pos(), "choice weights must lie in (0, 1]");
        sum += w;
        weights.push_back(to_double(w));
      }
      if (std::fabs(to_double(sum - 1)) > 1e-12) {
        fail_at(ErrorCode::WeightSumError, e.pos(), "choice weights sum to " + format_rational(sum) + ", not 1");
      }
      nodes_[idx].weights = std::move(weights);
      nodes_[idx].exact_weights = e.weights();
      std::vector<std::size_t> kids;
      for (const auto& c : e.children()) kids.push_back(flatten(c, scope));
      nodes_[idx].children = std::move(kids);
      break;
    }
    case Prte::Kind::Concat: {
      const std::size_t right = flatten(e.children()[1], scope);
      scope.emplace_back(e.var_name(), right);
      const std::size_t left = flatten(e.children()[0], scope);
      scope.pop_back();
      nodes_[idx].children = {left, right};
      break;
    }
    case Prte::Kind::Iter: {
      scope.emplace_back(e.var_name(), idx);
      const std::size_t body = flatten(e.children()[0], scope);
      scope.pop_back();
      nodes_[idx].children = {body};
      break;
    }
  }
  return idx;
}

void Grammar::check_termination() const {
  // Least fixed point of "can derive a finite tree", with the iteration
  // variable of the Iter under test treated as unavailable.
  const std::size_t n = nodes_.size();
  for (std::size_t iter = 0; iter < n; ++iter) {
    if (nodes_[iter].kind != Prte::Kind::Iter) continue;
    std::vector<char> productive(n, 0);
    bool changed = true;
    while (changed) {
      changed = false;
      for (std::size_t i = 0; i < n; ++i) {
        if (productive[i]) continue;
        const Node& nd = nodes_[i];
        bool ok = false;
        switch (nd.kind) {
          case Prte::Kind::Symbol:
            ok = std::all_of(nd.children.begin(), nd.children.end(), [&](std::size_t c) { return productive[c]; });
            break;
          case Prte::Kind::Var: ok = nd.target != iter && productive[nd.target]; break;
          case Prte::Kind::Choice:
            ok = std::any_of(nd.children.begin(), nd.children.end(), [&](std::size_t c) { return productive[c]; });
            break;
          case Prte::Kind::Concat:
          case Prte::Kind::Iter: ok = productive[nd.children[0]]; break;
        }
        if (ok) {
          productive[i] = 1;
          changed = true;
        }
      }
    }
    if (!productive[nodes_[iter].children[0]]) {
      fail_at(ErrorCode::NonTerminatingIter, nodes_[iter].pos,
              "every derivation of the body of `iter` keeps its variable; the iteration cannot terminate");
    }
  }
}

void Grammar::build_unit_components() {
  // Tarjan's algorithm over unit nodes; components come out successors-first.
  const std::size_t n = nodes_.size();
  std::vector<long> index(n, -1), low(n, 0);
  std::vector<char> on_stack(n, 0);
  std::vector<std::size_t> stack;
  long counter = 0;
  auto is_unit = [&](std::size_t i) { return nodes_[i].kind != Prte::Kind::Symbol; };

  std::function<void(std::size_t)> connect = [&](std::size_t v) {
    index[v] = low[v] = counter++;
    stack.push_back(v);
    on_stack[v] = 1;
    for_each_unit_edge<double>(v, [&](std::size_t w, double) {
      if (!is_unit(w)) return;
      if (index[w] < 0) {
        connect(w);
        low[v] = std::min(low[v], low[w]);
      } else if (on_stack[w]) {
        low[v] = std::min(low[v], index[w]);
      }
    });
    if (low[v] != index[v]) return;
    UnitComponent comp;
    std::size_t w;
    do {
      w = stack.back();
      stack.pop_back();
      on_stack[w] = 0;
      comp.members.push_back(w);
    } while (w != v);
    std::sort(comp.members.begin(), comp.members.end());
    bool self_loop = false;
    for_each_unit_edge<double>(v, [&](std::size_t s, double) { self_loop = self_loop || s == v; });
    comp.cyclic = comp.members.size() > 1 || self_loop;
    components_.push_back(std::move(comp));
  };
  for (std::size_t i = 0; i < n; ++i) {
    if (is_unit(i) && index[i] < 0) connect(i);
  }

  for (auto& comp : components_) {
    if (!comp.cyclic) continue;
    has_unit_cycles_ = true;
    const std::size_t m = comp.members.size();
    std::vector<double> a(m * m, 0.0);
    std::vector<Rational> ax(m * m, Rational(0));
    for (std::size_t i = 0; i < m; ++i) {
      a[i * m + i] = 1.0;
      ax[i * m + i] = 1;
    }
    for (std::size_t i = 0; i < m; ++i) {
      const Node& nd = nodes_[comp.members[i]];
      auto add_edge = [&](std::size_t s, double w, const Rational& wx) {
        for (std::size_t j = 0; j < m; ++j) {
          if (comp.members[j] == s) {
            a[i * m + j] -= w;
            ax[i * m + j] -= wx;
          }
        }
      };
      if (nd.kind == Prte::Kind::Choice) {
        for (std::size_t k = 0; k < nd.children.size(); ++k) add_edge(nd.children[k], nd.weights[k], nd.exact_weights[k]);
      } else if (nd.kind == Prte::Kind::Var) {
        add_edge(nd.target, 1.0, Rational(1));
      } else {
        add_edge(nd.children[0], 1.0, Rational(1));
      }
    }
    if (!invert_in_place(a, m, comp.inverse) || !invert_in_place(ax, m, comp.exact_inverse)) {
      fail_at(ErrorCode::NonTerminatingIter, nodes_[comp.members.front()].pos, "unit cycle with no way out");
    }
  }
}

// --- priors -----------------------------------------------------------------

double ParamPrior::log_density(double x) const {
  switch (family) {
    case Family::Exponential:
      if (x < 0.0) return -std::numeric_limits<double>::infinity();
      return std::log(a) - a * x;
    case Family::Normal: {
      const double z = (x - a) / b;
      return -0.5 * std::log(2.0 * std::numbers::pi) - std::log(b) - 0.5 * z * z;
    }
  }
  return -std::numeric_limits<double>::infinity();
}

double ParamPrior::sample(Rng& rng) const {
  return family == Family::Exponential ? rng.exponential(a) : rng.normal(a, b);
}

double ParamPrior::scale() const { return family == Family::Exponential ? 1.0 / a : b; }

const ParamPrior& PriorSpec::prior_for(SymbolId marker) const {
  static const ParamPrior kDefault = ParamPrior::normal(0.0, 1.0);
  auto it = marker_priors.find(marker);
  return it == marker_priors.end() ? kDefault : it->second;
}

PriorSpec make_prior(std::shared_ptr<const Alphabet> alphabet, Prte root, unsigned max_depth) {
  PriorSpec p;
  p.alphabet = std::move(alphabet);
  p.grammar = std::make_shared<const Grammar>(root);
  p.root = std::move(root);
  p.max_depth = max_depth;
  return p;
}

// --- sampling ---------------------------------------------------------------

namespace {

constexpr std::size_t kMaxRetries = 1000;
constexpr std::size_t kUnitStepLimit = 1'000'000;

class TreeSampler {
 public:
  TreeSampler(const Grammar& g, unsigned max_depth, Rng& rng) : g_(g), max_depth_(max_depth), rng_(rng) {}

  bool sample(std::size_t node, unsigned depth, Tree& out) {
    std::size_t i = node;
    while (g_.node(i).kind != Prte::Kind::Symbol) {
      if (++unit_steps_ > kUnitStepLimit) return false;
      const auto& nd = g_.node(i);
      switch (nd.kind) {
        case Prte::Kind::Choice: i = nd.children[rng_.categorical(nd.weights)]; break;
        case Prte::Kind::Var: i = nd.target; break;
        default: i = nd.children[0]; break;
      }
    }
    if (depth > max_depth_) return false;
    const auto& nd = g_.node(i);
    out.symbol = nd.symbol;
    out.children.assign(nd.children.size(), Tree{});
    for (std::size_t k = 0; k < nd.children.size(); ++k) {
      if (!sample(nd.children[k], depth + 1, out.children[k])) return false;
    }
    return true;
  }

 private:
  const Grammar& g_;
  unsigned max_depth_;
  Rng& rng_;
  std::size_t unit_steps_ = 0;
};

template <class W>
std::vector<W> match_values(const Grammar& g, const Tree& t) {
  std::vector<std::vector<W>> kids;
  kids.reserve(t.children.size());
  for (const auto& c : t.children) kids.push_back(match_values<W>(g, c));
  std::vector<W> v(g.nodes().size(), W(0));
  for (std::size_t i = 0; i < g.nodes().size(); ++i) {
    const auto& nd = g.node(i);
    if (nd.kind != Prte::Kind::Symbol || nd.symbol != t.symbol || nd.children.size() != t.children.size()) continue;
    W p(1);
    for (std::size_t k = 0; k < nd.children.size() && p != W(0); ++k) p *= kids[k][nd.children[k]];
    v[i] = p;
  }
  solve_unit_values<W>(g, v, W(0));
  return v;
}

}  // namespace

Tree sample_tree(const PriorSpec& prior, Rng& rng) {
  for (std::size_t attempt = 0; attempt < kMaxRetries; ++attempt) {
    TreeSampler sampler(*prior.grammar, prior.max_depth, rng);
    Tree t;
    if (sampler.sample(prior.grammar->root(), 0, t)) return t;
  }
  throw Error(ErrorCode::DepthBudgetExhausted,
              std::to_string(kMaxRetries) + " consecutive samples exceeded max_depth " + std::to_string(prior.max_depth));
}

SymbolicExpression sample_expression(const PriorSpec& prior, Rng& rng) {
  Tree tree = sample_tree(prior, rng);
  const ParamLayout layout = param_layout(tree, prior);
  std::vector<double> cont;
  for (const auto& slot : layout.continuous) cont.push_back(prior.prior_for(slot.tag).sample(rng));
  std::vector<Rational> disc;
  if (!layout.discrete.empty() && prior.theta_d_support.empty()) {
    throw Error(ErrorCode::ConfigInvalid, "tree uses d# but the prior declares no discrete support");
  }
  for (std::size_t i = 0; i < layout.discrete.size(); ++i) {
    disc.push_back(prior.theta_d_support[rng.index(prior.theta_d_support.size())]);
  }
  return bind_params(prior, std::move(tree), layout, cont, disc);
}

// --- density ----------------------------------------------------------------

double prte_density_value(const PriorSpec& prior, const Tree& tree) {
  return match_values<double>(*prior.grammar, tree)[prior.grammar->root()];
}

Rational prte_density_exact(const PriorSpec& prior, const Tree& tree) {
  return match_values<Rational>(*prior.grammar, tree)[prior.grammar->root()];
}

Density prte_density(const PriorSpec& prior, const Tree& tree) {
  Density d;
  d.exact = prte_density_exact(prior, tree);
  d.value = to_double(*d.exact);
  return d;
}

// --- parameter layout -------------------------------------------------------

namespace {

struct LayoutBuilder {
  const PriorSpec& prior;
  ParamLayout layout;
  std::map<std::pair<SymbolId, Address>, std::size_t> tied_slot;
  std::vector<std::pair<SymbolId, Address>> ancestors;  // symbol and address of each ancestor

  void visit(const Tree& t, Address& addr) {
    const Alphabet& alpha = *prior.alphabet;
    if (alpha.is_const_marker(t.symbol)) {
      const std::size_t member = layout.theta_c_size++;
      const TieRule* rule = nullptr;
      for (const auto& r : prior.ties) {
        if (r.marker == t.symbol) rule = &r;
      }
      std::optional<std::size_t> slot;
      if (rule) {
        Address scope_key{0};  // sentinel: no enclosing scope symbol
        for (auto it = ancestors.rbegin(); it != ancestors.rend(); ++it) {
          if (alpha[it->first].name == rule->scope) {
            scope_key = it->second;
            break;
          }
        }
        auto key = std::make_pair(t.symbol, scope_key);
        if (auto found = tied_slot.find(key); found != tied_slot.end()) {
          slot = found->second;
        } else {
          tied_slot.emplace(key, layout.continuous.size());
        }
      }
      if (!slot) {
        layout.continuous.push_back(ParamSlot{t.symbol, {}, {}});
        slot = layout.continuous.size() - 1;
      }
      layout.continuous[*slot].members.push_back(member);
      layout.continuous[*slot].addresses.push_back(addr);
    } else if (alpha.is_disc_marker(t.symbol)) {
      const std::size_t member = layout.theta_d_size++;
      layout.discrete.push_back(ParamSlot{t.symbol, {member}, {addr}});
    }
    ancestors.emplace_back(t.symbol, addr);
    for (std::size_t i = 0; i < t.children.size(); ++i) {
      addr.push_back(static_cast<unsigned>(i + 1));
      visit(t.children[i], addr);
      addr.pop_back();
    }
    ancestors.pop_back();
  }
};

}  // namespace

std::vector<std::size_t> ParamLayout::ties() const {
  if (continuous.size() == theta_c_size) return {};
  std::vector<std::size_t> reps(theta_c_size, 0);
  for (const auto& slot : continuous) {
    for (std::size_t m : slot.members) reps[m] = slot.members.front();
  }
  return reps;
}

ParamLayout param_layout(const Tree& tree, const PriorSpec& prior) {
  LayoutBuilder b{prior, {}, {}, {}};
  Address addr;
  b.visit(tree, addr);
  return std::move(b.layout);
}

std::vector<double> free_continuous(const SymbolicExpression& expr, const ParamLayout& layout) {
  std::vector<double> out;
  out.reserve(layout.continuous.size());
  for (const auto& slot : layout.continuous) out.push_back(expr.theta_c().at(slot.members.front()));
  return out;
}

std::vector<Rational> free_discrete(const SymbolicExpression& expr, const ParamLayout& layout) {
  std::vector<Rational> out;
  for (const auto& slot : layout.discrete) out.push_back(expr.theta_d().at(slot.members.front()));
  return out;
}

SymbolicExpression bind_params(const PriorSpec& prior, Tree tree, const ParamLayout& layout,
                               const std::vector<double>& continuous, const std::vector<Rational>& discrete) {
  if (continuous.size() != layout.continuous.size() || discrete.size() != layout.discrete.size()) {
    throw Error(ErrorCode::SizeMismatch, "parameter vector does not match the tree's free parameters");
  }
  std::vector<double> theta_c(layout.theta_c_size, 0.0);
  for (std::size_t s = 0; s < continuous.size(); ++s) {
    for (std::size_t m : layout.continuous[s].members) theta_c[m] = continuous[s];
  }
  std::vector<Rational> theta_d(layout.theta_d_size);
  for (std::size_t s = 0; s < discrete.size(); ++s) theta_d[layout.discrete[s].members.front()] = discrete[s];
  return SymbolicExpression(*prior.alphabet, std::move(tree), std::move(theta_c), std::move(theta_d), layout.ties());
}

double log_param_prior(const PriorSpec& prior, const ParamLayout& layout, const std::vector<double>& continuous,
                       const std::vector<Rational>& discrete) {
  double lp = 0.0;
  for (std::size_t s = 0; s < continuous.size(); ++s) {
    lp += prior.prior_for(layout.continuous[s].tag).log_density(continuous[s]);
  }
  for (const auto& d : discrete) {
    const auto& sup = prior.theta_d_support;
    if (std::find(sup.begin(), sup.end(), d) == sup.end()) return -std::numeric_limits<double>::infinity();
    lp -= std::log(static_cast<double>(sup.size()));
  }
  return lp;
}

}  // namespace treegress
