#include "treegress/error.hpp"
#include "treegress/inference.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numbers>

namespace treegress {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double log_normal_density(const std::vector<double>& u, double stddev) {
  double lp = 0.0;
  for (double x : u) {
    const double z = x / stddev;
    lp += -0.5 * std::log(2.0 * std::numbers::pi) - std::log(stddev) - 0.5 * z * z;
  }
  return lp;
}

bool is_log_slot(const PriorSpec& prior, const ParamSlot& slot) {
  return prior.prior_for(slot.tag).family == ParamPrior::Family::Exponential;
}

bool under(const Address& a, const Address& root) {
  return a.size() >= root.size() && std::equal(root.begin(), root.end(), a.begin());
}

bool outside(const ParamSlot& slot, const std::optional<Address>& changed) {
  if (!changed) return true;
  return std::none_of(slot.addresses.begin(), slot.addresses.end(),
                      [&](const Address& a) { return under(a, *changed); });
}

std::vector<double> boltzmann(const std::vector<double>& mu, double tau) {
  double top = kNegInf;
  for (double m : mu) {
    if (m > 0.0) top = std::max(top, std::log(m) / tau);
  }
  std::vector<double> p(mu.size(), 0.0);
  double total = 0.0;
  for (std::size_t i = 0; i < mu.size(); ++i) {
    if (mu[i] > 0.0) {
      p[i] = std::exp(std::log(mu[i]) / tau - top);
      total += p[i];
    }
  }
  for (double& v : p) v /= total;
  return p;
}

}  // namespace

// --- dimension-matching maps ------------------------------------------------

ParamMap expand_params(const std::vector<double>& theta, const std::vector<double>& u, std::size_t target) {
  const std::size_t n = theta.size();
  if (target < n || u.size() != target) {
    throw Error(ErrorCode::SizeMismatch, "expand_params needs |u| = n* >= n");
  }
  ParamMap out;
  out.theta.resize(target);
  out.aux.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    out.theta[i] = (theta[i] + u[i]) / 2.0;
    out.aux[i] = (theta[i] - u[i]) / 2.0;
  }
  for (std::size_t i = n; i < target; ++i) out.theta[i] = u[i];
  out.log_abs_det = -static_cast<double>(n) * std::numbers::ln2;
  return out;
}

ParamMap shrink_params(const std::vector<double>& theta, const std::vector<double>& u) {
  const std::size_t n = theta.size();
  const std::size_t m = u.size();
  if (m > n) throw Error(ErrorCode::SizeMismatch, "shrink_params needs |u| = n* <= n");
  ParamMap out;
  out.theta.resize(m);
  out.aux.resize(n);
  for (std::size_t i = 0; i < m; ++i) {
    out.theta[i] = theta[i] + u[i];
    out.aux[i] = theta[i] - u[i];
  }
  for (std::size_t i = m; i < n; ++i) out.aux[i] = theta[i];
  out.log_abs_det = static_cast<double>(m) * std::numbers::ln2;
  return out;
}

// --- model ------------------------------------------------------------------

namespace {

std::shared_ptr<const PriorSpec> with_depth(const PriorSpec& prior, unsigned max_depth) {
  auto p = std::make_shared<PriorSpec>(prior);
  if (max_depth != 0) p->max_depth = max_depth;
  return p;
}

}  // namespace

Model::Model(const PriorSpec& prior, LikelihoodFn likelihood, const McmcConfig& config)
    : prior_(with_depth(prior, config.max_depth)),
      pta_(compile(*prior_, config.state_budget)),
      likelihood_(std::move(likelihood)),
      config_(config),
      max_depth_(prior_->max_depth) {
  config_.validate();
}

double Model::log_prior_tree(const Tree& tree) const {
  if (tree.depth() > max_depth_) return kNegInf;
  const double p = pta_eval(pta_, tree);
  return p > 0.0 ? std::log(p) : kNegInf;
}

double Model::log_prior_sigma(double sigma) const {
  if (!(sigma > 0.0)) return kNegInf;
  return std::log(config_.lambda_sigma) - config_.lambda_sigma * sigma;
}

std::vector<double> Model::to_theta(const ParamLayout& layout, const std::vector<double>& phi) const {
  std::vector<double> theta(phi.size());
  for (std::size_t i = 0; i < phi.size(); ++i) {
    theta[i] = is_log_slot(*prior_, layout.continuous[i]) ? std::exp(phi[i]) : phi[i];
  }
  return theta;
}

std::vector<double> Model::to_phi(const ParamLayout& layout, const std::vector<double>& theta) const {
  std::vector<double> phi(theta.size());
  for (std::size_t i = 0; i < theta.size(); ++i) {
    phi[i] = is_log_slot(*prior_, layout.continuous[i])
                 ? std::log(std::max(theta[i], std::numeric_limits<double>::denorm_min()))
                 : theta[i];
  }
  return phi;
}

double Model::log_jacobian(const ParamLayout& layout, const std::vector<double>& phi) const {
  double lj = 0.0;
  for (std::size_t i = 0; i < phi.size(); ++i) {
    if (is_log_slot(*prior_, layout.continuous[i])) lj += phi[i];
  }
  return lj;
}

std::vector<double> Model::slot_scales(const ParamLayout& layout) const {
  std::vector<double> s;
  for (const auto& slot : layout.continuous) {
    s.push_back(is_log_slot(*prior_, slot) ? 1.0 : prior_->prior_for(slot.tag).scale());
  }
  return s;
}

ChainState Model::make_state(Tree tree, std::vector<double> phi, std::vector<Rational> theta_d, double sigma) const {
  ParamLayout layout = param_layout(tree, *prior_);
  const std::vector<double> theta = to_theta(layout, phi);
  const double lpt = log_prior_tree(tree);
  const double lpp = log_param_prior(*prior_, layout, theta, theta_d);
  SymbolicExpression expr = bind_params(*prior_, std::move(tree), layout, theta, theta_d);
  const double ll = lpt == kNegInf ? kNegInf : likelihood_(expr, sigma);
  return ChainState{std::move(expr), std::move(layout), std::move(phi), std::move(theta_d), sigma, ll, lpt, lpp};
}

ChainState Model::sample_state(Rng& rng) const {
  SymbolicExpression e = sample_expression(*prior_, rng);
  ParamLayout layout = param_layout(e.tree(), *prior_);
  std::vector<double> phi = to_phi(layout, free_continuous(e, layout));
  std::vector<Rational> disc = free_discrete(e, layout);
  const double sigma = std::max(rng.exponential(config_.lambda_sigma), std::numeric_limits<double>::min());
  return make_state(e.tree(), std::move(phi), std::move(disc), sigma);
}

double Model::log_target(const ChainState& s) const {
  const double lt = s.log_prior_tree + s.log_prior_params + s.log_lik;
  if (std::isnan(lt) || lt == kNegInf) return kNegInf;
  return lt + log_jacobian(s.layout, s.phi) + log_prior_sigma(s.sigma) + std::log(s.sigma);
}

double Model::log_posterior(const ChainState& s) const {
  return s.log_prior_tree + s.log_prior_params + log_prior_sigma(s.sigma) + s.log_lik;
}

const char* move_name(MoveKind kind) {
  switch (kind) {
    case MoveKind::Global: return "global";
    case MoveKind::Local: return "local";
    case MoveKind::Param: return "param";
    case MoveKind::Sigma: return "sigma";
  }
  return "?";
}

double log_acceptance(const Model& model, const ChainState& current, const Proposal& proposal) {
  if (!proposal.valid) return kNegInf;
  const double next = model.log_target(proposal.state);
  if (next == kNegInf || std::isnan(next)) return kNegInf;
  if (std::isnan(proposal.log_fwd) || proposal.log_fwd == kNegInf) return kNegInf;
  const double now = model.log_target(current);
  if (now == kNegInf) return std::numeric_limits<double>::infinity();
  return next - now + proposal.log_rev - proposal.log_fwd + proposal.log_jacobian;
}

// --- structure changes --------------------------------------------------------

std::optional<Address> difference_root(const Tree& a, const Tree& b) {
  if (a == b) return std::nullopt;
  Address at;
  const Tree* x = &a;
  const Tree* y = &b;
  while (true) {
    if (x->symbol != y->symbol || x->children.size() != y->children.size()) return at;
    std::size_t differing = 0;
    std::size_t which = 0;
    for (std::size_t k = 0; k < x->children.size(); ++k) {
      if (!(x->children[k] == y->children[k])) {
        ++differing;
        which = k;
      }
    }
    if (differing != 1) return at;
    at.push_back(static_cast<unsigned>(which + 1));
    x = &x->children[which];
    y = &y->children[which];
  }
}

std::size_t Transfer::aux_size() const {
  return changed_from.size() == changed_to.size() ? 0 : changed_to.size();
}

Transfer plan_transfer(const ParamLayout& from, const ParamLayout& to, const std::optional<Address>& changed) {
  Transfer plan;
  auto match = [&](const std::vector<ParamSlot>& a, const std::vector<ParamSlot>& b, std::vector<std::size_t>& kept_a,
                   std::vector<std::size_t>& kept_b, std::vector<std::size_t>* changed_a,
                   std::vector<std::size_t>* changed_b) {
    std::map<std::pair<SymbolId, std::vector<Address>>, std::size_t> outer_b;
    for (std::size_t j = 0; j < b.size(); ++j) {
      if (outside(b[j], changed)) outer_b.emplace(std::make_pair(b[j].tag, b[j].addresses), j);
    }
    std::vector<char> b_kept(b.size(), 0);
    for (std::size_t i = 0; i < a.size(); ++i) {
      auto it = outside(a[i], changed) ? outer_b.find({a[i].tag, a[i].addresses}) : outer_b.end();
      if (it != outer_b.end()) {
        kept_a.push_back(i);
        kept_b.push_back(it->second);
        b_kept[it->second] = 1;
      } else if (changed_a) {
        changed_a->push_back(i);
      }
    }
    for (std::size_t j = 0; j < b.size(); ++j) {
      if (!b_kept[j] && changed_b) changed_b->push_back(j);
    }
  };
  match(from.continuous, to.continuous, plan.kept_from, plan.kept_to, &plan.changed_from, &plan.changed_to);
  match(from.discrete, to.discrete, plan.disc_kept_from, plan.disc_kept_to, nullptr, &plan.disc_changed_to);
  return plan;
}

ParamMap apply_transfer(const Transfer& plan, const std::vector<double>& phi, const std::vector<double>& u,
                        std::size_t to_size) {
  ParamMap out;
  out.theta.assign(to_size, 0.0);
  for (std::size_t k = 0; k < plan.kept_from.size(); ++k) out.theta[plan.kept_to[k]] = phi[plan.kept_from[k]];
  std::vector<double> old;
  for (std::size_t i : plan.changed_from) old.push_back(phi[i]);
  const std::size_t m = plan.changed_from.size();
  const std::size_t m2 = plan.changed_to.size();
  ParamMap mapped;
  if (m == m2) {
    if (!u.empty()) throw Error(ErrorCode::SizeMismatch, "an equal-dimension transfer takes no auxiliaries");
    mapped.theta = std::move(old);
  } else if (m2 > m) {
    mapped = expand_params(old, u, m2);
  } else {
    mapped = shrink_params(old, u);
  }
  for (std::size_t k = 0; k < m2; ++k) out.theta[plan.changed_to[k]] = mapped.theta[k];
  out.aux = std::move(mapped.aux);
  out.log_abs_det = mapped.log_abs_det;
  return out;
}

namespace {

// Completes a structure proposal: moves parameters onto `next` and adds the
// auxiliary and discrete-draw terms to the proposal densities.
Proposal finish_structure(const Model& model, const ChainState& state, Tree next, double log_q_fwd, double log_q_rev,
                          Rng& rng) {
  const PriorSpec& prior = model.prior();
  const auto changed = difference_root(state.expr.tree(), next);
  const ParamLayout to = param_layout(next, prior);
  const Transfer plan = plan_transfer(state.layout, to, changed);

  std::vector<double> u(plan.aux_size());
  for (double& x : u) x = rng.normal(0.0, model.config().aux_sigma);
  ParamMap mapped = apply_transfer(plan, state.phi, u, to.continuous.size());

  std::vector<Rational> disc(to.discrete.size());
  for (std::size_t k = 0; k < plan.disc_kept_from.size(); ++k) {
    disc[plan.disc_kept_to[k]] = state.theta_d[plan.disc_kept_from[k]];
  }
  double log_disc_fwd = 0.0;
  double log_disc_rev = 0.0;
  if (!plan.disc_changed_to.empty() || state.layout.discrete.size() != plan.disc_kept_from.size()) {
    const auto& sup = prior.theta_d_support;
    if (sup.empty()) throw Error(ErrorCode::ConfigInvalid, "tree uses d# but the prior declares no discrete support");
    const double lp = -std::log(static_cast<double>(sup.size()));
    for (std::size_t j : plan.disc_changed_to) {
      disc[j] = sup[rng.index(sup.size())];
      log_disc_fwd += lp;
    }
    log_disc_rev = lp * static_cast<double>(state.layout.discrete.size() - plan.disc_kept_from.size());
  }

  Proposal p{model.make_state(std::move(next), std::move(mapped.theta), std::move(disc), state.sigma)};
  const double aux_sd = model.config().aux_sigma;
  p.log_fwd = log_q_fwd + log_normal_density(u, aux_sd) + log_disc_fwd;
  p.log_rev = log_q_rev + log_normal_density(mapped.aux, aux_sd) + log_disc_rev;
  p.log_jacobian = mapped.log_abs_det;
  p.aux = std::move(u);
  p.aux_rev = std::move(mapped.aux);
  return p;
}

Proposal invalid_proposal(const ChainState& state) {
  Proposal p{state};
  p.valid = false;
  return p;
}

}  // namespace

Proposal propose_global(const Model& model, const ChainState& state, Rng& rng) {
  Tree next = sample_tree(model.prior(), rng);
  const double fwd = model.log_prior_tree(next);
  const double rev = state.log_prior_tree;
  return finish_structure(model, state, std::move(next), fwd, rev, rng);
}

double log_local_proposal(const Model& model, const Tree& from, const Tree& to) {
  const auto d = difference_root(from, to);
  if (!d) throw std::invalid_argument("log_local_proposal needs distinct trees");
  const Pta& pta = model.pta();
  FactorGraph fg(pta, to);
  const auto up = fg.upward<double>(fg.default_order());
  double total = 0.0;
  Address a;
  for (std::size_t len = 0; len <= d->size(); ++len) {
    if (len > 0) a.push_back((*d)[len - 1]);
    std::vector<double> mu;
    try {
      mu = context_marginal(pta, from, a);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::ImpossibleContext) throw;
      continue;
    }
    const auto pb = boltzmann(mu, model.config().tau);
    const auto& m = up[fg.node_at(a)];
    for (std::size_t q = 0; q < pb.size(); ++q) total += pb[q] * m[q];
  }
  if (!(total > 0.0)) return kNegInf;
  return std::log(total) - std::log(static_cast<double>(from.size()));
}

Proposal propose_local(const Model& model, const ChainState& state, Rng& rng) {
  const Tree& tree = state.expr.tree();
  const auto addresses = tree.addresses();
  const Address& r = addresses[rng.index(addresses.size())];
  if (r.size() > model.max_depth()) return invalid_proposal(state);
  std::vector<double> mu;
  try {
    mu = context_marginal(model.pta(), tree, r);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::ImpossibleContext) throw;
    return invalid_proposal(state);
  }
  const auto pb = boltzmann(mu, model.config().tau);
  const std::size_t q = rng.categorical(pb);
  auto grown = try_sample_from_state(model.pta(), q, rng, model.max_depth() - r.size());
  if (!grown) return invalid_proposal(state);
  Tree next = tree.with_subtree(r, std::move(grown->tree));
  if (next == tree) return Proposal{state};
  const double fwd = log_local_proposal(model, tree, next);
  const double rev = log_local_proposal(model, next, tree);
  return finish_structure(model, state, std::move(next), fwd, rev, rng);
}

Proposal propose_params(const Model& model, const ChainState& state, double step_theta, Rng& rng) {
  std::vector<double> phi = state.phi;
  const auto scales = model.slot_scales(state.layout);
  for (std::size_t i = 0; i < phi.size(); ++i) phi[i] += step_theta * scales[i] * rng.normal();
  std::vector<Rational> disc = state.theta_d;
  if (!disc.empty()) {
    const auto& sup = model.prior().theta_d_support;
    disc[rng.index(disc.size())] = sup[rng.index(sup.size())];
  }
  return Proposal{model.make_state(state.expr.tree(), std::move(phi), std::move(disc), state.sigma)};
}

Proposal propose_sigma(const Model& model, const ChainState& state, double step_sigma, Rng& rng) {
  const double sigma = state.sigma * std::exp(step_sigma * rng.normal());
  if (!(sigma > 0.0) || !std::isfinite(sigma)) return invalid_proposal(state);
  return Proposal{model.make_state(state.expr.tree(), state.phi, state.theta_d, sigma)};
}

}  // namespace treegress
