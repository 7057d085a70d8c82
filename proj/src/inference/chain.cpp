#include "treegress/error.hpp"
#include "treegress/inference.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <thread>

namespace treegress {

void McmcConfig::validate() const {
  auto fail = [](const std::string& what) { throw Error(ErrorCode::ConfigInvalid, what); };
  if (thin == 0) fail("thin must be positive");
  if (samples == 0) fail("samples must be positive");
  if (!(lambda_sigma > 0.0)) fail("lambda_sigma must be positive");
  if (!(tau > 0.0)) fail("tau must be positive");
  if (!(step_sigma >= 0.0) || !(step_theta >= 0.0)) fail("step sizes must be non-negative");
  if (!(aux_sigma > 0.0)) fail("aux_sigma must be positive");
  for (double p : {p_global, p_local, p_param, p_sigma}) {
    if (!(p >= 0.0)) fail("move probabilities must be non-negative");
  }
  if (std::fabs(p_global + p_local + p_param + p_sigma - 1.0) > 1e-12) fail("move probabilities must sum to 1");
  if (state_budget == 0) fail("state_budget must be positive");
}

double log_likelihood(const SymbolicExpression& expr, const Alphabet& alphabet, double sigma, const Dataset& data) {
  const auto pred = eval_expression(expr, alphabet, columns_of(data));
  const double norm = -0.5 * std::log(2.0 * std::numbers::pi) - std::log(sigma);
  // A tree without input symbols evaluates to one broadcast value.
  const bool broadcast = pred.size() == 1;
  double ll = 0.0;
  for (std::size_t i = 0; i < data.rows(); ++i) {
    const double y = pred[broadcast ? 0 : i];
    if (!std::isfinite(y)) return -std::numeric_limits<double>::infinity();
    const double z = (data.targets[i] - y) / sigma;
    ll += norm - 0.5 * z * z;
  }
  return ll;
}

namespace {

bool close(double a, double b) {
  if (a == b) return true;
  return std::fabs(a - b) <= 1e-9 * std::max(1.0, std::max(std::fabs(a), std::fabs(b)));
}

void check_state(const Model& model, const ChainState& s) {
  const ChainState fresh = model.make_state(s.expr.tree(), s.phi, s.theta_d, s.sigma);
  if (!close(fresh.log_lik, s.log_lik) || !close(fresh.log_prior_tree, s.log_prior_tree) ||
      !close(fresh.log_prior_params, s.log_prior_params) || !(fresh.expr == s.expr) || !(s.sigma > 0.0)) {
    throw std::logic_error("chain state caches disagree with recomputation");
  }
}

double log_aux_density(const std::vector<double>& u, double sd) {
  double lp = 0.0;
  for (double x : u) lp += -0.5 * std::log(2.0 * std::numbers::pi) - std::log(sd) - 0.5 * (x / sd) * (x / sd);
  return lp;
}

// Rebuilds the reverse of a structure move from scratch and checks that the
// forward and reverse acceptance ratios multiply to one.
void check_reversal(const Model& model, const ChainState& from, const Proposal& p, MoveKind kind) {
  const Tree& t = from.expr.tree();
  const Tree& t2 = p.state.expr.tree();
  const auto changed = difference_root(t, t2);
  if (!changed) return;
  auto fail = [](const char* what) { throw std::logic_error(what); };

  const Transfer ahead = plan_transfer(from.layout, p.state.layout, changed);
  const Transfer back = plan_transfer(p.state.layout, from.layout, changed);
  const ParamMap undo = apply_transfer(back, p.state.phi, p.aux_rev, from.layout.continuous.size());
  for (std::size_t i = 0; i < undo.theta.size(); ++i) {
    if (!close(undo.theta[i], from.phi[i])) fail("reverse parameter map does not restore the state");
  }
  if (undo.aux.size() != p.aux.size()) fail("reverse parameter map changes the auxiliary size");
  for (std::size_t i = 0; i < undo.aux.size(); ++i) {
    if (!close(undo.aux[i], p.aux[i])) fail("reverse parameter map does not restore the auxiliaries");
  }

  const double q_fwd = kind == MoveKind::Local ? log_local_proposal(model, t, t2) : model.log_prior_tree(t2);
  const double q_rev = kind == MoveKind::Local ? log_local_proposal(model, t2, t) : model.log_prior_tree(t);
  const double sd = model.config().aux_sigma;
  const auto& sup = model.prior().theta_d_support;
  const double per_disc = sup.empty() ? 0.0 : -std::log(static_cast<double>(sup.size()));
  const double disc_fwd = per_disc * static_cast<double>(ahead.disc_changed_to.size());
  const double disc_rev = per_disc * static_cast<double>(back.disc_changed_to.size());
  const double fwd_density = q_fwd + log_aux_density(p.aux, sd) + disc_fwd;
  const double rev_density = q_rev + log_aux_density(p.aux_rev, sd) + disc_rev;
  if (!close(fwd_density, p.log_fwd) || !close(rev_density, p.log_rev)) fail("proposal densities disagree");

  const double a = model.log_target(from);
  const double b = model.log_target(p.state);
  if (!std::isfinite(a) || !std::isfinite(b)) return;
  const double forward = log_acceptance(model, from, p);
  const double reverse = a - b + fwd_density - rev_density + undo.log_abs_det;
  if (std::fabs(forward + reverse) > 1e-6) fail("forward and reverse acceptance ratios do not multiply to one");
}

struct StepSize {
  double log_value;
  double target;
  std::size_t count = 0;

  void update(bool accepted) {
    ++count;
    log_value += ((accepted ? 1.0 : 0.0) - target) / std::sqrt(static_cast<double>(count));
    log_value = std::clamp(log_value, -12.0, 4.0);
  }
  double value() const { return std::exp(log_value); }
};

Posterior run_model(const Model& model, const McmcConfig& config) {
  Rng rng(config.seed);
  ChainState state = model.sample_state(rng);
  for (int attempt = 0; attempt < 100 && model.log_target(state) == -std::numeric_limits<double>::infinity();
       ++attempt) {
    state = model.sample_state(rng);
  }

  Posterior post;
  post.prior = std::make_shared<PriorSpec>(model.prior());
  post.config = config;
  post.seed = config.seed;
  const std::vector<double> mix{config.p_global, config.p_local, config.p_param, config.p_sigma};
  StepSize theta_step{std::log(std::max(config.step_theta, 1e-300)), 0.234};
  StepSize sigma_step{std::log(std::max(config.step_sigma, 1e-300)), 0.44};
  const bool tune_theta = config.adapt && config.step_theta > 0.0;
  const bool tune_sigma = config.adapt && config.step_sigma > 0.0;

  const std::size_t total = config.burn_in + config.samples;
  for (std::size_t step = 0; step < total; ++step) {
    const bool burning = step < config.burn_in;
    const auto kind = static_cast<MoveKind>(rng.categorical(mix));
    const double st = tune_theta ? theta_step.value() : config.step_theta;
    const double ss = tune_sigma ? sigma_step.value() : config.step_sigma;
    Proposal p = [&] {
      switch (kind) {
        case MoveKind::Global: return propose_global(model, state, rng);
        case MoveKind::Local: return propose_local(model, state, rng);
        case MoveKind::Param: return propose_params(model, state, st, rng);
        case MoveKind::Sigma: break;
      }
      return propose_sigma(model, state, ss, rng);
    }();
    const double la = log_acceptance(model, state, p);
    bool accept = false;
    if (la >= 0.0) {
      accept = true;
    } else if (la > -std::numeric_limits<double>::infinity()) {
      accept = std::log(rng.uniform()) < la;
    }
    if (config.check_invariants && p.valid && (kind == MoveKind::Global || kind == MoveKind::Local)) {
      check_reversal(model, state, p, kind);
    }
    if (burning) {
      if (kind == MoveKind::Param && tune_theta && !state.phi.empty()) theta_step.update(accept);
      if (kind == MoveKind::Sigma && tune_sigma) sigma_step.update(accept);
    } else {
      auto& s = post.stats[static_cast<std::size_t>(kind)];
      ++s.proposed;
      if (accept) ++s.accepted;
    }
    if (accept) {
      state = std::move(p.state);
      if (config.check_invariants) check_state(model, state);
    }
    if (!burning && (step - config.burn_in + 1) % config.thin == 0) {
      post.draws.push_back(Draw{state.expr, state.sigma, model.log_posterior(state)});
    }
  }
  post.final_step_theta = tune_theta ? theta_step.value() : config.step_theta;
  post.final_step_sigma = tune_sigma ? sigma_step.value() : config.step_sigma;
  return post;
}

void check_columns(const PriorSpec& prior, const Dataset& data) {
  for (const auto& name : prior.alphabet->variable_names()) {
    if (std::find(data.input_names.begin(), data.input_names.end(), name) == data.input_names.end()) {
      throw Error(ErrorCode::ConfigInvalid, "data has no column for prior variable `" + name + "`");
    }
  }
  if (data.rows() == 0) throw Error(ErrorCode::ConfigInvalid, "data has no rows");
}

LikelihoodFn gaussian(const PriorSpec& prior, const Dataset& data) {
  auto alphabet = prior.alphabet;
  return [alphabet, &data](const SymbolicExpression& e, double sigma) {
    return log_likelihood(e, *alphabet, sigma, data);
  };
}

}  // namespace

Posterior run_chain(const PriorSpec& prior, LikelihoodFn likelihood, const McmcConfig& config) {
  config.validate();
  Model model(prior, std::move(likelihood), config);
  return run_model(model, config);
}

Posterior run_chain(const PriorSpec& prior, const Dataset& data, const McmcConfig& config) {
  config.validate();
  check_columns(prior, data);
  return run_chain(prior, gaussian(prior, data), config);
}

Posterior run_chains(const PriorSpec& prior, const Dataset& data, const McmcConfig& config, std::size_t chains) {
  if (chains == 0) throw Error(ErrorCode::ConfigInvalid, "chains must be positive");
  if (chains == 1) return run_chain(prior, data, config);
  config.validate();
  check_columns(prior, data);
  std::vector<Posterior> parts(chains);
  std::vector<std::exception_ptr> errors(chains);
  std::vector<std::thread> threads;
  for (std::size_t k = 0; k < chains; ++k) {
    threads.emplace_back([&, k] {
      try {
        McmcConfig c = config;
        c.seed = mix_seed(config.seed, k);
        parts[k] = run_chain(prior, data, c);
      } catch (...) {
        errors[k] = std::current_exception();
      }
    });
  }
  for (auto& t : threads) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  Posterior merged = std::move(parts[0]);
  merged.config = config;
  merged.seed = config.seed;
  merged.chains = chains;
  for (std::size_t k = 1; k < chains; ++k) {
    for (auto& d : parts[k].draws) merged.draws.push_back(std::move(d));
    for (std::size_t m = 0; m < merged.stats.size(); ++m) {
      merged.stats[m].proposed += parts[k].stats[m].proposed;
      merged.stats[m].accepted += parts[k].stats[m].accepted;
    }
  }
  return merged;
}

}  // namespace treegress
