#pragma once

#include "treegress/expression.hpp"
#include "treegress/prte.hpp"
#include "treegress/pta.hpp"
#include "treegress/random.hpp"

#include <array>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace treegress {

struct McmcConfig {
  std::size_t burn_in = 2000;
  /// Steps after burn-in; every `thin`-th one is recorded.
  std::size_t samples = 1000;
  std::size_t thin = 10;
  std::uint64_t seed = 0;
  double lambda_sigma = 1.0;
  double tau = 1.0;
  double step_sigma = 0.3;
  double step_theta = 0.1;
  /// Standard deviation of the auxiliary variables of dimension-changing moves.
  double aux_sigma = 1.0;
  double p_global = 0.2;
  double p_local = 0.4;
  double p_param = 0.3;
  double p_sigma = 0.1;
  /// 0 means the prior's own depth bound.
  unsigned max_depth = 0;
  std::size_t state_budget = 10000;
  /// Tune step_theta and step_sigma during burn-in, then freeze them.
  bool adapt = true;
  /// Recompute cached terms and the reverse move ratio after every step.
  bool check_invariants = false;

  /// Throws Error{ConfigInvalid}.
  void validate() const;

  friend bool operator==(const McmcConfig&, const McmcConfig&) = default;
};

/// Parses a JSON object of McmcConfig fields; missing keys keep defaults.
/// Throws Error{ConfigInvalid} on unknown keys or bad values.
McmcConfig mcmc_config_from_json(const std::string& text);
std::string mcmc_config_to_json(const McmcConfig& config);

/// Full Gaussian log density of the targets around the predictions;
/// -inf when any prediction is not finite.
double log_likelihood(const SymbolicExpression& expr, const Alphabet& alphabet, double sigma, const Dataset& data);

/// Generic likelihood, for tests and non-Gaussian models.
using LikelihoodFn = std::function<double(const SymbolicExpression& expr, double sigma)>;

struct ParamMap {
  std::vector<double> theta;
  std::vector<double> aux;
  double log_abs_det = 0.0;
};

/// Dimension-raising map. `u` has size `target` >= theta.size(); its first
/// theta.size() entries are averaged with theta, the rest become new entries.
/// Throws Error{SizeMismatch}.
ParamMap expand_params(const std::vector<double>& theta, const std::vector<double>& u, std::size_t target);
/// Dimension-lowering map, the inverse of expand_params. The first u.size()
/// entries of theta are kept (shifted by u); the rest go to the auxiliary output.
/// Throws Error{SizeMismatch}.
ParamMap shrink_params(const std::vector<double>& theta, const std::vector<double>& u);

/// Sampler state. Continuous parameters are held per free slot in
/// unconstrained coordinates `phi`: log theta for markers with an exponential
/// prior, theta itself otherwise.
struct ChainState {
  SymbolicExpression expr;
  ParamLayout layout;
  std::vector<double> phi;
  std::vector<Rational> theta_d;
  double sigma = 1.0;
  double log_lik = 0.0;
  double log_prior_tree = 0.0;
  double log_prior_params = 0.0;
};

/// Prior, compiled automaton, likelihood and settings of one chain.
class Model {
 public:
  Model(const PriorSpec& prior, LikelihoodFn likelihood, const McmcConfig& config);

  const PriorSpec& prior() const { return *prior_; }
  const Pta& pta() const { return pta_; }
  const McmcConfig& config() const { return config_; }
  unsigned max_depth() const { return max_depth_; }

  /// Builds a state with freshly computed caches.
  ChainState make_state(Tree tree, std::vector<double> phi, std::vector<Rational> theta_d, double sigma) const;
  /// Prior draw of tree, parameters and sigma.
  ChainState sample_state(Rng& rng) const;

  /// log p~(t), -inf beyond the depth bound.
  double log_prior_tree(const Tree& tree) const;
  /// log p(sigma) under Exp(lambda_sigma).
  double log_prior_sigma(double sigma) const;
  /// Log density of the state in the sampler's coordinates (tree, phi, log sigma).
  double log_target(const ChainState& state) const;
  /// Unnormalized log posterior in natural coordinates.
  double log_posterior(const ChainState& state) const;

  std::vector<double> to_theta(const ParamLayout& layout, const std::vector<double>& phi) const;
  std::vector<double> to_phi(const ParamLayout& layout, const std::vector<double>& theta) const;
  /// Sum of log |d theta / d phi|.
  double log_jacobian(const ParamLayout& layout, const std::vector<double>& phi) const;
  /// Random-walk scale of each slot before multiplying by step_theta.
  std::vector<double> slot_scales(const ParamLayout& layout) const;

 private:
  std::shared_ptr<const PriorSpec> prior_;
  Pta pta_;
  LikelihoodFn likelihood_;
  McmcConfig config_;
  unsigned max_depth_;
};

enum class MoveKind { Global, Local, Param, Sigma };
inline constexpr std::array<MoveKind, 4> kMoveKinds{MoveKind::Global, MoveKind::Local, MoveKind::Param,
                                                     MoveKind::Sigma};
const char* move_name(MoveKind kind);

struct Proposal {
  explicit Proposal(ChainState s) : state(std::move(s)) {}

  ChainState state;
  /// log proposal density of the forward and reverse moves, auxiliaries included.
  double log_fwd = 0.0;
  double log_rev = 0.0;
  double log_jacobian = 0.0;
  /// Auxiliary draw and the reverse move's auxiliary.
  std::vector<double> aux;
  std::vector<double> aux_rev;
  /// False when the move could not be carried out (counts as a rejection).
  bool valid = true;
};

/// Log acceptance ratio of a proposal; -inf for invalid proposals and
/// proposals with zero target density.
double log_acceptance(const Model& model, const ChainState& current, const Proposal& proposal);

/// Address below which two trees differ; nullopt when they are equal.
std::optional<Address> difference_root(const Tree& a, const Tree& b);

/// Carries parameters from `from` to `to`. Slots whose members all lie
/// outside the subtree at `changed`, and which appear unchanged in both trees,
/// keep their value. The remaining slots are paired in pre-order and mapped by
/// expand_params or shrink_params; the auxiliary vector has one entry per
/// changed slot of `to`, or none when both sides change equally many slots.
struct Transfer {
  std::vector<std::size_t> kept_from, kept_to;      // parallel slot indices
  std::vector<std::size_t> changed_from, changed_to;
  std::vector<std::size_t> disc_kept_from, disc_kept_to;
  std::vector<std::size_t> disc_changed_to;
  /// Auxiliary size drawn by the move.
  std::size_t aux_size() const;
};
Transfer plan_transfer(const ParamLayout& from, const ParamLayout& to, const std::optional<Address>& changed);
ParamMap apply_transfer(const Transfer& plan, const std::vector<double>& phi, const std::vector<double>& u,
                        std::size_t to_size);

/// log Q(to | from) of the local regrow move.
double log_local_proposal(const Model& model, const Tree& from, const Tree& to);

Proposal propose_global(const Model& model, const ChainState& state, Rng& rng);
Proposal propose_local(const Model& model, const ChainState& state, Rng& rng);
Proposal propose_params(const Model& model, const ChainState& state, double step_theta, Rng& rng);
Proposal propose_sigma(const Model& model, const ChainState& state, double step_sigma, Rng& rng);

struct Draw {
  SymbolicExpression expr;
  double sigma = 0.0;
  double log_post = 0.0;
};

struct MoveStats {
  std::size_t proposed = 0;
  std::size_t accepted = 0;
  double rate() const { return proposed ? static_cast<double>(accepted) / static_cast<double>(proposed) : 0.0; }
};

struct Posterior {
  std::shared_ptr<const PriorSpec> prior;
  McmcConfig config;
  std::uint64_t seed = 0;
  std::size_t chains = 1;
  std::vector<Draw> draws;
  std::array<MoveStats, 4> stats{};
  /// Step sizes after burn-in adaptation (of the first chain).
  double final_step_theta = 0.0;
  double final_step_sigma = 0.0;
};

/// Runs one chain. Throws Error{ConfigInvalid} for bad configs and data whose
/// columns do not cover the prior's variables; Error{DepthBudgetExhausted}
/// when no initial tree can be drawn.
Posterior run_chain(const PriorSpec& prior, const Dataset& data, const McmcConfig& config);
Posterior run_chain(const PriorSpec& prior, LikelihoodFn likelihood, const McmcConfig& config);

/// Runs `chains` independent chains in parallel and concatenates their draws
/// in chain order. Chain k uses seed mix_seed(config.seed, k); a single chain
/// uses config.seed itself.
Posterior run_chains(const PriorSpec& prior, const Dataset& data, const McmcConfig& config, std::size_t chains);

struct PredictivePoint {
  double mean = 0.0;
  double q05 = 0.0;
  double q50 = 0.0;
  double q95 = 0.0;
  std::size_t finite_draws = 0;
};

/// Per-point summary over draws of eval(x) (+ N(0, sigma) noise when `noise`
/// is given). Non-finite draws are skipped. A point with no finite draw throws
/// Error{AllDrawsNonFinite}, unless `allow_empty`, in which case it is
/// reported with finite_draws = 0 and NaN statistics.
std::vector<PredictivePoint> posterior_predict(const Posterior& posterior, const InputColumns& inputs,
                                               Rng* noise = nullptr, bool allow_empty = false);

/// Type-7 (linear interpolation) quantile of sorted values.
double quantile_sorted(const std::vector<double>& sorted, double p);

std::string posterior_to_json(const Posterior& posterior);
/// Throws Error{ConfigInvalid} for malformed documents.
Posterior posterior_from_json(const std::string& text);

}  // namespace treegress
