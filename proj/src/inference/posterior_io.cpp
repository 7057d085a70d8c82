#include "treegress/error.hpp"
#include "treegress/inference.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <limits>

namespace treegress {

using Json = nlohmann::ordered_json;

namespace {

void config_to(Json& j, const McmcConfig& c) {
  j["burn_in"] = c.burn_in;
  j["samples"] = c.samples;
  j["thin"] = c.thin;
  j["seed"] = c.seed;
  j["lambda_sigma"] = c.lambda_sigma;
  j["tau"] = c.tau;
  j["step_sigma"] = c.step_sigma;
  j["step_theta"] = c.step_theta;
  j["aux_sigma"] = c.aux_sigma;
  j["p_global"] = c.p_global;
  j["p_local"] = c.p_local;
  j["p_param"] = c.p_param;
  j["p_sigma"] = c.p_sigma;
  j["max_depth"] = c.max_depth;
  j["state_budget"] = c.state_budget;
  j["adapt"] = c.adapt;
  j["check_invariants"] = c.check_invariants;
}

McmcConfig config_from(const Json& j) {
  if (!j.is_object()) throw Error(ErrorCode::ConfigInvalid, "config must be a JSON object");
  McmcConfig c;
  try {
    for (const auto& [key, v] : j.items()) {
      if (key == "burn_in") c.burn_in = v.get<std::size_t>();
      else if (key == "samples") c.samples = v.get<std::size_t>();
      else if (key == "thin") c.thin = v.get<std::size_t>();
      else if (key == "seed") c.seed = v.get<std::uint64_t>();
      else if (key == "lambda_sigma") c.lambda_sigma = v.get<double>();
      else if (key == "tau") c.tau = v.get<double>();
      else if (key == "step_sigma") c.step_sigma = v.get<double>();
      else if (key == "step_theta") c.step_theta = v.get<double>();
      else if (key == "aux_sigma") c.aux_sigma = v.get<double>();
      else if (key == "p_global") c.p_global = v.get<double>();
      else if (key == "p_local") c.p_local = v.get<double>();
      else if (key == "p_param") c.p_param = v.get<double>();
      else if (key == "p_sigma") c.p_sigma = v.get<double>();
      else if (key == "max_depth") c.max_depth = v.get<unsigned>();
      else if (key == "state_budget") c.state_budget = v.get<std::size_t>();
      else if (key == "adapt") c.adapt = v.get<bool>();
      else if (key == "check_invariants") c.check_invariants = v.get<bool>();
      else throw Error(ErrorCode::ConfigInvalid, "unknown config key `" + key + "`");
      if (v.is_number_integer() && v.get<long long>() < 0) {
        throw Error(ErrorCode::ConfigInvalid, "config key `" + key + "` must not be negative");
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ConfigInvalid, std::string("bad config value: ") + e.what());
  }
  c.validate();
  return c;
}

double number_or_nan(const Json& v) {
  return v.is_null() ? std::numeric_limits<double>::quiet_NaN() : v.get<double>();
}

}  // namespace

McmcConfig mcmc_config_from_json(const std::string& text) {
  Json j;
  try {
    j = Json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ConfigInvalid, std::string("config is not valid JSON: ") + e.what());
  }
  return config_from(j);
}

std::string mcmc_config_to_json(const McmcConfig& config) {
  Json j;
  config_to(j, config);
  return j.dump(2);
}

double quantile_sorted(const std::vector<double>& sorted, double p) {
  if (sorted.empty()) return std::numeric_limits<double>::quiet_NaN();
  const double h = (static_cast<double>(sorted.size()) - 1.0) * p;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

std::vector<PredictivePoint> posterior_predict(const Posterior& posterior, const InputColumns& inputs, Rng* noise,
                                               bool allow_empty) {
  if (posterior.draws.empty()) throw Error(ErrorCode::AllDrawsNonFinite, "posterior has no draws");
  if (inputs.empty()) throw Error(ErrorCode::MissingInput, "no input columns");
  const std::size_t rows = inputs.begin()->second.size();
  const Alphabet& alphabet = *posterior.prior->alphabet;
  std::vector<std::vector<double>> values(rows);
  for (const auto& d : posterior.draws) {
    auto pred = eval_expression(d.expr, alphabet, inputs);
    const bool broadcast = pred.size() == 1;
    for (std::size_t i = 0; i < rows; ++i) {
      double v = pred[broadcast ? 0 : i];
      if (noise) v += noise->normal(0.0, d.sigma);
      if (std::isfinite(v)) values[i].push_back(v);
    }
  }
  std::vector<PredictivePoint> out(rows);
  for (std::size_t i = 0; i < rows; ++i) {
    auto& v = values[i];
    auto& p = out[i];
    p.finite_draws = v.size();
    if (v.empty()) {
      if (!allow_empty) {
        throw Error(ErrorCode::AllDrawsNonFinite, "every draw is non-finite at row " + std::to_string(i + 1));
      }
      const double nan = std::numeric_limits<double>::quiet_NaN();
      p.mean = p.q05 = p.q50 = p.q95 = nan;
      continue;
    }
    double sum = 0.0;
    for (double x : v) sum += x;
    p.mean = sum / static_cast<double>(v.size());
    std::sort(v.begin(), v.end());
    p.q05 = quantile_sorted(v, 0.05);
    p.q50 = quantile_sorted(v, 0.50);
    p.q95 = quantile_sorted(v, 0.95);
  }
  return out;
}

std::string posterior_to_json(const Posterior& posterior) {
  const Alphabet& alphabet = *posterior.prior->alphabet;
  Json j;
  j["prior"] = format_prior(*posterior.prior);
  j["seed"] = posterior.seed;
  j["chains"] = posterior.chains;
  Json config;
  config_to(config, posterior.config);
  j["config"] = std::move(config);
  Json draws = Json::array();
  for (const auto& d : posterior.draws) {
    Json e;
    e["expr"] = to_text(d.expr.tree(), alphabet);
    e["theta_c"] = d.expr.theta_c();
    Json td = Json::array();
    for (const auto& r : d.expr.theta_d()) td.push_back(format_fraction(r));
    e["theta_d"] = std::move(td);
    e["sigma"] = d.sigma;
    e["log_post"] = d.log_post;
    draws.push_back(std::move(e));
  }
  j["draws"] = std::move(draws);
  Json stats;
  for (MoveKind k : kMoveKinds) {
    const auto& s = posterior.stats[static_cast<std::size_t>(k)];
    stats[move_name(k)] = Json{{"proposed", s.proposed}, {"accepted", s.accepted}, {"rate", s.rate()}};
  }
  j["accept_stats"] = std::move(stats);
  j["final_step_theta"] = posterior.final_step_theta;
  j["final_step_sigma"] = posterior.final_step_sigma;
  return j.dump(2) + "\n";
}

Posterior posterior_from_json(const std::string& text) {
  try {
    const Json j = Json::parse(text);
    Posterior post;
    post.prior = std::make_shared<PriorSpec>(parse_prior(j.at("prior").get<std::string>()));
    post.seed = j.at("seed").get<std::uint64_t>();
    post.chains = j.value("chains", std::size_t{1});
    post.config = config_from(j.at("config"));
    const PriorSpec& prior = *post.prior;
    for (const auto& e : j.at("draws")) {
      Tree tree = parse_tree(e.at("expr").get<std::string>(), *prior.alphabet);
      const ParamLayout layout = param_layout(tree, prior);
      auto theta_c = e.at("theta_c").get<std::vector<double>>();
      std::vector<Rational> theta_d;
      for (const auto& r : e.at("theta_d")) {
        auto v = parse_rational(r.get<std::string>());
        if (!v) throw Error(ErrorCode::ConfigInvalid, "bad discrete parameter in posterior");
        theta_d.push_back(*v);
      }
      SymbolicExpression expr(*prior.alphabet, std::move(tree), std::move(theta_c), std::move(theta_d),
                              layout.ties());
      post.draws.push_back(Draw{std::move(expr), e.at("sigma").get<double>(), number_or_nan(e.at("log_post"))});
    }
    if (j.contains("accept_stats")) {
      for (MoveKind k : kMoveKinds) {
        const auto& s = j["accept_stats"].at(move_name(k));
        auto& out = post.stats[static_cast<std::size_t>(k)];
        out.proposed = s.at("proposed").get<std::size_t>();
        out.accepted = s.at("accepted").get<std::size_t>();
      }
    }
    post.final_step_theta = number_or_nan(j.value("final_step_theta", Json()));
    post.final_step_sigma = number_or_nan(j.value("final_step_sigma", Json()));
    return post;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ConfigInvalid, std::string("malformed posterior: ") + e.what());
  }
}

}  // namespace treegress
