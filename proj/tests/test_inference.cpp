#include <doctest.h>

#include "treegress/error.hpp"
#include "treegress/inference.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>

using namespace treegress;

namespace {

const char* kE1 =
    "iter $y { choice{ 1/3: f($x, $y), 1/3: f($y, $x), 1/3: g($x) } }"
    " . subst($x, iter $x { choice{ 1/4: f($x, $x), 1/4: g($x), 1/4: a, 1/4: b } })";
const char* kEsum = "iter $x { choice{ 0.1: +(c#, $x), 0.9: c# } }";
const char* kToy = "choice{ 0.3: a, 0.2: b, 0.1: g(a), 0.15: g(b), 0.15: f(a, b), 0.1: f(b, a) }";

template <class F>
ErrorCode code_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an error");
  return ErrorCode::IoError;
}

// Determinant by Gaussian elimination with partial pivoting.
double determinant(std::vector<std::vector<double>> m) {
  const std::size_t n = m.size();
  double det = 1.0;
  for (std::size_t c = 0; c < n; ++c) {
    std::size_t piv = c;
    for (std::size_t r = c + 1; r < n; ++r) {
      if (std::fabs(m[r][c]) > std::fabs(m[piv][c])) piv = r;
    }
    if (m[piv][c] == 0.0) return 0.0;
    if (piv != c) {
      std::swap(m[piv], m[c]);
      det = -det;
    }
    det *= m[c][c];
    for (std::size_t r = c + 1; r < n; ++r) {
      const double f = m[r][c] / m[c][c];
      for (std::size_t k = c; k < n; ++k) m[r][k] -= f * m[c][k];
    }
  }
  return det;
}

// Central-difference Jacobian determinant of x -> concat(map(x)).
template <class Map>
double numeric_det(const std::vector<double>& x, Map&& map) {
  const double h = 1e-5;
  const std::size_t n = x.size();
  std::vector<std::vector<double>> jac(n, std::vector<double>(n));
  for (std::size_t j = 0; j < n; ++j) {
    auto hi = x, lo = x;
    hi[j] += h;
    lo[j] -= h;
    const auto a = map(hi), b = map(lo);
    for (std::size_t i = 0; i < n; ++i) jac[i][j] = (a[i] - b[i]) / (2 * h);
  }
  return determinant(jac);
}

std::vector<double> concat(const ParamMap& m) {
  std::vector<double> out = m.theta;
  out.insert(out.end(), m.aux.begin(), m.aux.end());
  return out;
}

Dataset dataset(std::vector<double> x, std::vector<double> y) {
  Dataset d;
  d.input_names = {"x"};
  d.inputs = {std::move(x)};
  d.target_name = "y";
  d.targets = std::move(y);
  return d;
}

}  // namespace

TEST_CASE("gaussian log likelihood") {
  Alphabet a;
  Tree t = parse_tree_extending("(* c# x)", a);
  const double half_log_2pi = 0.5 * std::log(2.0 * std::numbers::pi);
  SUBCASE("perfect fit") {
    SymbolicExpression e(a, t, {2.0});
    Dataset d = dataset({1, 2, 3, 4}, {2, 4, 6, 8});
    CHECK(log_likelihood(e, a, 1.0, d) == doctest::Approx(-4 * half_log_2pi));
  }
  SUBCASE("hand-computed residuals") {
    SymbolicExpression e(a, t, {1.0});
    Dataset d = dataset({1, 2, 3}, {1.5, 1.0, 3.0});
    // residuals 0.5, -1, 0 with sigma 0.5: z^2 = 1, 4, 0
    const double expect = 3 * (-half_log_2pi - std::log(0.5)) - 0.5 * (1 + 4 + 0);
    CHECK(log_likelihood(e, a, 0.5, d) == doctest::Approx(expect).epsilon(1e-14));
  }
  SUBCASE("non-finite prediction") {
    Tree inv = parse_tree_extending("(/ 1 x)", a);
    Dataset d = dataset({1, 0}, {1, 1});
    CHECK(log_likelihood(SymbolicExpression(a, inv), a, 1.0, d) == -std::numeric_limits<double>::infinity());
  }
}

TEST_CASE("dimension-matching maps") {
  SUBCASE("expand example") {
    auto m = expand_params({4}, {2, 9}, 2);
    CHECK(m.theta == std::vector<double>{3, 9});
    CHECK(m.aux == std::vector<double>{1});
    CHECK(std::exp(m.log_abs_det) == doctest::Approx(0.5));
  }
  SUBCASE("expand from nothing") {
    auto m = expand_params({}, {1.5, -2}, 2);
    CHECK(m.theta == std::vector<double>{1.5, -2});
    CHECK(m.aux.empty());
    CHECK(m.log_abs_det == 0.0);
  }
  SUBCASE("shrink example") {
    auto m = shrink_params({3, 7}, {1});
    CHECK(m.theta == std::vector<double>{4});
    CHECK(m.aux == std::vector<double>{2, 7});
    CHECK(std::exp(m.log_abs_det) == doctest::Approx(2.0));
  }
  SUBCASE("shrink to nothing") {
    auto m = shrink_params({3, 7}, {});
    CHECK(m.theta.empty());
    CHECK(m.aux == std::vector<double>{3, 7});
    CHECK(m.log_abs_det == 0.0);
  }
  SUBCASE("shrink undoes expand") {
    const std::vector<double> theta{0.3, -1.2, 5.0};
    const std::vector<double> u{0.7, 2.0, -0.4, 1.1, 9.0};
    auto up = expand_params(theta, u, 5);
    auto down = shrink_params(up.theta, up.aux);
    REQUIRE(down.theta.size() == theta.size());
    for (std::size_t i = 0; i < theta.size(); ++i) CHECK(down.theta[i] == doctest::Approx(theta[i]));
    for (std::size_t i = 0; i < u.size(); ++i) CHECK(down.aux[i] == doctest::Approx(u[i]));
    CHECK(up.log_abs_det + down.log_abs_det == doctest::Approx(0.0));
  }
  SUBCASE("size errors") {
    CHECK(code_of([] { expand_params({1, 2}, {1}, 1); }) == ErrorCode::SizeMismatch);
    CHECK(code_of([] { expand_params({1}, {1, 2, 3}, 2); }) == ErrorCode::SizeMismatch);
    CHECK(code_of([] { shrink_params({1}, {1, 2}); }) == ErrorCode::SizeMismatch);
  }
}

TEST_CASE("analytic Jacobians match central differences") {
  Rng rng(11);
  for (std::size_t n = 0; n <= 5; ++n) {
    for (std::size_t ns = 0; ns <= 5; ++ns) {
      if (n + ns == 0) continue;
      std::vector<double> x(n + ns);
      for (double& v : x) v = rng.normal(0.0, 3.0);
      CAPTURE(n);
      CAPTURE(ns);
      if (ns >= n) {
        auto f = [&](const std::vector<double>& in) {
          return concat(expand_params({in.begin(), in.begin() + static_cast<long>(n)},
                                      {in.begin() + static_cast<long>(n), in.end()}, ns));
        };
        const double analytic = expand_params(std::vector<double>(n), std::vector<double>(ns), ns).log_abs_det;
        CHECK(std::fabs(std::fabs(numeric_det(x, f)) - std::exp(analytic)) < 1e-6);
      }
      if (ns <= n) {
        auto f = [&](const std::vector<double>& in) {
          return concat(shrink_params({in.begin(), in.begin() + static_cast<long>(n)},
                                      {in.begin() + static_cast<long>(n), in.end()}));
        };
        const double analytic = shrink_params(std::vector<double>(n), std::vector<double>(ns)).log_abs_det;
        CHECK(std::fabs(std::fabs(numeric_det(x, f)) - std::exp(analytic)) < 1e-6);
      }
    }
  }
}

TEST_CASE("difference root and parameter transfer") {
  PriorSpec p = parse_prior(kEsum);
  const Alphabet& a = *p.alphabet;
  Tree t1 = parse_tree("(+ c# (+ c# c#))", a);
  Tree t2 = parse_tree("(+ c# c#)", a);
  REQUIRE(difference_root(t1, t2));
  CHECK(format_address(*difference_root(t1, t2)) == "2");
  CHECK_FALSE(difference_root(t1, t1));
  CHECK(format_address(*difference_root(t1, parse_tree("c#", a))) == "ε");

  const auto l1 = param_layout(t1, p);
  const auto l2 = param_layout(t2, p);
  const auto plan = plan_transfer(l1, l2, difference_root(t1, t2));
  CHECK(plan.kept_from == std::vector<std::size_t>{0});
  CHECK(plan.changed_from.size() == 2);
  CHECK(plan.changed_to.size() == 1);
  CHECK(plan.aux_size() == 1);
  const std::vector<double> phi{0.5, 1.0, 3.0};
  auto there = apply_transfer(plan, phi, {0.25}, l2.continuous.size());
  CHECK(there.theta == std::vector<double>{0.5, 1.25});
  const auto back_plan = plan_transfer(l2, l1, difference_root(t2, t1));
  auto back = apply_transfer(back_plan, there.theta, there.aux, l1.continuous.size());
  CHECK(back.theta == phi);
  CHECK(back.aux == std::vector<double>{0.25});
  CHECK(there.log_abs_det + back.log_abs_det == doctest::Approx(0.0));
}

TEST_CASE("local proposal frequencies match the proposal density") {
  PriorSpec p = parse_prior(kE1);
  McmcConfig cfg;
  for (double tau : {1.0, 3.0}) {
    cfg.tau = tau;
    Model model(p, [](const SymbolicExpression&, double) { return 0.0; }, cfg);
    ChainState s = model.make_state(parse_tree("(f a (g b))", *p.alphabet), {}, {}, 1.0);
    Rng rng(5);
    std::map<Tree, int> counts;
    const int n = 60000;
    for (int i = 0; i < n; ++i) {
      Proposal prop = propose_local(model, s, rng);
      if (prop.valid) ++counts[prop.state.expr.tree()];
    }
    int checked = 0;
    for (const auto& [tree, c] : counts) {
      if (tree == s.expr.tree() || c < 300) continue;
      const double q = std::exp(log_local_proposal(model, s.expr.tree(), tree));
      const double se = std::sqrt(q * (1 - q) / n);
      CAPTURE(to_text(tree, *p.alphabet));
      CHECK(std::fabs(static_cast<double>(c) / n - q) < 4 * se);
      ++checked;
    }
    CHECK(checked >= 5);
  }
}

TEST_CASE("toy posterior matches exhaustive enumeration") {
  PriorSpec p = parse_prior(kToy);
  const Alphabet& a = *p.alphabet;
  const std::map<std::string, double> weight{{"a", 1.0},     {"b", 2.0},       {"(g a)", 4.0},
                                             {"(g b)", 1.0}, {"(f a b)", 3.0}, {"(f b a)", 0.5}};
  double z = 0.0;
  std::map<std::string, double> exact;
  for (const auto& [text, w] : weight) {
    exact[text] = prte_density_value(p, parse_tree(text, a)) * w;
    z += exact[text];
  }
  for (auto& [text, v] : exact) v /= z;

  auto lik = [&](const SymbolicExpression& e, double) { return std::log(weight.at(to_text(e.tree(), a))); };
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    McmcConfig cfg;
    cfg.seed = seed;
    cfg.burn_in = 1000;
    cfg.samples = 100000;
    cfg.thin = 1;
    Posterior post = run_chain(p, lik, cfg);
    REQUIRE(post.draws.size() == 100000);
    std::map<std::string, double> freq;
    for (const auto& d : post.draws) freq[to_text(d.expr.tree(), a)] += 1.0 / static_cast<double>(post.draws.size());
    double tv = 0.0;
    for (const auto& [text, v] : exact) tv += 0.5 * std::fabs(v - freq[text]);
    CAPTURE(seed);
    CHECK(tv < 0.1);
    CHECK(tv < 0.02);
  }
}

TEST_CASE("invariant checks hold along a chain") {
  for (const char* src : {kE1, kEsum}) {
    PriorSpec p = parse_prior(src);
    McmcConfig cfg;
    cfg.burn_in = 200;
    cfg.samples = 3000;
    cfg.check_invariants = true;
    Alphabet a = *p.alphabet;
    // A likelihood that prefers small trees keeps the chain moving.
    auto lik = [](const SymbolicExpression& e, double sigma) {
      double s = 0.0;
      for (double v : e.theta_c()) s += v;
      return -0.5 * static_cast<double>(e.tree().size()) - 0.5 * (s - 1.0) * (s - 1.0) / (sigma * sigma) -
             std::log(sigma);
    };
    CHECK_NOTHROW(run_chain(p, lik, cfg));
  }
}

TEST_CASE("prior recovery under a constant likelihood") {
  PriorSpec p = parse_prior(kE1);
  McmcConfig cfg;
  cfg.burn_in = 2000;
  cfg.samples = 200000;
  cfg.thin = 10;
  cfg.p_global = 0.2;
  cfg.p_local = 0.4;
  cfg.p_param = 0.1;
  cfg.p_sigma = 0.3;
  cfg.step_sigma = 1.0;
  cfg.seed = 17;
  Posterior post = run_chain(p, [](const SymbolicExpression&, double) { return 0.0; }, cfg);
  REQUIRE(post.draws.size() == 20000);

  std::vector<double> sig;
  for (const auto& d : post.draws) sig.push_back(d.sigma);
  std::sort(sig.begin(), sig.end());
  double ks = 0.0;
  for (std::size_t i = 0; i < sig.size(); ++i) {
    const double f = 1.0 - std::exp(-sig[i]);
    ks = std::max({ks, std::fabs(f - static_cast<double>(i) / sig.size()),
                   std::fabs(f - static_cast<double>(i + 1) / sig.size())});
  }
  CHECK(ks < 0.05);

  std::map<Tree, double> density;
  const std::size_t batches = 20;
  const std::size_t per = post.draws.size() / batches;
  std::map<Tree, std::vector<double>> batch_freq;
  for (std::size_t i = 0; i < post.draws.size(); ++i) {
    const Tree& t = post.draws[i].expr.tree();
    auto& v = batch_freq[t];
    v.resize(batches, 0.0);
    v[i / per] += 1.0 / static_cast<double>(per);
  }
  std::vector<std::pair<double, Tree>> ranked;
  for (const auto& [t, v] : batch_freq) ranked.emplace_back(prte_density_value(p, t), t);
  std::sort(ranked.begin(), ranked.end(), [](const auto& x, const auto& y) { return x.first > y.first; });
  REQUIRE(ranked.size() >= 10);
  for (std::size_t k = 0; k < 10; ++k) {
    const auto& v = batch_freq[ranked[k].second];
    double mean = 0.0;
    for (double x : v) mean += x / batches;
    double var = 0.0;
    for (double x : v) var += (x - mean) * (x - mean) / (batches - 1);
    const double se = std::sqrt(var / batches);
    CAPTURE(to_text(ranked[k].second, *p.alphabet));
    CHECK(std::fabs(mean - ranked[k].first) <= 3 * se + 1e-12);
  }
}

TEST_CASE("proposals with impossible likelihood are never accepted") {
  PriorSpec p = parse_prior(kE1);
  const Alphabet& a = *p.alphabet;
  const SymbolId g = *a.find("g", 1);
  auto lik = [&](const SymbolicExpression& e, double) {
    int deep = 0;
    for_each_preorder(e.tree(), [&](const Tree& n) { deep += n.symbol == g && !n.children[0].is_leaf(); });
    return deep ? -std::numeric_limits<double>::infinity() : 0.0;
  };
  McmcConfig cfg;
  cfg.burn_in = 0;
  cfg.samples = 5000;
  cfg.thin = 1;
  cfg.seed = 3;
  Posterior post = run_chain(p, lik, cfg);
  for (const auto& d : post.draws) REQUIRE(lik(d.expr, 1.0) == 0.0);
}

TEST_CASE("run_chain determinism and serialization") {
  PriorSpec p = parse_prior("@param c# exponential 2\n" + std::string(kEsum));
  Dataset d = dataset({1, 2, 3, 4, 5}, {1.1, 0.9, 1.0, 1.05, 0.95});
  d.input_names = {};
  d.inputs = {};
  McmcConfig cfg;
  cfg.burn_in = 300;
  cfg.samples = 600;
  cfg.thin = 3;
  cfg.seed = 99;
  Posterior a = run_chain(p, d, cfg);
  Posterior b = run_chain(p, d, cfg);
  CHECK(a.draws.size() == 200);
  const std::string ja = posterior_to_json(a);
  CHECK(ja == posterior_to_json(b));
  Posterior back = posterior_from_json(ja);
  CHECK(posterior_to_json(back) == ja);
  CHECK(back.config == cfg);

  cfg.seed = 100;
  CHECK(posterior_to_json(run_chain(p, d, cfg)) != ja);

  Posterior multi = run_chains(p, d, cfg, 3);
  CHECK(multi.draws.size() == 600);
  CHECK(posterior_to_json(multi) == posterior_to_json(run_chains(p, d, cfg, 3)));
}

TEST_CASE("config validation") {
  McmcConfig c;
  CHECK_NOTHROW(c.validate());
  c.p_sigma = 0.2;
  CHECK(code_of([&] { c.validate(); }) == ErrorCode::ConfigInvalid);
  CHECK(code_of([] { mcmc_config_from_json(R"({"burn_in": 10, "bogus": 1})"); }) == ErrorCode::ConfigInvalid);
  CHECK(code_of([] { mcmc_config_from_json(R"({"thin": 0})"); }) == ErrorCode::ConfigInvalid);
  CHECK(code_of([] { mcmc_config_from_json(R"({"samples": -5})"); }) == ErrorCode::ConfigInvalid);
  McmcConfig full = mcmc_config_from_json(R"({"burn_in": 10000, "samples": 5000, "thin": 100})");
  CHECK(full.burn_in == 10000);
  CHECK(full.samples == 5000);
  CHECK(mcmc_config_from_json(mcmc_config_to_json(full)) == full);

  PriorSpec p = parse_prior("*(c#, x)");
  Dataset wrong = dataset({1}, {1});
  wrong.input_names = {"z"};
  CHECK(code_of([&] { run_chain(p, wrong, McmcConfig{}); }) == ErrorCode::ConfigInvalid);
}

TEST_CASE("posterior predictive summaries") {
  PriorSpec p = parse_prior("*(c#, x)");
  const Alphabet& a = *p.alphabet;
  Posterior post;
  post.prior = std::make_shared<PriorSpec>(p);
  std::vector<double> x{1.0, 2.0, 0.0};
  InputColumns cols{{"x", std::span<const double>(x)}};

  SUBCASE("single draw collapses") {
    post.draws.push_back(Draw{SymbolicExpression(a, parse_tree("(* c# x)", a), {3.0}), 0.1, 0.0});
    auto pts = posterior_predict(post, cols);
    CHECK(pts[1].mean == 6.0);
    CHECK(pts[1].q05 == 6.0);
    CHECK(pts[1].q95 == 6.0);
  }
  SUBCASE("constant expressions have no epistemic spread") {
    PriorSpec q = parse_prior("c#");
    post.prior = std::make_shared<PriorSpec>(q);
    for (int i = 0; i < 5; ++i) {
      post.draws.push_back(Draw{SymbolicExpression(*q.alphabet, parse_tree("c#", *q.alphabet), {2.5}), 1.0, 0.0});
    }
    for (const auto& pt : posterior_predict(post, cols)) {
      CHECK(pt.q05 == pt.q95);
      CHECK(pt.mean == 2.5);
    }
  }
  SUBCASE("quantiles interpolate and skip non-finite draws") {
    for (double c : {1.0, 2.0, 3.0, 4.0, 5.0}) {
      post.draws.push_back(Draw{SymbolicExpression(a, parse_tree("(* c# x)", a), {c}), 0.1, 0.0});
    }
    PriorSpec inv = parse_prior("/(c#, x)");
    Posterior post2;
    post2.prior = std::make_shared<PriorSpec>(inv);
    post2.draws.push_back(Draw{SymbolicExpression(*inv.alphabet, parse_tree("(/ c# x)", *inv.alphabet), {1.0}), 1, 0});
    auto pts = posterior_predict(post, cols);
    CHECK(pts[0].q50 == 3.0);
    CHECK(pts[0].q05 == doctest::Approx(1.2));
    CHECK(pts[0].q95 == doctest::Approx(4.8));
    CHECK(code_of([&] { posterior_predict(post2, cols); }) == ErrorCode::AllDrawsNonFinite);
    auto flagged = posterior_predict(post2, cols, nullptr, true);
    CHECK(flagged[2].finite_draws == 0);
    CHECK(flagged[0].finite_draws == 1);
  }
}
