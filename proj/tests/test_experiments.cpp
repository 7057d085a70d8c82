#include <doctest.h>

#include "treegress/error.hpp"
#include "treegress/experiments.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

using namespace treegress;

namespace {

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

std::string read_file(const std::string& path) {
  std::ifstream in(path);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

}  // namespace

TEST_CASE("isotherm formulas at hand-computed points") {
  // s_T k c / (1 + k c) with s_T = 100, k = 1, c = 1.
  CHECK(isotherm_value(Isotherm::Langmuir, {{"sT", 100}, {"k", 1}}, 1.0) == doctest::Approx(50.0));
  CHECK(isotherm_value(Isotherm::ModifiedLangmuir, {{"sT", 100}, {"k1", 1}, {"k2", 1}}, 1.0) ==
        doctest::Approx(25.0));
  CHECK(isotherm_value(Isotherm::TwoSiteLangmuir, {{"sT", 10}, {"f1", 1}, {"f2", 2}, {"k1", 1}, {"k2", 3}}, 1.0) ==
        doctest::Approx(10 * (0.5 + 2 * 0.75)));
  CHECK(isotherm_value(Isotherm::GeneralLangmuirFreundlich, {{"sT", 10}, {"k", 0.5}, {"alpha", 2}}, 4.0) ==
        doctest::Approx(8.0));
  CHECK(isotherm_value(Isotherm::Freundlich, {{"KF", 3}, {"alpha", 0.5}}, 16.0) == doctest::Approx(12.0));
  CHECK(isotherm_value(Isotherm::GeneralFreundlich, {{"sT", 8}, {"k", 1}, {"alpha", 3}}, 1.0) ==
        doctest::Approx(1.0));
  CHECK(isotherm_value(Isotherm::Toth, {{"sT", 10}, {"k", 1}, {"alpha", 2}}, 1.0) ==
        doctest::Approx(10 / std::sqrt(2.0)));
  CHECK(isotherm_value(Isotherm::BrunauerEmmettTeller, {{"k1", 2}, {"k2", 1}, {"k3", 0.25}}, 2.0) ==
        doctest::Approx(4.0 / 3.0 / 0.5));
  // 2 + ((6 - 4)/2 + 1*2/2) * (0.1/0.9) - (0.1/0.5)
  CHECK(isotherm_value(Isotherm::FarleyDzombakMorel,
                       {{"sT", 4}, {"k1", 1}, {"k2", 0.1}, {"k3", 0.5}, {"X", 6}, {"Xc", 2}}, 1.0) ==
        doctest::Approx(2.0 + 2.0 * (0.1 / 0.9) - 0.2));
  CHECK(isotherm_value(Isotherm::RedlichPeterson, {{"sT", 10}, {"k", 2}, {"alpha", 2}}, 1.0) ==
        doctest::Approx(4.0));
  CHECK(code_of([] { isotherm_value(Isotherm::Langmuir, {{"sT", 1}}, 1.0); }) == ErrorCode::MissingInput);
}

TEST_CASE("isotherm names round trip") {
  CHECK(isotherm_names().size() == 10);
  for (const auto& n : isotherm_names()) {
    auto k = isotherm_from_name(n);
    REQUIRE(k);
    CHECK(isotherm_name(*k) == n);
  }
  CHECK_FALSE(isotherm_from_name("langmuir2"));
}

TEST_CASE("isotherm data generation") {
  const auto spec = isotherm_spec(Isotherm::Langmuir);
  CHECK(spec.rates.at("sT") == 0.015);
  CHECK(spec.rates.at("k") == 4);
  CHECK(isotherm_spec(Isotherm::Toth).rates.at("alpha") == 0.75);
  CHECK(isotherm_spec(Isotherm::BrunauerEmmettTeller).rates.at("k3") == 100);

  SUBCASE("sizes, ranges and determinism") {
    const TaskData a = gen_isotherm(spec, 7);
    const TaskData b = gen_isotherm(spec, 7);
    CHECK(a.train.rows() == 20);
    CHECK(a.test1.rows() == 50);
    CHECK(a.test2.rows() == 50);
    CHECK(a.test3.rows() == 50);
    CHECK(a.train.input_names == std::vector<std::string>{"c"});
    CHECK(a.train.target_name == "s");
    CHECK(a.train.targets == b.train.targets);
    CHECK(a.test3.inputs == b.test3.inputs);
    CHECK(a.truth == b.truth);
    for (double c : a.train.inputs[0]) CHECK((c >= 20 && c < 100));
    for (double c : a.test2.inputs[0]) CHECK((c >= 0 && c < 20));
    for (double c : a.test3.inputs[0]) CHECK((c >= 100 && c < 150));
    CHECK(a.train.inputs[0][0] != a.test1.inputs[0][0]);
    CHECK(gen_isotherm(spec, 8).truth != a.truth);
  }

  SUBCASE("noise-free targets equal the formula") {
    const TaskData d = gen_isotherm(spec, 3, false);
    for (std::size_t i = 0; i < d.test1.rows(); ++i) {
      CHECK(d.test1.targets[i] == isotherm_value(Isotherm::Langmuir, d.truth, d.test1.inputs[0][i]));
    }
    const TaskData noisy = gen_isotherm(spec, 3, true);
    CHECK(noisy.truth == d.truth);
    CHECK(noisy.test1.inputs == d.test1.inputs);
    double ss = 0.0;
    for (std::size_t i = 0; i < d.test1.rows(); ++i) {
      const double e = noisy.test1.targets[i] - d.test1.targets[i];
      ss += e * e;
    }
    CHECK(std::sqrt(ss / 50) == doctest::Approx(0.1).epsilon(0.35));
  }

  SUBCASE("every isotherm gives finite non-negative values away from poles") {
    for (const auto& name : isotherm_names()) {
      const Isotherm kind = *isotherm_from_name(name);
      for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const TaskData d = gen_isotherm(isotherm_spec(kind), seed, false);
        for (const Dataset* set : {&d.train, &d.test1, &d.test2, &d.test3}) {
          for (std::size_t i = 0; i < set->rows(); ++i) {
            const double c = set->inputs[0][i];
            CHECK(isotherm_pole_distance(kind, d.truth, c) >= 1e-6);
            CHECK(std::isfinite(set->targets[i]));
            // Past the pole at c = 1/k3 the BET curve turns negative, and the
            // FDM formula subtracts a linear term; both are genuine.
            if (kind != Isotherm::BrunauerEmmettTeller && kind != Isotherm::FarleyDzombakMorel) {
              CHECK(set->targets[i] >= 0.0);
            }
          }
        }
      }
    }
  }

  SUBCASE("pole distance") {
    const std::map<std::string, double> bet{{"k1", 1}, {"k2", 1}, {"k3", 0.1}};
    CHECK(isotherm_pole_distance(Isotherm::BrunauerEmmettTeller, bet, 10.0) == doctest::Approx(0.0));
    CHECK(isotherm_pole_distance(Isotherm::BrunauerEmmettTeller, bet, 5.0) == doctest::Approx(0.5));
    CHECK(isotherm_pole_distance(Isotherm::Langmuir, {{"sT", 1}, {"k", 1}}, 5.0) == 1.0);
  }
}

TEST_CASE("Ogden energy") {
  const HyperelasticSpec spec;
  // l1^a + l2^a + l3^a - 3 = 2^a - 1 at (2, 1, 1).
  const double expect = 1.5 / 1.75 * (std::pow(2.0, 1.75) - 1.0) + 0.1 / 2.5 * (std::pow(2.0, 2.5) - 1.0);
  CHECK(ogden_energy(spec, 2, 1, 1) == doctest::Approx(expect).epsilon(1e-12));
  CHECK(ogden_energy(spec, 1, 1, 1) == 0.0);

  const TaskData d = gen_hyperelastic(spec, 11, false);
  CHECK(d.train.input_names == std::vector<std::string>{"l1", "l2", "l3"});
  CHECK(d.train.target_name == "w");
  CHECK(d.train.rows() == 20);
  CHECK(d.test3.rows() == 50);
  CHECK(d.truth.at("alpha2") == 2.5);
  for (std::size_t i = 0; i < d.test3.rows(); ++i) {
    for (int k = 0; k < 3; ++k) CHECK((d.test3.inputs[k][i] >= 2.5 && d.test3.inputs[k][i] < 5.0));
    CHECK(d.test3.targets[i] ==
          ogden_energy(spec, d.test3.inputs[0][i], d.test3.inputs[1][i], d.test3.inputs[2][i]));
  }
  CHECK(gen_hyperelastic(spec, 11).train.inputs == d.train.inputs);
}

TEST_CASE("rmse") {
  CHECK(rmse({0, 0}, {3, 4}) == doctest::Approx(std::sqrt(12.5)));
  CHECK(rmse({1, 2, 3}, {1, 2, 3}) == 0.0);
  CHECK(code_of([] { rmse({1}, {1, 2}); }) == ErrorCode::LengthMismatch);
  CHECK(code_of([] { rmse({}, {}); }) == ErrorCode::LengthMismatch);
}

TEST_CASE("prior library") {
  const auto lib = prior_library();
  const std::set<std::string> names{"E_1", "E_sum", "E_iso", "E_hyp", "E_hook", "E_MRS", "E_GRM"};
  std::set<std::string> got;
  for (const auto& [name, prior] : lib) {
    got.insert(name);
    CHECK(prior.name == name);
    // Formatting and reparsing keeps the prior.
    const PriorSpec again = parse_prior(format_prior(prior));
    CHECK(format_prior(again) == format_prior(prior));
    CHECK(again.marker_priors.size() == prior.marker_priors.size());
  }
  CHECK(got == names);
  CHECK(code_of([] { library_prior("E_nope"); }) == ErrorCode::ConfigInvalid);

  SUBCASE("shipped files match the embedded texts") {
    for (const auto& [name, text] : prior_library_texts()) {
      CHECK(read_file(std::string(TREEGRESS_PRIOR_DIR) + "/" + name + ".prte") == text);
    }
  }

  SUBCASE("E_hook has a single tree") {
    const PriorSpec p = library_prior("E_hook");
    Rng rng(1);
    const Tree t = sample_tree(p, rng);
    CHECK(to_text(t, *p.alphabet) == "(* C1# (- (+ (pow l1 2) (pow l2 2) (pow l3 2)) 3))");
    CHECK(prte_density_value(p, t) == 1.0);
  }

  SUBCASE("smallest E_iso tree") {
    const PriorSpec p = library_prior("E_iso");
    const Tree t = parse_tree("(* sT# (* f# (pow (/ (* q# (pow c alpha#)) (+ 1 (* p# (pow c beta#)))) gamma#)))",
                              *p.alphabet);
    CHECK(prte_density_exact(p, t) == Rational(81, 100));
    const ParamLayout layout = param_layout(t, p);
    CHECK(layout.theta_c_size == 7);
    // With every exponent 1 this is the Langmuir-like curve sT f q c / (1 + p c).
    const auto e = bind_params(p, t, layout, {10, 1, 2, 1, 1, 1, 1}, {});
    const std::vector<double> c{1.0};
    const auto v = eval_expression(e, *p.alphabet, {{"c", std::span<const double>(c)}});
    CHECK(v[0] == doctest::Approx(10 * 2.0 / 2.0));
  }

  SUBCASE("E_hyp expresses the two-term Ogden model") {
    const PriorSpec p = library_prior("E_hyp");
    const std::string term = "(* (/ mu# alpha#) (- (+ (pow l1 alpha#) (pow l2 alpha#) (pow l3 alpha#)) 3))";
    const Tree t = parse_tree("(+ " + term + " " + term + ")", *p.alphabet);
    CHECK(prte_density_exact(p, t) == Rational(9, 100));
    const ParamLayout layout = param_layout(t, p);
    CHECK(layout.theta_c_size == 10);
    REQUIRE(layout.continuous.size() == 4);
    const auto e = bind_params(p, t, layout, {1.5, 1.75, 0.1, 2.5}, {});
    const std::vector<double> l1{2.0, 1.3}, l2{1.0, 0.7}, l3{1.0, 2.2};
    const auto v = eval_expression(
        e, *p.alphabet, {{"l1", std::span<const double>(l1)}, {"l2", l2}, {"l3", l3}});
    const HyperelasticSpec spec;
    CHECK(v[0] == doctest::Approx(ogden_energy(spec, 2, 1, 1)).epsilon(1e-12));
    CHECK(v[1] == doctest::Approx(ogden_energy(spec, 1.3, 0.7, 2.2)).epsilon(1e-12));
  }

  SUBCASE("every library prior samples trees of positive density") {
    for (const auto& [name, prior] : lib) {
      Rng rng(mix_seed(5, name));
      for (int i = 0; i < 30; ++i) {
        const Tree t = sample_tree(prior, rng);
        CHECK(prte_density_value(prior, t) > 0.0);
      }
    }
  }
}

TEST_CASE("csv files") {
  const TaskData d = gen_isotherm(isotherm_spec(Isotherm::Toth), 2);
  std::stringstream s;
  write_csv(s, d.train);
  CHECK(s.str().rfind("c,s\n", 0) == 0);
  const Dataset back = read_csv(s);
  CHECK(back.input_names == d.train.input_names);
  CHECK(back.target_name == "s");
  CHECK(back.inputs == d.train.inputs);
  CHECK(back.targets == d.train.targets);

  std::stringstream h;
  write_csv(h, gen_hyperelastic(HyperelasticSpec{}, 1).test2);
  CHECK(h.str().rfind("l1,l2,l3,w\n", 0) == 0);
  CHECK(read_csv(h).rows() == 50);

  auto parse = [](const std::string& text) {
    std::istringstream in(text);
    return read_csv(in);
  };
  CHECK(parse("x, y\r\n1, 2\r\n\n3,4\n").targets == std::vector<double>{2, 4});
  CHECK(code_of([&] { parse(""); }) == ErrorCode::IoError);
  CHECK(code_of([&] { parse("c,s\n1\n"); }) == ErrorCode::IoError);
  CHECK(code_of([&] { parse("c,s\n1,abc\n"); }) == ErrorCode::IoError);
  CHECK(code_of([&] { parse("c,s\n1,\n"); }) == ErrorCode::IoError);
  CHECK(code_of([&] { parse("c,\n1,2\n"); }) == ErrorCode::IoError);
  CHECK(code_of([] { read_csv_file("/nonexistent/file.csv"); }) == ErrorCode::IoError);
}
