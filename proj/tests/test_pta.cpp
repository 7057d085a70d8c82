#include <doctest.h>

#include "treegress/error.hpp"
#include "treegress/pta.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>

using namespace treegress;

namespace {

const char* kE1 =
    "iter $y { choice{ 1/3: f($x, $y), 1/3: f($y, $x), 1/3: g($x) } }"
    " . subst($x, iter $x { choice{ 1/4: f($x, $x), 1/4: g($x), 1/4: a, 1/4: b } })";
const char* kEsum = "iter $x { choice{ 0.1: +(c#, $x), 0.9: c# } }";
const char* kEiso =
    "*(sT#, iter $x{choice{0.1: +($y,$x), 0.9: $y}}) . subst($y, *(f#, iter $x{choice{0.1: *($z,$x), 0.9: $z}}))"
    " . subst($z, pow(/($u,$v), gamma#)) . subst($u, *(q#, pow(c, alpha#))) . subst($v, +(1, *(p#, pow(c, beta#))))";
const char* kCycle = "iter $x { choice{1/3: f($x, a), 1/6: $x, 1/6: g($x), 1/3: a} }";

// All state assignments, evaluated directly from the run definition.
double brute_force(const Pta& pta, const Tree& t, std::ptrdiff_t free_node = -1, std::vector<double>* hole = nullptr) {
  std::vector<const Tree*> nodes;
  std::vector<std::ptrdiff_t> parent;
  std::vector<unsigned> index_in_parent;
  std::function<void(const Tree&, std::ptrdiff_t, unsigned)> walk = [&](const Tree& n, std::ptrdiff_t p, unsigned k) {
    const auto me = static_cast<std::ptrdiff_t>(nodes.size());
    nodes.push_back(&n);
    parent.push_back(p);
    index_in_parent.push_back(k);
    for (unsigned i = 0; i < n.children.size(); ++i) walk(n.children[i], me, i);
  };
  walk(t, -1, 0);
  const std::size_t m = nodes.size();
  const std::size_t nq = pta.num_states();
  std::vector<std::size_t> assign(m, 0);
  double total = 0.0;
  for (;;) {
    double w = pta.initial()[assign[0]];
    for (std::size_t i = 0; i < m && w != 0.0; ++i) {
      if (static_cast<std::ptrdiff_t>(i) == free_node) continue;
      const Tree& n = *nodes[i];
      if (n.children.empty()) {
        if (!pta.is_final(assign[i], n.symbol)) w = 0.0;
        continue;
      }
      // The children's states are the ones assigned at the following pre-order positions.
      std::vector<std::size_t> kids;
      for (std::size_t j = i + 1; j < m; ++j) {
        if (parent[j] == static_cast<std::ptrdiff_t>(i)) kids.push_back(assign[j]);
      }
      double row = 0.0;
      for (const auto& tr : pta.transitions()) {
        if (tr.from == assign[i] && tr.symbol == n.symbol && tr.to == kids) row += tr.p;
      }
      w *= row;
    }
    total += w;
    if (hole) (*hole)[assign[static_cast<std::size_t>(free_node)]] += w;
    std::size_t k = 0;
    while (k < m && ++assign[k] == nq) assign[k++] = 0;
    if (k == m) break;
  }
  return total;
}

void enumerate_trees(const Alphabet& alpha, const std::vector<SymbolId>& symbols, std::size_t max_nodes,
                     std::vector<Tree>& out) {
  // Trees with exactly n nodes, built from forests.
  std::map<std::size_t, std::vector<Tree>> by_size;
  for (std::size_t n = 1; n <= max_nodes; ++n) {
    for (SymbolId s : symbols) {
      const unsigned rank = alpha[s].rank;
      std::function<void(std::vector<Tree>&, std::size_t)> fill = [&](std::vector<Tree>& kids, std::size_t left) {
        if (kids.size() == rank) {
          if (left == 0) by_size[n].push_back(Tree(s, kids));
          return;
        }
        for (std::size_t sz = 1; sz <= left; ++sz) {
          for (const auto& c : by_size[sz]) {
            kids.push_back(c);
            fill(kids, left - sz);
            kids.pop_back();
          }
        }
      };
      std::vector<Tree> kids;
      fill(kids, n - 1);
    }
    for (const auto& t : by_size[n]) out.push_back(t);
  }
}

Pta random_pta(std::shared_ptr<const Alphabet> alpha, const std::vector<SymbolId>& symbols, std::size_t nq, Rng& rng) {
  Pta pta(alpha, nq);
  std::vector<double> mu(nq);
  double total = 0.0;
  for (auto& v : mu) total += (v = rng.uniform() + 0.05);
  for (std::size_t q = 0; q < nq; ++q) pta.set_initial(q, mu[q] / total);
  for (std::size_t q = 0; q < nq; ++q) {
    for (SymbolId s : symbols) {
      const unsigned rank = (*alpha)[s].rank;
      if (rank == 0) {
        if (rng.uniform() < 0.6) pta.add_final(q, s);
        continue;
      }
      for (int k = 0; k < 3; ++k) {
        std::vector<std::size_t> to(rank);
        for (auto& t : to) t = rng.index(nq);
        pta.add_transition(s, q, to, 0.1 + 0.2 * rng.uniform());
      }
    }
  }
  return pta;
}

}  // namespace

TEST_CASE("compiled E_1 reproduces the exact densities") {
  PriorSpec p = parse_prior(kE1);
  Pta pta = compile(p);
  CHECK(pta.exact());
  CHECK(pta.check().empty());
  const Tree gga = parse_tree("(g (g a))", *p.alphabet);
  CHECK(pta_eval_exact(pta, gga) == Rational(1, 48));
  CHECK(std::fabs(pta_eval(pta, gga) - 1.0 / 48) < 1e-12);
  CHECK(pta_eval_exact(pta, parse_tree("(f b b)", *p.alphabet)) == 0);
  CHECK(pta_eval(pta, parse_tree("(f b b)", *p.alphabet)) == 0.0);
}

TEST_CASE("single-leaf prior compiles to one state") {
  PriorSpec p = parse_prior("choice{1.0: a}");
  Pta pta = compile(p);
  REQUIRE(pta.num_states() == 1);
  CHECK(pta.initial()[0] == 1.0);
  const SymbolId a = *p.alphabet->find("a", 0);
  CHECK(pta.finals() == std::set<std::pair<std::size_t, SymbolId>>{{0, a}});
  CHECK(pta.transitions().empty());
  CHECK(pta_eval(pta, Tree(a)) == 1.0);
}

TEST_CASE("compiled automata agree with the density oracle") {
  for (const char* src : {kE1, kEsum, kEiso, kCycle}) {
    PriorSpec p = parse_prior(src);
    Pta pta = compile(p);
    CHECK(pta.check().empty());
    Rng rng(17);
    for (int i = 0; i < 100; ++i) {
      Tree t = sample_tree(p, rng);
      const Rational oracle = prte_density_exact(p, t);
      CHECK(oracle > 0);
      CHECK(pta_eval_exact(pta, t) == oracle);
      CHECK(std::fabs(pta_eval(pta, t) - to_double(oracle)) <= 1e-9 * std::max(1.0, to_double(oracle)));
    }
  }
}

TEST_CASE("factor-graph contraction equals run enumeration") {
  auto alpha = std::make_shared<Alphabet>();
  const std::vector<SymbolId> symbols{alpha->add("f", 2), alpha->add("g", 1), alpha->add("a", 0)};
  std::vector<Tree> trees;
  enumerate_trees(*alpha, symbols, 4, trees);
  CHECK(trees.size() == 1 + 1 + 2 + 4);  // sizes 1..4 over {f/2, g/1, a/0}
  Rng rng(99);
  for (std::size_t nq = 1; nq <= 4; ++nq) {
    for (int rep = 0; rep < 5; ++rep) {
      Pta pta = random_pta(alpha, symbols, nq, rng);
      for (const auto& t : trees) {
        const double bf = brute_force(pta, t);
        CHECK(pta_eval(pta, t) == doctest::Approx(bf).epsilon(1e-14));
      }
    }
  }
}

TEST_CASE("exact contraction equals run enumeration exactly") {
  auto alpha = std::make_shared<Alphabet>();
  const SymbolId f = alpha->add("f", 2), g = alpha->add("g", 1), a = alpha->add("a", 0);
  Pta pta(alpha, 2);
  pta.set_initial(0, Rational(1, 3));
  pta.set_initial(1, Rational(2, 3));
  pta.add_transition(f, 0, {0, 1}, Rational(1, 2));
  pta.add_transition(f, 0, {1, 1}, Rational(1, 4));
  pta.add_transition(g, 1, {0}, Rational(1, 5));
  pta.add_transition(g, 1, {1}, Rational(3, 5));
  pta.add_final(1, a);
  pta.add_final(0, a);
  // (f a (g a)): root 0 only; children (0,1) -> 1/2 * 1 * g(1->0 or 1) = 1/2*(1/5+3/5); (1,1) -> 1/4*(4/5).
  const Tree t = parse_tree("(f a (g a))", *alpha);
  CHECK(pta_eval_exact(pta, t) == Rational(1, 3) * (Rational(1, 2) * Rational(4, 5) + Rational(1, 4) * Rational(4, 5)));
}

TEST_CASE("elimination order does not matter") {
  PriorSpec p = parse_prior(kEiso);
  Pta pta = compile(p);
  Rng rng(5);
  for (int i = 0; i < 20; ++i) {
    Tree t = sample_tree(p, rng);
    FactorGraph fg(pta, t);
    const double reference = fg.contract<double>(fg.default_order());
    // Random children-first order: repeatedly pick any node whose children are done.
    for (int k = 0; k < 5; ++k) {
      std::vector<std::size_t> order;
      std::vector<char> done(fg.size(), 0);
      while (order.size() < fg.size()) {
        std::vector<std::size_t> ready;
        for (std::size_t v = 0; v < fg.size(); ++v) {
          if (done[v]) continue;
          const auto& kids = fg.children(v);
          if (std::all_of(kids.begin(), kids.end(), [&](std::size_t c) { return done[c]; })) ready.push_back(v);
        }
        const std::size_t pick = ready[rng.index(ready.size())];
        done[pick] = 1;
        order.push_back(pick);
      }
      CHECK(std::fabs(fg.contract<double>(order) - reference) <= 1e-12 * std::max(1.0, reference));
    }
    std::vector<std::size_t> bad = fg.default_order();
    std::reverse(bad.begin(), bad.end());
    if (fg.size() > 1) CHECK_THROWS_AS(fg.contract<double>(bad), std::invalid_argument);
  }
}

TEST_CASE("context marginals") {
  PriorSpec p = parse_prior(kE1);
  Pta pta = compile(p);
  const Alphabet& alpha = *p.alphabet;

  SUBCASE("a bare hole gives the initial distribution") {
    CHECK(context_marginal(pta, Tree(Alphabet::kHole)) == pta.initial());
  }
  SUBCASE("matches run enumeration with the hole state left free") {
    for (const char* ctx : {"(g ?)", "(f ? a)", "(f (g a) ?)", "(g (f ? b))"}) {
      Tree c = parse_tree(ctx, alpha);
      const auto hole = positions_of(c, Alphabet::kHole).front();
      FactorGraph fg(pta, c);
      std::vector<double> oracle(pta.num_states(), 0.0);
      brute_force(pta, c, static_cast<std::ptrdiff_t>(fg.node_at(hole)), &oracle);
      double z = 0.0;
      for (double v : oracle) z += v;
      REQUIRE(z > 0.0);
      const auto marg = context_marginal(pta, c);
      for (std::size_t q = 0; q < marg.size(); ++q) CHECK(marg[q] == doctest::Approx(oracle[q] / z).epsilon(1e-12));
    }
  }
  SUBCASE("chain rule: marginal times generation probability is proportional to the full density") {
    Tree c = parse_tree("(f (g a) ?)", alpha);
    const auto marg = context_marginal(pta, c);
    double ratio = -1.0;
    for (const char* sub : {"a", "b", "(g a)", "(f a (g b))", "(g (g b))"}) {
      Tree s = parse_tree(sub, alpha);
      const auto lik = state_likelihoods(pta, s);
      double mix = 0.0;
      for (std::size_t q = 0; q < marg.size(); ++q) mix += marg[q] * lik[q];
      const double full = pta_eval(pta, c.with_subtree({2}, s));
      REQUIRE(mix > 0.0);
      if (ratio < 0) ratio = full / mix;
      CHECK(full / mix == doctest::Approx(ratio).epsilon(1e-12));
    }
  }
  SUBCASE("impossible contexts and malformed holes") {
    PriorSpec fixed = parse_prior("f(a, choice{0.5: a, 0.5: b})");
    Pta fp = compile(fixed);
    CHECK(context_marginal(fp, parse_tree("(f a ?)", *fixed.alphabet)).size() == fp.num_states());
    try {
      context_marginal(fp, parse_tree("(f b ?)", *fixed.alphabet));
      FAIL("expected ImpossibleContext");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::ImpossibleContext);
    }
    try {
      context_marginal(pta, parse_tree("(f ? ?)", alpha));
      FAIL("expected an error");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::UnknownSymbol);
    }
  }
  SUBCASE("address overload") {
    Tree t = parse_tree("(f (g a) b)", alpha);
    CHECK(context_marginal(pta, t, {2}) == context_marginal(pta, parse_tree("(f (g a) ?)", alpha)));
  }
}

TEST_CASE("sampling from a state") {
  PriorSpec p = parse_prior(kEsum);
  Pta pta = compile(p);
  Rng rng(8);

  SUBCASE("leaf state") {
    std::size_t leaf = pta.num_states();
    for (std::size_t q = 0; q < pta.num_states(); ++q) {
      if (pta.outgoing(q).empty()) leaf = q;
    }
    REQUIRE(leaf < pta.num_states());
    for (int i = 0; i < 20; ++i) {
      GeneratedTree g = sample_from_state(pta, leaf, rng);
      CHECK(g.tree == Tree(Alphabet::kConstMarker));
      CHECK(g.probability == 1.0);
    }
  }
  SUBCASE("geometric sum length from the initial distribution") {
    const int n = 100000;
    std::vector<int> counts(5, 0);
    for (int i = 0; i < n; ++i) {
      const std::size_t q = rng.categorical(pta.initial());
      GeneratedTree g = sample_from_state(pta, q, rng);
      const std::size_t len = (g.tree.size() + 1) / 2;
      if (len <= 4) ++counts[len];
    }
    for (int l = 1; l <= 3; ++l) {
      const double pl = std::pow(0.1, l - 1) * 0.9;
      CHECK(std::fabs(counts[l] / double(n) - pl) < 4 * std::sqrt(pl * (1 - pl) / n));
    }
  }
  SUBCASE("returned probabilities match frequencies") {
    PriorSpec e1 = parse_prior(kE1);
    Pta a1 = compile(e1);
    const std::size_t start = static_cast<std::size_t>(
        std::max_element(a1.initial().begin(), a1.initial().end()) - a1.initial().begin());
    const int n = 10000;
    std::map<Tree, std::pair<int, double>> seen;
    for (int i = 0; i < n; ++i) {
      GeneratedTree g = sample_from_state(a1, start, rng);
      auto& entry = seen[g.tree];
      ++entry.first;
      entry.second = g.probability;
    }
    for (const auto& [t, e] : seen) {
      if (e.first < 100) continue;
      const double pr = e.second;
      CHECK(std::fabs(e.first / double(n) - pr) < 4 * std::sqrt(pr * (1 - pr) / n));
    }
  }
  SUBCASE("non-generative automata are rejected") {
    Pta u = Pta::universal(p.alphabet);
    try {
      sample_from_state(u, 0, rng);
      FAIL("expected NotGenerative");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::NotGenerative);
    }
  }
  SUBCASE("depth budget") {
    PriorSpec deep = parse_prior("f(g(a))");
    Pta d = compile(deep);
    const std::size_t root = static_cast<std::size_t>(
        std::max_element(d.initial().begin(), d.initial().end()) - d.initial().begin());
    CHECK_FALSE(try_sample_from_state(d, root, rng, 1));
    try {
      sample_from_state(d, root, rng, 1);
      FAIL("expected DepthBudgetExhausted");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::DepthBudgetExhausted);
    }
  }
}

TEST_CASE("product automaton") {
  PriorSpec p = parse_prior(kE1);
  Pta a = compile(p);
  const Alphabet& alpha = *p.alphabet;

  SUBCASE("squared E_1") {
    Pta sq = product(a, a);
    CHECK(pta_eval_exact(sq, parse_tree("(g (g a))", *sq.alphabet())) == Rational(1, 48 * 48));
  }
  SUBCASE("universal automaton is neutral") {
    Pta u = Pta::universal(p.alphabet);
    Pta au = product(a, u);
    Rng rng(4);
    for (int i = 0; i < 30; ++i) {
      Tree t = sample_tree(p, rng);
      CHECK(pta_eval(au, t) == doctest::Approx(pta_eval(a, t)).epsilon(1e-12));
    }
    CHECK(pta_eval(u, parse_tree("(f b b)", alpha)) == 1.0);
  }
  SUBCASE("pointwise product across different alphabets") {
    PriorSpec other = parse_prior("iter $x { choice{0.3: g($x), 0.2: f($x, b), 0.5: a} }");
    Pta b = compile(other);
    Pta ab = product(a, b);
    Rng rng(6);
    int nonzero = 0;
    for (int i = 0; i < 50; ++i) {
      Tree t = sample_tree(p, rng);
      const double pa = pta_eval(a, t);
      const double pb = pta_eval(b, translate_tree(t, alpha, *b.alphabet()));
      const double pab = pta_eval(ab, translate_tree(t, alpha, *ab.alphabet()));
      CHECK(std::fabs(pab - pa * pb) <= 1e-9);
      if (pab > 0) ++nonzero;
      if (pa == 0.0 || pb == 0.0) CHECK(pab == 0.0);
    }
    CHECK(nonzero > 0);
  }
  SUBCASE("associativity on evaluated densities") {
    PriorSpec q = parse_prior("iter $x { choice{0.5: g($x), 0.25: f($x, $x), 0.25: a} }");
    Pta b = compile(q);
    Pta left = product(product(a, b), a);
    Pta right = product(a, product(b, a));
    Rng rng(12);
    for (int i = 0; i < 30; ++i) {
      Tree t = sample_tree(p, rng);
      CHECK(pta_eval(left, translate_tree(t, alpha, *left.alphabet())) ==
            doctest::Approx(pta_eval(right, translate_tree(t, alpha, *right.alphabet()))).epsilon(1e-12));
    }
  }
  SUBCASE("state budget") {
    try {
      product(a, a, 3);
      FAIL("expected StateBudgetExceeded");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::StateBudgetExceeded);
    }
  }
}

TEST_CASE("errors and dump") {
  PriorSpec p = parse_prior(kEiso);
  try {
    compile(p, 3);
    FAIL("expected StateBudgetExceeded");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::StateBudgetExceeded);
  }
  Pta pta = compile(p);
  try {
    pta_eval(pta, Tree(static_cast<SymbolId>(p.alphabet->size() + 3)));
    FAIL("expected AlphabetMismatch");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::AlphabetMismatch);
  }
  Alphabet other;
  other.add("zz", 0);
  try {
    translate_tree(Tree(*other.find("zz", 0)), other, *p.alphabet);
    FAIL("expected AlphabetMismatch");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::AlphabetMismatch);
  }
  const std::string dump = pta.to_json();
  CHECK(dump.find("\"transitions\"") != std::string::npos);
  CHECK(dump.find("\"finals\"") != std::string::npos);
}
