#include "treegress/error.hpp"
#include "treegress/experiments.hpp"
#include "treegress/random.hpp"

#include <algorithm>
#include <cmath>

namespace treegress {

namespace {

struct IsothermInfo {
  Isotherm kind;
  const char* name;
  std::map<std::string, double> rates;
};

const std::vector<IsothermInfo>& isotherm_table() {
  static const std::vector<IsothermInfo> table{
      {Isotherm::Langmuir, "langmuir", {{"sT", 0.015}, {"k", 4}}},
      {Isotherm::ModifiedLangmuir, "modified_langmuir", {{"sT", 0.015}, {"k1", 4}, {"k2", 100}}},
      {Isotherm::TwoSiteLangmuir, "two_site_langmuir", {{"sT", 0.015}, {"f1", 4}, {"f2", 4}, {"k1", 8}, {"k2", 8}}},
      {Isotherm::GeneralLangmuirFreundlich, "general_langmuir_freundlich", {{"sT", 0.015}, {"k", 4}, {"alpha", 4}}},
      {Isotherm::Freundlich, "freundlich", {{"KF", 0.05}, {"alpha", 4}}},
      {Isotherm::GeneralFreundlich, "general_freundlich", {{"sT", 0.015}, {"k", 4}, {"alpha", 4}}},
      {Isotherm::Toth, "toth", {{"sT", 0.015}, {"k", 4}, {"alpha", 0.75}}},
      {Isotherm::BrunauerEmmettTeller, "bet", {{"k1", 0.25}, {"k2", 4}, {"k3", 100}}},
      {Isotherm::FarleyDzombakMorel,
       "farley_dzombak_morel",
       {{"sT", 0.015}, {"k1", 4}, {"k2", 100}, {"k3", 4}, {"X", 0.03}, {"Xc", 0.03}}},
      {Isotherm::RedlichPeterson, "redlich_peterson", {{"sT", 0.015}, {"k", 4}, {"alpha", 0.75}}},
  };
  return table;
}

const IsothermInfo& info(Isotherm kind) {
  for (const auto& i : isotherm_table()) {
    if (i.kind == kind) return i;
  }
  throw Error(ErrorCode::ConfigInvalid, "unknown isotherm");
}

double param(const std::map<std::string, double>& p, const char* name) {
  auto it = p.find(name);
  if (it == p.end()) throw Error(ErrorCode::MissingInput, std::string("missing isotherm parameter `") + name + "`");
  return it->second;
}

Dataset make_dataset(std::vector<std::string> inputs, std::string target) {
  Dataset d;
  d.input_names = std::move(inputs);
  d.inputs.resize(d.input_names.size());
  d.target_name = std::move(target);
  return d;
}

}  // namespace

const std::vector<std::string>& isotherm_names() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> out;
    for (const auto& i : isotherm_table()) out.emplace_back(i.name);
    return out;
  }();
  return names;
}

std::optional<Isotherm> isotherm_from_name(std::string_view name) {
  for (const auto& i : isotherm_table()) {
    if (name == i.name) return i.kind;
  }
  return std::nullopt;
}

std::string isotherm_name(Isotherm kind) { return info(kind).name; }

IsothermSpec isotherm_spec(Isotherm kind) {
  IsothermSpec spec;
  spec.kind = kind;
  spec.rates = info(kind).rates;
  return spec;
}

double isotherm_value(Isotherm kind, const std::map<std::string, double>& p, double c) {
  switch (kind) {
    case Isotherm::Langmuir: {
      const double k = param(p, "k");
      return param(p, "sT") * k * c / (1 + k * c);
    }
    case Isotherm::ModifiedLangmuir: {
      const double k1 = param(p, "k1"), k2 = param(p, "k2");
      return param(p, "sT") * k1 * c / (1 + k1 * c) / (1 + k2 * c);
    }
    case Isotherm::TwoSiteLangmuir: {
      const double k1 = param(p, "k1"), k2 = param(p, "k2");
      return param(p, "sT") * (param(p, "f1") * k1 * c / (1 + k1 * c) + param(p, "f2") * k2 * c / (1 + k2 * c));
    }
    case Isotherm::GeneralLangmuirFreundlich: {
      const double x = std::pow(param(p, "k") * c, param(p, "alpha"));
      return param(p, "sT") * x / (1 + x);
    }
    case Isotherm::Freundlich: return param(p, "KF") * std::pow(c, param(p, "alpha"));
    case Isotherm::GeneralFreundlich: {
      const double kc = param(p, "k") * c;
      return param(p, "sT") * std::pow(kc / (1 + kc), param(p, "alpha"));
    }
    case Isotherm::Toth: {
      const double kc = param(p, "k") * c, a = param(p, "alpha");
      return param(p, "sT") * kc / std::pow(1 + std::pow(kc, a), 1 / a);
    }
    case Isotherm::BrunauerEmmettTeller:
      return param(p, "k1") * c / (1 + param(p, "k2") * c) / (1 - param(p, "k3") * c);
    case Isotherm::FarleyDzombakMorel: {
      const double sT = param(p, "sT"), k1 = param(p, "k1"), k2 = param(p, "k2"), k3 = param(p, "k3");
      const double a = 1 + k1 * c;
      return sT * k1 * c / a + ((param(p, "X") - sT) / a + k1 * param(p, "Xc") / a) * (k2 * c / (1 - k2 * c)) -
             k2 / k3 * c;
    }
    case Isotherm::RedlichPeterson: {
      const double kc = param(p, "k") * c;
      return param(p, "sT") * kc / (1 + std::pow(kc, param(p, "alpha")));
    }
  }
  return 0.0;
}

double isotherm_pole_distance(Isotherm kind, const std::map<std::string, double>& p, double c) {
  switch (kind) {
    case Isotherm::BrunauerEmmettTeller:
      return std::min(std::fabs(1 + param(p, "k2") * c), std::fabs(1 - param(p, "k3") * c));
    case Isotherm::FarleyDzombakMorel:
      return std::min(std::fabs(1 + param(p, "k1") * c), std::fabs(1 - param(p, "k2") * c));
    default: return 1.0;
  }
}

TaskData gen_isotherm(const IsothermSpec& spec, std::uint64_t seed, bool noise) {
  TaskData out;
  out.input_unit = "mg/L";
  out.target_unit = "mg/kg";
  const std::uint64_t param_seed = mix_seed(seed, "params");
  for (const auto& [name, rate] : spec.rates) out.truth[name] = Rng(mix_seed(param_seed, name)).exponential(rate);
  auto fill = [&](Dataset& d, const Range& r, std::size_t n, std::string_view stream) {
    d = make_dataset({"c"}, "s");
    Rng rng(mix_seed(seed, stream));
    Rng eps(mix_seed(mix_seed(seed, stream), "noise"));
    while (d.rows() < n) {
      const double c = rng.uniform(r.lo, r.hi);
      if (isotherm_pole_distance(spec.kind, out.truth, c) < 1e-6) {
        ++out.resampled;
        continue;
      }
      double s = isotherm_value(spec.kind, out.truth, c);
      if (noise) s += eps.normal(0.0, spec.noise_sigma);
      d.inputs[0].push_back(c);
      d.targets.push_back(s);
    }
  };
  fill(out.train, spec.train, spec.n_train, "train");
  fill(out.test1, spec.test1, spec.n_test, "test1");
  fill(out.test2, spec.test2, spec.n_test, "test2");
  fill(out.test3, spec.test3, spec.n_test, "test3");
  return out;
}

double ogden_energy(const HyperelasticSpec& spec, double l1, double l2, double l3) {
  if (spec.alpha.size() != spec.mu.size()) throw Error(ErrorCode::LengthMismatch, "alpha and mu differ in length");
  double w = 0.0;
  for (std::size_t p = 0; p < spec.alpha.size(); ++p) {
    const double a = spec.alpha[p];
    w += spec.mu[p] / a * (std::pow(l1, a) + std::pow(l2, a) + std::pow(l3, a) - 3.0);
  }
  return w;
}

TaskData gen_hyperelastic(const HyperelasticSpec& spec, std::uint64_t seed, bool noise) {
  TaskData out;
  out.input_unit = "1";
  out.target_unit = "J/m^3";
  for (std::size_t p = 0; p < spec.alpha.size(); ++p) {
    out.truth["alpha" + std::to_string(p + 1)] = spec.alpha[p];
    out.truth["mu" + std::to_string(p + 1)] = spec.mu.at(p);
  }
  auto fill = [&](Dataset& d, const Range& r, std::size_t n, std::string_view stream) {
    d = make_dataset({"l1", "l2", "l3"}, "w");
    Rng rng(mix_seed(seed, stream));
    Rng eps(mix_seed(mix_seed(seed, stream), "noise"));
    for (std::size_t i = 0; i < n; ++i) {
      double l[3];
      for (double& x : l) x = rng.uniform(r.lo, r.hi);
      double w = ogden_energy(spec, l[0], l[1], l[2]);
      if (noise) w += eps.normal(0.0, spec.noise_sigma);
      for (int k = 0; k < 3; ++k) d.inputs[k].push_back(l[k]);
      d.targets.push_back(w);
    }
  };
  fill(out.train, spec.train, spec.n_train, "train");
  fill(out.test1, spec.test1, spec.n_test, "test1");
  fill(out.test2, spec.test2, spec.n_test, "test2");
  fill(out.test3, spec.test3, spec.n_test, "test3");
  return out;
}

double rmse(const std::vector<double>& predictions, const std::vector<double>& targets) {
  if (predictions.size() != targets.size()) {
    throw Error(ErrorCode::LengthMismatch, "rmse needs equally many predictions and targets");
  }
  if (targets.empty()) throw Error(ErrorCode::LengthMismatch, "rmse of an empty set");
  double s = 0.0;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    const double d = predictions[i] - targets[i];
    s += d * d;
  }
  return std::sqrt(s / static_cast<double>(targets.size()));
}

}  // namespace treegress
