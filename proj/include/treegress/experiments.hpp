#pragma once

#include "treegress/expression.hpp"
#include "treegress/inference.hpp"
#include "treegress/prte.hpp"

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace treegress {

struct Range {
  double lo = 0.0;
  double hi = 0.0;
};

/// A generated regression task: training set, three hold-out sets and the
/// ground-truth parameters used to make them.
struct TaskData {
  Dataset train, test1, test2, test3;
  std::map<std::string, double> truth;
  /// Input points redrawn because they fell on a pole of the formula.
  std::size_t resampled = 0;
  std::string input_unit;
  std::string target_unit;
};

// --- sorption isotherms -------------------------------------------------------

enum class Isotherm {
  Langmuir,
  ModifiedLangmuir,
  TwoSiteLangmuir,
  GeneralLangmuirFreundlich,
  Freundlich,
  GeneralFreundlich,
  Toth,
  BrunauerEmmettTeller,
  FarleyDzombakMorel,
  RedlichPeterson,
};

/// Lower-case names, e.g. `langmuir`, `two_site_langmuir`, `bet`.
const std::vector<std::string>& isotherm_names();
std::optional<Isotherm> isotherm_from_name(std::string_view name);
std::string isotherm_name(Isotherm kind);

struct IsothermSpec {
  Isotherm kind = Isotherm::Langmuir;
  /// Exponential rate of each ground-truth parameter.
  std::map<std::string, double> rates;
  Range train{20, 100};
  Range test1{20, 100};
  Range test2{0, 20};
  Range test3{100, 150};
  std::size_t n_train = 20;
  std::size_t n_test = 50;
  double noise_sigma = 0.1;
};

/// Default protocol for an isotherm, with its parameter priors.
IsothermSpec isotherm_spec(Isotherm kind);

/// s(c) for the given parameters (names as in isotherm_spec().rates).
double isotherm_value(Isotherm kind, const std::map<std::string, double>& params, double c);
/// Smallest |denominator| among the formula's poles at c; 1 when it has none.
double isotherm_pole_distance(Isotherm kind, const std::map<std::string, double>& params, double c);

/// Draws parameters, inputs and noise. The parameters, each dataset's inputs
/// and each dataset's noise use separate streams derived from `seed`, so
/// turning noise off leaves the inputs unchanged.
TaskData gen_isotherm(const IsothermSpec& spec, std::uint64_t seed, bool noise = true);

// --- hyper-elastic material -------------------------------------------------

struct HyperelasticSpec {
  std::vector<double> alpha{1.75, 2.5};
  std::vector<double> mu{1.5, 0.1};
  Range train{1.5, 2.5};
  Range test1{1.5, 2.5};
  Range test2{0.5, 1.5};
  Range test3{2.5, 5.0};
  std::size_t n_train = 20;
  std::size_t n_test = 50;
  double noise_sigma = 0.01;
};

/// Ogden strain energy sum_p mu_p / alpha_p (l1^a_p + l2^a_p + l3^a_p - 3).
double ogden_energy(const HyperelasticSpec& spec, double l1, double l2, double l3);

/// Each stretch is drawn independently and uniformly from the set's range.
TaskData gen_hyperelastic(const HyperelasticSpec& spec, std::uint64_t seed, bool noise = true);

// --- priors, metrics, files ---------------------------------------------------

/// Prior files shipped with the library, by name (E_1, E_sum, E_iso, E_hyp,
/// E_hook, E_MRS, E_GRM).
const std::map<std::string, std::string>& prior_library_texts();
std::map<std::string, PriorSpec> prior_library();
/// Throws Error{ConfigInvalid} for unknown names.
PriorSpec library_prior(std::string_view name);

/// Root mean squared error. Throws Error{LengthMismatch} for unequal or empty inputs.
double rmse(const std::vector<double>& predictions, const std::vector<double>& targets);

/// Fit quality of a posterior on one dataset. Statistics that have no finite
/// input are NaN.
struct FitMetrics {
  /// RMSE of the posterior predictive mean; NaN when some point has no finite draw.
  double rmse_of_mean = 0.0;
  /// Mean and population standard deviation over draws of each draw's RMSE.
  /// Draws with a non-finite prediction are left out.
  double rmse_mean = 0.0;
  double rmse_std = 0.0;
  std::size_t finite_draws = 0;
};
FitMetrics evaluate_fit(const Posterior& posterior, const Dataset& data);

/// Header of input names then the target name; one row per point.
void write_csv(std::ostream& out, const Dataset& data);
/// The last column is the target. Throws Error{IoError} on malformed input.
Dataset read_csv(std::istream& in);
Dataset read_csv_file(const std::string& path);
void write_csv_file(const std::string& path, const Dataset& data);

}  // namespace treegress
