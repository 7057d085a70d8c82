#include "treegress/cli.hpp"

#include "treegress/error.hpp"
#include "treegress/experiments.hpp"
#include "treegress/inference.hpp"
#include "treegress/numeric.hpp"
#include "treegress/prte.hpp"
#include "treegress/pta.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>

namespace treegress {

namespace {

namespace fs = std::filesystem;
using Json = nlohmann::ordered_json;

bool is_runtime_error(ErrorCode code) {
  switch (code) {
    case ErrorCode::DepthBudgetExhausted:
    case ErrorCode::StateBudgetExceeded:
    case ErrorCode::ImpossibleContext:
    case ErrorCode::NotGenerative:
    case ErrorCode::AllDrawsNonFinite: return true;
    default: return false;
  }
}

int report_error(std::ostream& err, const Error& e) {
  Json j;
  j["error"] = std::string(error_name(e.code()));
  j["message"] = e.what();
  if (const auto* s = dynamic_cast<const SyntaxError*>(&e)) {
    j["line"] = s->line();
    j["column"] = s->column();
  }
  err << j.dump() << '\n';
  return is_runtime_error(e.code()) ? 3 : 2;
}

std::string read_text(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot open `" + path + "`");
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::IoError, "cannot write `" + path.string() + "`");
  out << text;
  if (!out) throw Error(ErrorCode::IoError, "write to `" + path.string() + "` failed");
}

/// `lib:NAME` names a shipped prior; anything else is a file path.
PriorSpec load_prior(const std::string& ref) {
  if (ref.rfind("lib:", 0) == 0) return library_prior(ref.substr(4));
  return parse_prior(read_text(ref));
}

std::uint64_t parse_seed(const std::string& text, const char* what) {
  std::uint64_t v = 0;
  const char* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, v);
  if (text.empty() || ec != std::errc() || ptr != end) {
    throw Error(ErrorCode::ConfigInvalid, std::string(what) + " must be a non-negative integer, got `" + text + "`");
  }
  return v;
}

/// --seed, else TREEGRESS_SEED, else 0.
std::uint64_t resolve_seed(const std::optional<std::uint64_t>& flag) {
  if (flag) return *flag;
  if (const char* env = std::getenv("TREEGRESS_SEED")) return parse_seed(env, "TREEGRESS_SEED");
  return 0;
}

// --- parse ---------------------------------------------------------------------

int cmd_parse(const std::string& ref, std::ostream& out, std::ostream& err) {
  const PriorSpec prior = load_prior(ref);
  out << format_prior(prior);
  const Pta pta = compile(prior);
  Json report;
  report["status"] = "ok";
  report["name"] = prior.name;
  report["symbols"] = prior.alphabet->size();
  report["variables"] = prior.alphabet->variable_names();
  report["grammar_nodes"] = prior.grammar->nodes().size();
  report["unit_cycles"] = prior.grammar->has_unit_cycles();
  report["pta_states"] = pta.num_states();
  report["pta_transitions"] = pta.transitions().size();
  report["exact_weights"] = pta.exact();
  err << report.dump() << '\n';
  return 0;
}

// --- sample --------------------------------------------------------------------

int cmd_sample(const std::string& ref, std::size_t n, std::uint64_t seed, std::optional<unsigned> max_depth,
               std::ostream& out) {
  PriorSpec prior = load_prior(ref);
  if (max_depth) {
    if (*max_depth == 0) throw Error(ErrorCode::ConfigInvalid, "--max-depth must be positive");
    prior.max_depth = *max_depth;
  }
  Rng rng(seed);
  for (std::size_t i = 0; i < n; ++i) out << to_line(sample_expression(prior, rng), *prior.alphabet) << '\n';
  return 0;
}

// --- density -------------------------------------------------------------------

std::string format_density(const Density& d) {
  if (d.exact) {
    if (*d.exact == 0) return "0";
    const std::string frac = format_fraction(*d.exact);
    if (frac.find('/') == std::string::npos) return frac;
    return frac + " ≈ " + format_double(d.value);
  }
  return format_double(d.value);
}

int cmd_density(const std::string& ref, const std::string& tree_text, const std::string& via, std::ostream& out) {
  const PriorSpec prior = load_prior(ref);
  Tree tree;
  try {
    tree = parse_tree(tree_text, *prior.alphabet);
  } catch (const SyntaxError&) {
    throw;
  } catch (const Error& e) {
    throw Error(ErrorCode::AlphabetMismatch, e.what());
  }
  if (via == "oracle") {
    out << format_density(prte_density(prior, tree)) << '\n';
    return 0;
  }
  const Density fg = pta_density(compile(prior), tree);
  if (via == "pta") {
    out << format_density(fg) << '\n';
    return 0;
  }
  const Density oracle = prte_density(prior, tree);
  out << "pta: " << format_density(fg) << '\n';
  out << "oracle: " << format_density(oracle) << '\n';
  out << "difference: " << format_double(std::fabs(fg.value - oracle.value)) << '\n';
  return 0;
}

// --- gen-data ------------------------------------------------------------------

int cmd_gen_data(const std::string& task, std::uint64_t seed, const std::string& out_dir, bool noise_off,
                 std::ostream& out) {
  TaskData data;
  if (task == "hyperelastic") {
    data = gen_hyperelastic(HyperelasticSpec{}, seed, !noise_off);
  } else if (task.rfind("isotherm:", 0) == 0) {
    const auto kind = isotherm_from_name(task.substr(9));
    if (!kind) throw Error(ErrorCode::ConfigInvalid, "unknown isotherm `" + task.substr(9) + "`");
    data = gen_isotherm(isotherm_spec(*kind), seed, !noise_off);
  } else {
    throw Error(ErrorCode::ConfigInvalid, "unknown task `" + task + "`; use isotherm:<name> or hyperelastic");
  }
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw Error(ErrorCode::IoError, "cannot create `" + out_dir + "`: " + ec.message());
  const fs::path dir(out_dir);
  write_csv_file((dir / "train.csv").string(), data.train);
  write_csv_file((dir / "test1.csv").string(), data.test1);
  write_csv_file((dir / "test2.csv").string(), data.test2);
  write_csv_file((dir / "test3.csv").string(), data.test3);
  out << "task " << task << " seed " << seed << '\n';
  for (const auto& [name, v] : data.truth) out << name << " = " << format_double(v) << '\n';
  if (data.resampled) out << "resampled " << data.resampled << " inputs at poles\n";
  return 0;
}

// --- fit -----------------------------------------------------------------------

struct FitOptions {
  std::optional<std::string> prior, train, out;
  std::optional<std::size_t> chains;
  std::optional<std::uint64_t> seed;
  McmcConfig mcmc;
};

/// Run configuration: prior, train, out, chains and seed plus McmcConfig fields.
FitOptions load_run_config(const std::string& path) {
  Json j;
  try {
    j = Json::parse(read_text(path));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ConfigInvalid, "`" + path + "` is not valid JSON: " + e.what());
  }
  if (!j.is_object()) throw Error(ErrorCode::ConfigInvalid, "run config must be a JSON object");
  FitOptions o;
  try {
    for (const char* key : {"prior", "train", "out"}) {
      if (!j.contains(key)) continue;
      const std::string v = j[key].get<std::string>();
      if (std::string(key) == "prior") o.prior = v;
      else if (std::string(key) == "train") o.train = v;
      else o.out = v;
      j.erase(key);
    }
    if (j.contains("chains")) {
      if (!j["chains"].is_number_unsigned()) throw Error(ErrorCode::ConfigInvalid, "chains must be a positive integer");
      o.chains = j["chains"].get<std::size_t>();
      j.erase("chains");
    }
    if (j.contains("seed")) {
      if (!j["seed"].is_number_unsigned()) throw Error(ErrorCode::ConfigInvalid, "seed must be a non-negative integer");
      o.seed = j["seed"].get<std::uint64_t>();
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ConfigInvalid, std::string("bad run config value: ") + e.what());
  }
  o.mcmc = mcmc_config_from_json(j.dump());
  return o;
}

void require_file(const std::string& path, const char* what) {
  if (!fs::is_regular_file(path)) throw Error(ErrorCode::IoError, std::string(what) + " `" + path + "` does not exist");
}

void print_summary(const Posterior& post, std::ostream& out) {
  out << "draws " << post.draws.size() << " chains " << post.chains << " seed " << post.seed << '\n';
  out << "acceptance";
  for (MoveKind k : kMoveKinds) {
    const auto& s = post.stats[static_cast<std::size_t>(k)];
    out << ' ' << move_name(k) << ' ' << format_double(s.rate()) << " (" << s.accepted << '/' << s.proposed << ')';
  }
  out << '\n';
  double sigma = 0.0;
  for (const auto& d : post.draws) sigma += d.sigma;
  out << "sigma mean " << format_double(post.draws.empty() ? 0.0 : sigma / static_cast<double>(post.draws.size()))
      << '\n';
  std::map<std::string, std::size_t> counts;
  for (const auto& d : post.draws) ++counts[to_text(d.expr.tree(), *post.prior->alphabet)];
  std::vector<std::pair<std::string, std::size_t>> top(counts.begin(), counts.end());
  std::stable_sort(top.begin(), top.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  if (top.size() > 5) top.resize(5);
  out << "top expressions\n";
  for (const auto& [text, c] : top) {
    out << "  " << format_double(static_cast<double>(c) / static_cast<double>(post.draws.size())) << '\t' << text
        << '\n';
  }
}

int cmd_fit(FitOptions flags, const std::optional<std::string>& config_path, std::ostream& out, std::ostream& err) {
  FitOptions opt;
  if (config_path) opt = load_run_config(*config_path);
  if (flags.prior) opt.prior = flags.prior;
  if (flags.train) opt.train = flags.train;
  if (flags.out) opt.out = flags.out;
  if (flags.chains) opt.chains = flags.chains;
  if (flags.seed) opt.seed = flags.seed;
  if (!opt.prior || !opt.train || !opt.out) {
    throw Error(ErrorCode::ConfigInvalid, "fit needs a prior, a training file and an output path");
  }
  if (opt.prior->rfind("lib:", 0) != 0) require_file(*opt.prior, "prior");
  require_file(*opt.train, "training file");
  const fs::path out_path(*opt.out);
  if (out_path.has_parent_path() && !fs::is_directory(out_path.parent_path())) {
    throw Error(ErrorCode::IoError, "output directory `" + out_path.parent_path().string() + "` does not exist");
  }
  McmcConfig config = opt.mcmc;
  config.seed = resolve_seed(opt.seed);
  const std::size_t chains = opt.chains.value_or(1);
  if (chains == 0) throw Error(ErrorCode::ConfigInvalid, "chains must be positive");

  const PriorSpec prior = load_prior(*opt.prior);
  const Dataset train = read_csv_file(*opt.train);
  Posterior post;
  try {
    post = run_chains(prior, train, config, chains);
  } catch (const Error& e) {
    if (!is_runtime_error(e.code())) throw;
    // Keep what is known about the failed run next to the requested output.
    Json trace;
    trace["error"] = std::string(error_name(e.code()));
    trace["message"] = e.what();
    trace["prior"] = format_prior(prior);
    trace["train"] = *opt.train;
    trace["chains"] = chains;
    trace["config"] = Json::parse(mcmc_config_to_json(config));
    write_text(out_path.string() + ".partial.json", trace.dump(2) + "\n");
    err << "{\"note\":\"partial trace written\",\"path\":" << Json(out_path.string() + ".partial.json").dump()
        << "}\n";
    throw;
  }
  write_text(out_path, posterior_to_json(post));
  print_summary(post, out);
  return 0;
}

// --- report --------------------------------------------------------------------

std::string csv_number(double v) { return format_double(v); }

int cmd_report(const std::string& posterior_path, const std::vector<std::string>& data_paths,
               const std::string& out_dir, std::uint64_t seed, bool noise_off, std::ostream& out) {
  const Posterior post = posterior_from_json(read_text(posterior_path));
  if (post.draws.empty()) throw Error(ErrorCode::ConfigInvalid, "posterior has no draws");
  std::vector<std::pair<std::string, Dataset>> sets;
  for (const auto& p : data_paths) sets.emplace_back(fs::path(p).stem().string(), read_csv_file(p));
  for (const auto& [name, d] : sets) {
    if (d.input_names != sets.front().second.input_names) {
      throw Error(ErrorCode::ConfigInvalid, "data files `" + sets.front().first + "` and `" + name +
                                                "` have different input columns");
    }
  }
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw Error(ErrorCode::IoError, "cannot create `" + out_dir + "`: " + ec.message());

  std::ostringstream metrics, bands;
  metrics << "dataset,rmse_mean,rmse_std,rmse_pred_mean,finite_draws,flag\n";
  bands << "dataset,";
  for (const auto& n : sets.front().second.input_names) bands << n << ',';
  bands << "mean,q05,q50,q95,flag\n";
  std::size_t flagged = 0;
  for (const auto& [name, data] : sets) {
    const FitMetrics m = evaluate_fit(post, data);
    const bool bad = m.finite_draws == 0;
    flagged += bad;
    metrics << name << ',' << csv_number(m.rmse_mean) << ',' << csv_number(m.rmse_std) << ','
            << csv_number(m.rmse_of_mean) << ',' << m.finite_draws << ',' << (bad ? "all_draws_nonfinite" : "ok")
            << '\n';
    Rng noise(mix_seed(seed, "bands:" + name));
    const auto points = posterior_predict(post, columns_of(data), noise_off ? nullptr : &noise, true);
    for (std::size_t i = 0; i < points.size(); ++i) {
      const auto& p = points[i];
      bands << name << ',';
      for (const auto& col : data.inputs) bands << csv_number(col[i]) << ',';
      const bool empty = p.finite_draws == 0;
      flagged += empty;
      bands << csv_number(p.mean) << ',' << csv_number(p.q05) << ',' << csv_number(p.q50) << ','
            << csv_number(p.q95) << ',' << (empty ? "all_draws_nonfinite" : "ok") << '\n';
    }
    out << name << " rmse_mean " << csv_number(m.rmse_mean) << " rmse_std " << csv_number(m.rmse_std)
        << " rmse_pred_mean " << csv_number(m.rmse_of_mean) << '\n';
  }
  write_text(fs::path(out_dir) / "metrics.csv", metrics.str());
  write_text(fs::path(out_dir) / "bands.csv", bands.str());
  if (flagged) out << "flagged " << flagged << " rows with no finite draw\n";
  return 0;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Bayesian symbolic regression with probabilistic regular tree priors", "treegress"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for every command");

  std::string prior_ref, tree_text, via = "pta", task, out_dir, posterior_path;
  std::optional<std::uint64_t> seed;
  std::optional<unsigned> max_depth;
  std::optional<std::string> config_path;
  std::size_t n = 1;
  bool noise_off = false;
  FitOptions fit;
  std::vector<std::string> data_paths;

  auto* parse = app.add_subcommand("parse", "Validate a prior and print its canonical form");
  parse->add_option("prior", prior_ref, "Prior file or lib:NAME")->required();

  auto* sample = app.add_subcommand("sample", "Draw expressions from a prior");
  sample->add_option("--prior", prior_ref, "Prior file or lib:NAME")->required();
  sample->add_option("--n", n, "Number of draws");
  sample->add_option("--seed", seed, "Random seed");
  sample->add_option("--max-depth", max_depth, "Depth bound overriding the prior's");

  auto* density = app.add_subcommand("density", "Prior probability of a tree");
  density->add_option("--prior", prior_ref, "Prior file or lib:NAME")->required();
  density->add_option("--tree", tree_text, "Tree text, e.g. \"(g (g a))\"")->required();
  density->add_option("--via", via, "Evaluation path")->check(CLI::IsMember({"pta", "oracle", "both"}));

  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic regression task");
  gen->add_option("--task", task, "isotherm:<name> or hyperelastic")->required();
  gen->add_option("--seed", seed, "Random seed");
  gen->add_option("--out-dir", out_dir, "Directory for train.csv and test{1,2,3}.csv")->required();
  gen->add_flag("--no-noise", noise_off, "Leave the targets noise-free");

  auto* fitc = app.add_subcommand("fit", "Sample the posterior over expressions");
  fitc->add_option("--prior", fit.prior, "Prior file or lib:NAME");
  fitc->add_option("--train", fit.train, "Training CSV");
  fitc->add_option("--config", config_path, "JSON run configuration");
  fitc->add_option("--out", fit.out, "Posterior JSON to write");
  fitc->add_option("--chains", fit.chains, "Independent chains run in parallel");
  fitc->add_option("--seed", fit.seed, "Random seed");

  auto* report = app.add_subcommand("report", "Metrics and predictive bands of a posterior");
  report->add_option("--posterior", posterior_path, "Posterior JSON")->required();
  report->add_option("--data", data_paths, "Data CSV files")->required();
  report->add_option("--out-dir", out_dir, "Directory for metrics.csv and bands.csv")->required();
  report->add_option("--seed", seed, "Seed of the predictive noise draws");
  report->add_flag("--no-noise", noise_off, "Bands of the regression function only");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*parse) return cmd_parse(prior_ref, out, err);
    if (*sample) return cmd_sample(prior_ref, n, resolve_seed(seed), max_depth, out);
    if (*density) return cmd_density(prior_ref, tree_text, via, out);
    if (*gen) return cmd_gen_data(task, resolve_seed(seed), out_dir, noise_off, out);
    if (*fitc) return cmd_fit(fit, config_path, out, err);
    if (*report) return cmd_report(posterior_path, data_paths, out_dir, resolve_seed(seed), noise_off, out);
  } catch (const Error& e) {
    return report_error(err, e);
  } catch (const std::exception& e) {
    err << Json{{"error", "Internal"}, {"message", e.what()}}.dump() << '\n';
    return 3;
  }
  return 2;
}

}  // namespace treegress
