#include "treegress/error.hpp"
#include "treegress/experiments.hpp"
#include "treegress/numeric.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <istream>
#include <ostream>
#include <sstream>

namespace treegress {

std::map<std::string, PriorSpec> prior_library() {
  std::map<std::string, PriorSpec> out;
  for (const auto& [name, text] : prior_library_texts()) out.emplace(name, parse_prior(text));
  return out;
}

PriorSpec library_prior(std::string_view name) {
  const auto& texts = prior_library_texts();
  auto it = texts.find(std::string(name));
  if (it == texts.end()) throw Error(ErrorCode::ConfigInvalid, "no library prior named `" + std::string(name) + "`");
  return parse_prior(it->second);
}

FitMetrics evaluate_fit(const Posterior& posterior, const Dataset& data) {
  const auto inputs = columns_of(data);
  const Alphabet& alphabet = *posterior.prior->alphabet;
  std::vector<double> per_draw;
  for (const auto& d : posterior.draws) {
    auto pred = eval_expression(d.expr, alphabet, inputs);
    if (pred.size() == 1) pred.assign(data.rows(), pred[0]);
    if (std::all_of(pred.begin(), pred.end(), [](double v) { return std::isfinite(v); })) {
      per_draw.push_back(rmse(pred, data.targets));
    }
  }
  const double nan = std::numeric_limits<double>::quiet_NaN();
  FitMetrics m;
  m.finite_draws = per_draw.size();
  m.rmse_mean = m.rmse_std = m.rmse_of_mean = nan;
  if (!per_draw.empty()) {
    double sum = 0.0;
    for (double r : per_draw) sum += r;
    m.rmse_mean = sum / static_cast<double>(per_draw.size());
    double ss = 0.0;
    for (double r : per_draw) ss += (r - m.rmse_mean) * (r - m.rmse_mean);
    m.rmse_std = std::sqrt(ss / static_cast<double>(per_draw.size()));
  }
  std::vector<double> mean;
  for (const auto& p : posterior_predict(posterior, inputs, nullptr, true)) mean.push_back(p.mean);
  if (std::all_of(mean.begin(), mean.end(), [](double v) { return std::isfinite(v); })) {
    m.rmse_of_mean = rmse(mean, data.targets);
  }
  return m;
}

void write_csv(std::ostream& out, const Dataset& data) {
  for (const auto& n : data.input_names) out << n << ',';
  out << data.target_name << '\n';
  for (std::size_t i = 0; i < data.rows(); ++i) {
    for (const auto& col : data.inputs) out << format_double(col.at(i)) << ',';
    out << format_double(data.targets[i]) << '\n';
  }
}

namespace {

std::vector<std::string> split_row(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream s(line);
  while (std::getline(s, cell, ',')) {
    const auto b = cell.find_first_not_of(" \t\r");
    const auto e = cell.find_last_not_of(" \t\r");
    cells.push_back(b == std::string::npos ? std::string() : cell.substr(b, e - b + 1));
  }
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

double parse_cell(const std::string& cell, std::size_t line_no) {
  double v = 0.0;
  const char* end = cell.data() + cell.size();
  auto [ptr, ec] = std::from_chars(cell.data(), end, v);
  if (cell.empty() || ec != std::errc() || ptr != end) {
    throw Error(ErrorCode::IoError, "line " + std::to_string(line_no) + ": `" + cell + "` is not a number");
  }
  return v;
}

}  // namespace

Dataset read_csv(std::istream& in) {
  std::string line;
  std::size_t line_no = 0;
  std::vector<std::string> header;
  while (header.empty() && std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") != std::string::npos) header = split_row(line);
  }
  if (header.size() < 1) throw Error(ErrorCode::IoError, "csv has no header");
  for (const auto& h : header) {
    if (h.empty()) throw Error(ErrorCode::IoError, "csv header has an empty column name");
  }
  Dataset d;
  d.input_names.assign(header.begin(), header.end() - 1);
  d.target_name = header.back();
  d.inputs.resize(d.input_names.size());
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto cells = split_row(line);
    if (cells.size() != header.size()) {
      throw Error(ErrorCode::IoError, "line " + std::to_string(line_no) + ": expected " +
                                          std::to_string(header.size()) + " columns, got " +
                                          std::to_string(cells.size()));
    }
    for (std::size_t k = 0; k + 1 < cells.size(); ++k) d.inputs[k].push_back(parse_cell(cells[k], line_no));
    d.targets.push_back(parse_cell(cells.back(), line_no));
  }
  return d;
}

Dataset read_csv_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot open `" + path + "`");
  return read_csv(in);
}

void write_csv_file(const std::string& path, const Dataset& data) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::IoError, "cannot write `" + path + "`");
  write_csv(out, data);
  if (!out) throw Error(ErrorCode::IoError, "write to `" + path + "` failed");
}

}  // namespace treegress
