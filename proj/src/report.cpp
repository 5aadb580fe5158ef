#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <string>

#include "json.hpp"
#include "necode/error.hpp"
#include "necode/harness.hpp"

namespace necode {

namespace {

std::string fixed(double v, int digits) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

void check_field(const std::string& s) {
  if (s.find_first_of(",\n\r\"") != std::string::npos) {
    throw InvalidArgument("report field '" + s + "' contains a CSV delimiter");
  }
}

std::vector<std::string> split(std::string_view line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    out.emplace_back(line.substr(start, comma - start));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

double to_double(const std::string& s, std::size_t line) {
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (s.empty() || *end != '\0') throw IoError("line " + std::to_string(line) + ": '" + s + "' is not a number");
  return v;
}

nlohmann::json number(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  return v;
}

}  // namespace

std::string to_csv(std::span<const EvalRow> rows) {
  std::string out = std::string(kEvalCsvHeader) + "\n";
  for (const EvalRow& r : rows) {
    for (const std::string* f : {&r.target_model, &r.eval_model, &r.preprocess, &r.attack}) check_field(*f);
    out += r.target_model + ',' + r.eval_model + ',' + fixed(r.psnr_db, 4) + ',' + r.preprocess + ',' + r.attack +
           ',' + fixed(r.clean_acc, 6) + ',' + fixed(r.recoded_acc, 6) + ',' + fixed(r.error_rate, 6) + ',' +
           fixed(r.rho_hat, 6) + ',' + fixed(r.gamma_hat, 6) + ',' + std::to_string(r.seed) + '\n';
  }
  return out;
}

std::vector<EvalRow> parse_csv(std::string_view text) {
  std::vector<EvalRow> rows;
  std::size_t pos = 0, line_no = 0;
  bool header = true;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (header) {
      if (line != kEvalCsvHeader) throw IoError("unexpected CSV header '" + std::string(line) + "'");
      header = false;
      continue;
    }
    if (line.empty()) continue;
    const auto f = split(line);
    if (f.size() != 11) {
      throw IoError("line " + std::to_string(line_no) + ": expected 11 fields, found " + std::to_string(f.size()));
    }
    EvalRow r;
    r.target_model = f[0];
    r.eval_model = f[1];
    r.psnr_db = to_double(f[2], line_no);
    r.preprocess = f[3];
    r.attack = f[4];
    r.clean_acc = to_double(f[5], line_no);
    r.recoded_acc = to_double(f[6], line_no);
    r.error_rate = to_double(f[7], line_no);
    r.rho_hat = to_double(f[8], line_no);
    r.gamma_hat = to_double(f[9], line_no);
    char* tail = nullptr;
    r.seed = std::strtoull(f[10].c_str(), &tail, 10);
    if (f[10].empty() || *tail != '\0') throw IoError("line " + std::to_string(line_no) + ": bad seed");
    rows.push_back(std::move(r));
  }
  if (header) throw IoError("CSV has no header");
  return rows;
}

std::string summary_json(const EvalReport& report, std::string_view config_echo) {
  nlohmann::json j;
  j["config"] = std::string(config_echo);
  nlohmann::json rows = nlohmann::json::array();
  for (const EvalRow& r : report.rows) {
    rows.push_back({{"target_model", r.target_model},
                    {"eval_model", r.eval_model},
                    {"psnr_db", number(r.psnr_db)},
                    {"preprocess", r.preprocess},
                    {"attack", r.attack},
                    {"clean_acc", number(r.clean_acc)},
                    {"recoded_acc", number(r.recoded_acc)},
                    {"error_rate", number(r.error_rate)},
                    {"rho_hat", number(r.rho_hat)},
                    {"gamma_hat", number(r.gamma_hat)},
                    {"seed", r.seed}});
  }
  j["rows"] = std::move(rows);
  nlohmann::json attacks = nlohmann::json::array();
  for (const AttackOutcome& a : report.attacks) {
    attacks.push_back({{"target_model", a.target_model},
                       {"attack", a.attack},
                       {"psnr_before", number(a.psnr_before)},
                       {"psnr_after", number(a.psnr_after)},
                       {"gain_db", number(a.gain_db())}});
  }
  j["attacks"] = std::move(attacks);
  j["notes"] = report.notes;
  return j.dump(2);
}

}  // namespace necode
