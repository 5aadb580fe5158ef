// necode command-line tool.
//
// Settings are resolved in this order, later wins: built-in defaults, the
// file given with --config, then command-line flags.

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "necode/error.hpp"
#include "necode/pipeline.hpp"
#include "necode/recoder.hpp"

namespace {

enum Exit : int { kOk = 0, kOther = 1, kConfig = 2, kVerification = 3, kIo = 4 };

struct CommonFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<double> tau;
  std::optional<std::string> psnr;
};

void add_common(CLI::App* cmd, CommonFlags& f) {
  cmd->add_option("--config", f.config, "Run configuration file (INI sections)");
  cmd->add_option("--seed", f.seed, "Root seed; overrides [run] seed");
  cmd->add_option("--out", f.out, "Output directory; overrides [run] out");
  cmd->add_option("--tau", f.tau, "Insensitivity threshold; overrides [recoder] tau");
  cmd->add_option("--psnr", f.psnr, "Target PSNR in dB, or 'none' for a fixed lambda; overrides [recoder] psnr");
}

necode::RunConfig resolve(const CommonFlags& f) {
  necode::RunConfig c = f.config.empty() ? necode::RunConfig{} : necode::load_config(f.config);
  if (f.seed) c.seed = *f.seed;
  if (f.out) c.out = *f.out;
  if (f.tau) c.recoder.tau = *f.tau;
  if (f.psnr) {
    if (*f.psnr == "none") {
      c.recoder.target_psnr_db.reset();
    } else {
      try {
        std::size_t used = 0;
        c.recoder.target_psnr_db = std::stod(*f.psnr, &used);
        if (used != f.psnr->size()) throw std::invalid_argument("trailing characters");
      } catch (const std::exception&) {
        throw necode::ConfigError("--psnr: '" + *f.psnr + "' is not a number or 'none'");
      }
    }
  }
  c.validate();
  return c;
}

void log_line(std::string_view s) { std::cerr << "necode: " << s << '\n'; }

int cmd_train(const CommonFlags& f) {
  const necode::RunConfig c = resolve(f);
  const auto data = necode::build_dataset(c);
  const auto result = necode::run_train(c, data, log_line);
  for (const auto& e : result.manifest.models) {
    std::printf("%s\t%s\tseed=%llu\tchecksum=%016llx\n", e.name.c_str(), e.file.c_str(),
                static_cast<unsigned long long>(e.seed), static_cast<unsigned long long>(e.checksum));
  }
  for (const auto& [a, b] : result.manifest.transfer_match_pairs) std::printf("transfer-match\t%s\t%s\n", a.c_str(), b.c_str());
  return kOk;
}

int cmd_recode(const CommonFlags& f, std::string model, const std::string& split, std::optional<double> lambda,
               const std::string& png_dir) {
  necode::RunConfig c = resolve(f);
  if (lambda) {
    c.recoder.lambda = *lambda;
    if (!f.psnr) c.recoder.target_psnr_db.reset();
    c.validate();
  }
  const auto data = necode::build_dataset(c);
  const auto models = necode::ensure_grid(c, data, log_line);
  if (models.empty()) throw necode::ConfigError("the model grid is empty");
  if (model.empty()) model = models.front().name;
  auto r = necode::run_recode(c, data, models, model, necode::parse_split(split));
  double lo = r.batch.size() ? INFINITY : 0.0, hi = r.batch.size() ? -INFINITY : 0.0;
  for (const auto& p : r.batch.perturbations) {
    lo = std::min(lo, p.realized_psnr_db);
    hi = std::max(hi, p.realized_psnr_db);
  }
  std::printf("%s\tsamples=%zu\trank=%zu\tlambda=%.6g\tpsnr_mean=%.4f\tpsnr_min=%.4f\tpsnr_max=%.4f\n",
              r.file.string().c_str(), r.batch.size(), r.batch.provenance.rank, r.lambda, r.batch.mean_psnr_db(), lo,
              hi);
  if (!png_dir.empty()) necode::export_png(r.batch, png_dir);
  return kOk;
}

int cmd_verify(const CommonFlags& f) {
  const necode::RunConfig c = resolve(f);
  const auto data = necode::build_dataset(c);
  const auto models = necode::ensure_grid(c, data, log_line);
  const auto result = necode::run_verify(c, data, models, log_line);
  necode::write_verify(c, data, models, result);
  std::printf("retention points=%zu deterministic_violations=%zu\n", result.retention.size(),
              result.deterministic_violations());
  std::printf("checks failed=%zu vacuous=%zu\n", result.failures(), result.vacuous());
  for (const auto& n : result.notes) std::printf("note: %s\n", n.c_str());
  return result.failures() == 0 ? kOk : kVerification;
}

int cmd_eval(const CommonFlags& f) {
  const necode::RunConfig c = resolve(f);
  const auto data = necode::build_dataset(c);
  const auto models = necode::ensure_grid(c, data, log_line);
  const auto report = necode::run_eval(c, data, models, log_line);
  necode::write_eval(c, data, models, report);
  std::printf("%zu rows written to %s\n", report.rows.size(),
              (c.out / necode::layout::kEval / necode::layout::kEvalCsv).string().c_str());
  for (const auto& n : report.notes) std::printf("note: %s\n", n.c_str());
  return kOk;
}

int cmd_report(const CommonFlags& f) {
  const necode::RunConfig c = resolve(f);
  std::fputs(necode::run_report(c).c_str(), stdout);
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Recode data so that only one model keeps using it."};
  app.set_version_flag("--version", std::string(necode::tool_version()));
  app.require_subcommand(1);
  app.footer(
      "Settings precedence: defaults < --config file < flags.\n"
      "NECODE_THREADS caps worker threads.\n"
      "Exit codes: 0 ok, 2 configuration error or empty insensitive subspace, 3 failed bound check, 4 I/O error.");

  CommonFlags flags;
  auto* train = app.add_subcommand("train", "Train the model grid and write a manifest");
  add_common(train, flags);

  auto* recode = app.add_subcommand("recode", "Recode one split for one model");
  add_common(recode, flags);
  std::string model, split = "eval", png_dir;
  std::optional<double> lambda;
  recode->add_option("--model", model, "Model name from the grid (default: first)");
  recode->add_option("--split", split, "Dataset split: probe, train or eval")->capture_default_str();
  recode->add_option("--lambda", lambda, "Fixed amplitude; disables PSNR calibration unless --psnr is given");
  recode->add_option("--png", png_dir, "Also export the recoded images as PNG files into this directory");

  auto* verify = app.add_subcommand("verify", "Check the retention and degradation bounds");
  add_common(verify, flags);
  auto* eval = app.add_subcommand("eval", "Run the evaluation grid and write the CSV");
  add_common(eval, flags);
  auto* report = app.add_subcommand("report", "Summarize an evaluation as markdown");
  add_common(report, flags);

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kConfig;
  }

  try {
    if (*train) return cmd_train(flags);
    if (*recode) return cmd_recode(flags, model, split, lambda, png_dir);
    if (*verify) return cmd_verify(flags);
    if (*eval) return cmd_eval(flags);
    if (*report) return cmd_report(flags);
  } catch (const necode::ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << '\n';
    return kConfig;
  } catch (const necode::SubspaceError& e) {
    std::cerr << "no insensitive direction: " << e.what() << '\n';
    return kConfig;
  } catch (const necode::IoError& e) {
    std::cerr << "I/O error: " << e.what() << '\n';
    return kIo;
  } catch (const necode::InvalidArgument& e) {
    std::cerr << "invalid argument: " << e.what() << '\n';
    return kConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kOther;
  }
  return kOther;
}
