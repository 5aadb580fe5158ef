#include "doctest.h"

#include <sys/wait.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include "json.hpp"
#include "necode/binary_io.hpp"
#include "necode/harness.hpp"

namespace fs = std::filesystem;

#ifndef NECODE_CLI
#error "NECODE_CLI must name the command-line binary"
#endif

namespace {

struct Run {
  int code = -1;
  std::string out;
};

Run run_cli(const std::string& args) {
  const std::string cmd = std::string(NECODE_CLI) + " " + args + " 2>/dev/null";
  Run r;
  FILE* pipe = popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  char buf[4096];
  std::size_t n;
  while ((n = fread(buf, 1, sizeof buf, pipe)) > 0) r.out.append(buf, n);
  const int status = pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("necode_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

fs::path write_config(const fs::path& dir, const std::string& text) {
  const fs::path p = dir / "run.ini";
  std::ofstream(p) << text;
  return p;
}

std::string text_of(const fs::path& p) {
  const auto b = necode::read_file(p);
  return std::string(b.begin(), b.end());
}

const char* kBlobs =
    "[dataset]\nkind = gaussian-blobs\nprobe = 20\ntrain = 200\neval = 60\nblob_dim = 16\n"
    "[nn]\nfamilies = dense\nreseed =\nhidden = 4\nepochs = 3\ncrop_augment = 0\n"
    "[bounds]\nk_grid = 2\nsigma_grid = 0.1\nt_grid = 0.01, 1\ntrials = 200\ndegradation_samples = 10\n"
    "[harness]\npsnr_grid = 20, 10\npreprocess =\nattacks = false\n";

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("usage errors and configuration errors exit with 2") {
  CHECK(run_cli("--help").code == 0);
  CHECK(run_cli("--version").out.find('.') != std::string::npos);
  CHECK(run_cli("").code == 2);
  CHECK(run_cli("train --bogus").code == 2);
  const fs::path dir = scratch("errors");
  CHECK(run_cli("train --config " + write_config(dir, "[run]\nseeds = 1\n").string()).code == 2);
  CHECK(run_cli("train --psnr loud --out " + dir.string()).code == 2);
  CHECK(run_cli("train --config " + (dir / "absent.ini").string()).code == 4);
  fs::remove_all(dir);
}

TEST_CASE("train, recode, verify, eval and report on a minimal grid") {
  const fs::path dir = scratch("flow");
  const std::string cfg = "--config " + write_config(dir, kBlobs).string();
  const std::string common = cfg + " --out " + (dir / "out").string();

  const Run train = run_cli("train " + common);
  CHECK(train.code == 0);
  CHECK(train.out.find("dense\tmodels/dense.necm") != std::string::npos);
  CHECK(fs::exists(dir / "out" / "train" / "manifest.json"));
  CHECK(fs::exists(dir / "out" / "train" / "config.ini"));
  CHECK(fs::exists(dir / "out" / "train" / "run.json"));

  const Run again = run_cli("train " + cfg + " --out " + (dir / "again").string());
  CHECK(again.code == 0);
  CHECK(again.out == train.out);  // same names, seeds and checksums

  const Run recode = run_cli("recode " + common + " --psnr 20");
  CHECK(recode.code == 0);
  CHECK(recode.out.find("psnr_mean=20.0") != std::string::npos);
  CHECK(fs::exists(dir / "out" / "recode" / "dense-eval.necb"));
  CHECK(run_cli("recode " + common + " --tau 1e-30").code == 2);
  CHECK(run_cli("recode " + common + " --model nothing").code == 2);

  const Run verify = run_cli("verify " + common);
  CHECK(verify.code == 0);
  CHECK(verify.out.find("failed=0") != std::string::npos);
  CHECK(verify.out.find("vacuous=") != std::string::npos);
  const auto bounds = nlohmann::json::parse(text_of(dir / "out" / "verify" / "bounds.json"));
  CHECK(bounds["failures"] == 0);
  CHECK(bounds["vacuous"].get<int>() >= 1);

  CHECK(run_cli("eval " + common).code == 0);
  const std::string csv = text_of(dir / "out" / "eval" / "eval.csv");
  CHECK(csv.rfind(necode::kEvalCsvHeader, 0) == 0);
  CHECK(run_cli("eval " + common).code == 0);
  CHECK(text_of(dir / "out" / "eval" / "eval.csv") == csv);

  const Run report = run_cli("report " + common);
  CHECK(report.code == 0);
  CHECK(report.out.find("# necode report") != std::string::npos);
  fs::remove_all(dir);
}

TEST_CASE("flags override the configuration file") {
  const fs::path dir = scratch("override");
  const std::string cfg = "--config " + write_config(dir, kBlobs).string();
  CHECK(run_cli("train " + cfg + " --seed 5 --out " + (dir / "out").string()).code == 0);
  const auto info = nlohmann::json::parse(text_of(dir / "out" / "train" / "run.json"));
  CHECK(info["seed"] == 5);
  CHECK(text_of(dir / "out" / "train" / "config.ini").find("seed = 5\n") != std::string::npos);
  fs::remove_all(dir);
}

TEST_CASE("an empty grid evaluates to a header-only CSV") {
  const fs::path dir = scratch("empty");
  std::string text = kBlobs;
  text.replace(text.find("families = dense"), 16, "families =");
  const fs::path cfg = write_config(dir, text);
  CHECK(run_cli("eval --config " + cfg.string() + " --out " + (dir / "out").string()).code == 0);
  CHECK(text_of(dir / "out" / "eval" / "eval.csv") == std::string(necode::kEvalCsvHeader) + "\n");
  fs::remove_all(dir);
}

}  // TEST_SUITE
