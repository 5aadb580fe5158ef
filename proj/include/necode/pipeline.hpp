#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "necode/bounds.hpp"
#include "necode/config.hpp"
#include "necode/harness.hpp"

namespace necode {

/// Progress sink for long runs; may be empty.
using LogFn = std::function<void(std::string_view)>;

/// Output layout below RunConfig::out. Every command writes into its own
/// subdirectory, next to a config echo (config.ini) and run metadata
/// (run.json).
namespace layout {
inline constexpr const char* kTrain = "train";
inline constexpr const char* kRecode = "recode";
inline constexpr const char* kVerify = "verify";
inline constexpr const char* kEval = "eval";
inline constexpr const char* kReport = "report";
inline constexpr const char* kManifest = "manifest.json";
inline constexpr const char* kConfigEcho = "config.ini";
inline constexpr const char* kRunInfo = "run.json";
inline constexpr const char* kEvalCsv = "eval.csv";
inline constexpr const char* kSummary = "summary.json";
inline constexpr const char* kRetentionCsv = "retention.csv";
inline constexpr const char* kBoundsJson = "bounds.json";
inline constexpr const char* kReportMd = "report.md";
}  // namespace layout

std::string_view tool_version();

/// Dataset of a run; its seed is the "data" substream of the root seed.
LabeledDataset build_dataset(const RunConfig& config);

struct ManifestEntry {
  std::string name;
  std::string file;  // relative to the manifest directory
  ModelSpec spec;
  std::uint64_t seed = 0;
  std::uint64_t checksum = 0;
};

struct Manifest {
  std::string dataset_kind;
  std::uint64_t dataset_fingerprint = 0;
  std::vector<ManifestEntry> models;
  /// Unordered same-specification pairs, in grid order.
  std::vector<std::pair<std::string, std::string>> transfer_match_pairs;
};

std::string manifest_json(const Manifest& manifest);
/// Throws IoError on malformed text.
Manifest parse_manifest(std::string_view text);

/// Inputs, seeds and output checksums of one command run.
struct RunInfo {
  std::string command;
  std::uint64_t seed = 0;
  std::map<std::string, std::uint64_t> seeds;
  std::map<std::string, std::uint64_t> inputs;
  std::map<std::string, std::uint64_t> outputs;  // file name -> FNV-1a of its bytes
};

std::string run_info_json(const RunInfo& info);

/// Writes config.ini and run.json into `dir`; `info.outputs` is filled from
/// the files listed in it, which must already exist in `dir`.
void write_run_files(const RunConfig& config, const std::filesystem::path& dir, RunInfo info);

struct TrainResult {
  std::vector<NamedModel> models;
  Manifest manifest;
};

/// Trains the configured grid into <out>/train. Model files written before a
/// failure are removed again.
TrainResult run_train(const RunConfig& config, const LabeledDataset& data, const LogFn& log = {});

/// Loads the grid from a manifest directory and checks it against the
/// configuration: IoError on checksum mismatch, ConfigError when the stored
/// specifications, seeds or dataset differ.
std::vector<NamedModel> load_grid(const RunConfig& config, const LabeledDataset& data,
                                  const std::filesystem::path& dir);

/// Loads <out>/train when it exists, otherwise trains it.
std::vector<NamedModel> ensure_grid(const RunConfig& config, const LabeledDataset& data, const LogFn& log = {});

struct RecodeResult {
  NEBatch batch;
  std::filesystem::path file;
  double lambda = 0.0;  // applied amplitude (calibrated when a target PSNR is set)
};

/// NEs of one split for one model of the grid, written to
/// <out>/recode/<model>-<split>.necb.
RecodeResult run_recode(const RunConfig& config, const LabeledDataset& data, const std::vector<NamedModel>& models,
                        const std::string& model_name, Split split);

struct ModelBounds {
  std::string model;
  std::size_t rank = 0;
  double smallest_singular = 0.0;
  FlatnessReport flatness;
  AlignmentReport alignment;
};

struct PairBounds {
  std::string first;
  std::string second;
  std::optional<DegradationBoundReport> report;
  std::string note;  // why the pair was not checked
};

struct VerifyResult {
  std::vector<std::string> retention_models;  // label per retention row
  std::vector<RetentionBoundReport> retention;
  std::vector<ModelBounds> models;
  std::vector<PairBounds> pairs;
  std::vector<std::string> notes;

  std::size_t failures() const;
  std::size_t vacuous() const;
  std::size_t deterministic_violations() const;
};

/// Retention sweep per model, degradation check per ordered model pair
/// (self pairs included), flatness and alignment per model. SubspaceError
/// propagates when a model has no insensitive direction.
VerifyResult run_verify(const RunConfig& config, const LabeledDataset& data, const std::vector<NamedModel>& models,
                        const LogFn& log = {});
std::string verify_json(const VerifyResult& result);
/// Writes retention.csv and bounds.json into <out>/verify.
void write_verify(const RunConfig& config, const LabeledDataset& data, const std::vector<NamedModel>& models,
                  const VerifyResult& result);

/// Cross matrix, strength sweep, preprocessing and attacks for every target.
EvalReport run_eval(const RunConfig& config, const LabeledDataset& data, const std::vector<NamedModel>& models,
                    const LogFn& log = {});
/// Writes eval.csv and summary.json into <out>/eval.
void write_eval(const RunConfig& config, const LabeledDataset& data, const std::vector<NamedModel>& models,
                const EvalReport& report);

/// Markdown digest of <out>/eval/eval.csv (and <out>/verify/bounds.json when
/// present), written to <out>/report/report.md and returned.
std::string run_report(const RunConfig& config);

}  // namespace necode
