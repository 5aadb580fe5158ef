#include "necode/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>

#include "json.hpp"
#include "necode/binary_io.hpp"
#include "necode/error.hpp"
#include "necode/random.hpp"

namespace necode {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string hex(std::uint64_t v) {
  char buf[19];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::uint64_t from_hex(const json& j) {
  const std::string s = j.get<std::string>();
  char* end = nullptr;
  const unsigned long long v = std::strtoull(s.c_str(), &end, 16);
  if (s.empty() || *end != '\0') throw IoError("'" + s + "' is not a hexadecimal checksum");
  return v;
}

void make_dirs(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
}

std::string read_text(const fs::path& path) {
  const Bytes b = read_file(path);
  return std::string(b.begin(), b.end());
}

void emit(const LogFn& log, const std::string& line) {
  if (log) log(line);
}

std::size_t index_of(const std::vector<NamedModel>& models, const std::string& name) {
  for (std::size_t i = 0; i < models.size(); ++i)
    if (models[i].name == name) return i;
  throw ConfigError("no model named '" + name + "' in the grid");
}

RunInfo base_info(const RunConfig& config, const LabeledDataset& data, const std::string& command) {
  RunInfo info;
  info.command = command;
  info.seed = config.seed;
  info.seeds["data"] = derive_seed(config.seed, "data");
  info.seeds["recode"] = config.resolved_recoder().seed;
  info.inputs["config"] = fnv1a64(to_ini(config));
  info.inputs["dataset"] = data.fingerprint();
  return info;
}

void add_models(RunInfo& info, const RunConfig& config, const std::vector<NamedModel>& models) {
  for (const auto& e : config.model_entries()) info.seeds["train/" + e.name] = e.seed;
  for (const auto& m : models) info.inputs["model/" + m.name] = m.model.checksum();
}

Batch split_batch(const LabeledDataset& data, Split split) {
  return data.subset(split);
}

double control_noise_std(const RunConfig& config) {
  // Gaussian noise with the same MSE as NEs at the operating point.
  const double psnr = config.recoder.target_psnr_db.value_or(20.0);
  return std::pow(10.0, -psnr / 20.0);
}

}  // namespace

std::string_view tool_version() { return NECODE_VERSION; }

LabeledDataset build_dataset(const RunConfig& config) {
  return make_dataset(config.dataset.kind, derive_seed(config.seed, "data"), config.dataset.sizes,
                      config.dataset.blobs);
}

// ---------------------------------------------------------------- manifest

std::string manifest_json(const Manifest& m) {
  json j;
  j["dataset"] = {{"kind", m.dataset_kind}, {"fingerprint", hex(m.dataset_fingerprint)}};
  json models = json::array();
  for (const auto& e : m.models) {
    models.push_back({{"name", e.name},
                      {"file", e.file},
                      {"spec", json::parse(e.spec.to_json())},
                      {"seed", e.seed},
                      {"checksum", hex(e.checksum)}});
  }
  j["models"] = std::move(models);
  json pairs = json::array();
  for (const auto& [a, b] : m.transfer_match_pairs) pairs.push_back({a, b});
  j["transfer_match_pairs"] = std::move(pairs);
  return j.dump(2) + "\n";
}

Manifest parse_manifest(std::string_view text) {
  try {
    const json j = json::parse(text);
    Manifest m;
    m.dataset_kind = j.at("dataset").at("kind").get<std::string>();
    m.dataset_fingerprint = from_hex(j.at("dataset").at("fingerprint"));
    for (const auto& e : j.at("models")) {
      m.models.push_back({e.at("name").get<std::string>(), e.at("file").get<std::string>(),
                          ModelSpec::from_json(e.at("spec").dump()), e.at("seed").get<std::uint64_t>(),
                          from_hex(e.at("checksum"))});
    }
    for (const auto& p : j.at("transfer_match_pairs")) {
      m.transfer_match_pairs.emplace_back(p.at(0).get<std::string>(), p.at(1).get<std::string>());
    }
    return m;
  } catch (const json::exception& e) {
    throw IoError(std::string("malformed manifest: ") + e.what());
  } catch (const InvalidArgument& e) {
    throw IoError(std::string("malformed manifest: ") + e.what());
  }
}

// ---------------------------------------------------------------- run info

std::string run_info_json(const RunInfo& info) {
  json j;
  j["tool"] = "necode";
  j["version"] = std::string(tool_version());
  j["command"] = info.command;
  j["seed"] = info.seed;
  json seeds = json::object(), inputs = json::object(), outputs = json::object();
  for (const auto& [k, v] : info.seeds) seeds[k] = v;
  for (const auto& [k, v] : info.inputs) inputs[k] = hex(v);
  for (const auto& [k, v] : info.outputs) outputs[k] = hex(v);
  j["seeds"] = std::move(seeds);
  j["inputs"] = std::move(inputs);
  j["outputs"] = std::move(outputs);
  return j.dump(2) + "\n";
}

void write_run_files(const RunConfig& config, const fs::path& dir, RunInfo info) {
  make_dirs(dir);
  for (auto& [name, sum] : info.outputs) sum = fnv1a64(read_file(dir / name));
  write_text_atomic(dir / layout::kConfigEcho, to_ini(config));
  write_text_atomic(dir / layout::kRunInfo, run_info_json(info));
}

// ---------------------------------------------------------------- train

TrainResult run_train(const RunConfig& config, const LabeledDataset& data, const LogFn& log) {
  const fs::path dir = config.out / layout::kTrain;
  make_dirs(dir / "models");
  TrainResult result;
  result.manifest.dataset_kind = data.kind;
  result.manifest.dataset_fingerprint = data.fingerprint();
  std::vector<fs::path> written;
  try {
    for (const auto& e : config.model_entries()) {
      TrainedModel model = train(e.spec, data, e.seed, config.models.training);
      const std::string file = "models/" + e.name + ".necm";
      save_model(model, dir / file);
      written.push_back(dir / file);
      emit(log, "trained " + e.name + ": eval accuracy " + std::to_string(accuracy(model, data, Split::eval)));
      result.manifest.models.push_back({e.name, file, e.spec, e.seed, model.checksum()});
      result.models.push_back({e.name, std::move(model)});
    }
  } catch (...) {
    std::error_code ec;
    for (const auto& p : written) fs::remove(p, ec);
    throw;
  }
  for (std::size_t i = 0; i < result.models.size(); ++i)
    for (std::size_t j = i + 1; j < result.models.size(); ++j)
      if (pair_kind(result.models[i], result.models[j]) == PairKind::transfer_match)
        result.manifest.transfer_match_pairs.emplace_back(result.models[i].name, result.models[j].name);

  write_text_atomic(dir / layout::kManifest, manifest_json(result.manifest));
  RunInfo info = base_info(config, data, "train");
  add_models(info, config, result.models);
  info.outputs[layout::kManifest] = 0;
  for (const auto& e : result.manifest.models) info.outputs[e.file] = 0;
  write_run_files(config, dir, std::move(info));
  return result;
}

std::vector<NamedModel> load_grid(const RunConfig& config, const LabeledDataset& data, const fs::path& dir) {
  const Manifest m = parse_manifest(read_text(dir / layout::kManifest));
  if (m.dataset_fingerprint != data.fingerprint()) {
    throw ConfigError("models in " + dir.string() + " were trained on a different dataset");
  }
  const auto entries = config.model_entries();
  if (entries.size() != m.models.size()) {
    throw ConfigError("models in " + dir.string() + " do not match the configured grid");
  }
  std::vector<NamedModel> out;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const ManifestEntry& e = m.models[i];
    if (e.name != entries[i].name || !(e.spec == entries[i].spec) || e.seed != entries[i].seed) {
      throw ConfigError("model '" + e.name + "' in " + dir.string() + " does not match the configured grid");
    }
    TrainedModel model = load_model(dir / e.file);
    if (model.checksum() != e.checksum) throw IoError("checksum mismatch for " + (dir / e.file).string());
    out.push_back({e.name, std::move(model)});
  }
  return out;
}

std::vector<NamedModel> ensure_grid(const RunConfig& config, const LabeledDataset& data, const LogFn& log) {
  const fs::path dir = config.out / layout::kTrain;
  if (fs::exists(dir / layout::kManifest)) {
    emit(log, "using models from " + dir.string());
    return load_grid(config, data, dir);
  }
  return run_train(config, data, log).models;
}

// ---------------------------------------------------------------- recode

RecodeResult run_recode(const RunConfig& config, const LabeledDataset& data, const std::vector<NamedModel>& models,
                        const std::string& model_name, Split split) {
  const std::size_t target = index_of(models, model_name);
  RecodeResult r;
  r.batch = recode_for(models, target, split_batch(data, split), config.resolved_recoder());
  r.lambda = r.batch.provenance.config.lambda;
  const fs::path dir = config.out / layout::kRecode;
  make_dirs(dir);
  const std::string file = model_name + "-" + std::string(to_string(split)) + ".necb";
  r.file = dir / file;
  save_batch(r.batch, r.file);

  RunInfo info = base_info(config, data, "recode");
  add_models(info, config, {models[target]});
  info.seeds["recode/" + model_name] = r.batch.provenance.config.seed;
  info.outputs[file] = 0;
  write_run_files(config, dir, std::move(info));
  return r;
}

// ---------------------------------------------------------------- verify

std::size_t VerifyResult::failures() const {
  std::size_t n = 0;
  for (const auto& r : retention) n += r.status() == BoundStatus::fail;
  for (const auto& p : pairs) n += p.report && p.report->status() == BoundStatus::fail;
  return n;
}

std::size_t VerifyResult::vacuous() const {
  std::size_t n = 0;
  for (const auto& r : retention) n += r.status() == BoundStatus::vacuous;
  for (const auto& p : pairs) n += p.report && p.report->status() == BoundStatus::vacuous;
  return n;
}

std::size_t VerifyResult::deterministic_violations() const {
  std::size_t n = 0;
  for (const auto& r : retention) n += r.deterministic_violations;
  return n;
}

VerifyResult run_verify(const RunConfig& config, const LabeledDataset& data, const std::vector<NamedModel>& models,
                        const LogFn& log) {
  const RecodingConfig rc = config.resolved_recoder();
  const BoundsConfig& b = config.bounds;
  const Batch eval = split_batch(data, Split::eval);
  VerifyResult result;

  std::vector<FirstLayerOperator> ops;
  for (const auto& m : models) {
    ops.push_back(extract(m.model, rc.extraction));
    const FirstLayerOperator& op = ops.back();
    const InsensitiveSubspace sub = identify_subspace(op, rc.tau, rc.criterion);

    std::size_t point = 0;
    for (std::size_t k : b.k_grid) {
      if (k > sub.rank()) {
        result.notes.push_back("skipped k=" + std::to_string(k) + " for " + m.name + ": subspace rank is " +
                               std::to_string(sub.rank()));
        continue;
      }
      const InsensitiveSubspace lead = leading_directions(sub, k);
      for (double sigma : b.sigma_grid)
        for (double t : b.t_grid) {
          const std::uint64_t seed =
              derive_seed(config.seed, "verify/retention/" + m.name + "/" + std::to_string(point++));
          result.retention.push_back(verify_retention(op, lead, sigma, t, b.trials, seed));
          result.retention_models.push_back(m.name);
        }
    }

    ModelBounds mb;
    mb.model = m.name;
    mb.rank = sub.rank();
    mb.smallest_singular = sub.singulars.empty() ? 0.0 : sub.singulars[0];
    mb.flatness = flatness(op, b.energy);
    mb.alignment = alignment(op, eval.inputs, b.alignment_top_k);
    result.models.push_back(std::move(mb));
    emit(log, "verified retention for " + m.name);
  }

  const std::size_t n_samples = std::min(b.degradation_samples, eval.size());
  Batch head;
  head.inputs = DenseMatrix(n_samples, eval.inputs.cols());
  for (std::size_t i = 0; i < n_samples; ++i) {
    const auto row = eval.inputs.row(i);
    std::copy(row.begin(), row.end(), head.inputs.row(i).begin());
    head.labels.push_back(eval.labels[i]);
  }
  for (std::size_t i = 0; i < models.size(); ++i) {
    const NEBatch ne = recode_for(models, i, head, rc);
    for (std::size_t j = 0; j < models.size(); ++j) {
      PairBounds p{models[i].name, models[j].name, std::nullopt, {}};
      const FirstLayerOperator& a = ops[i];
      const FirstLayerOperator& c = ops[j];
      const DenseMatrix wa = a.synthesis_operator(), wc = c.synthesis_operator();
      if (a.per_patch() != c.per_patch() || !(a.layout == c.layout) || wa.rows() != wc.rows() ||
          wa.cols() != wc.cols()) {
        p.note = "different synthesis spaces";
      } else {
        p.report = verify_degradation(a, c, rc.tau, ne.recoded);
      }
      result.pairs.push_back(std::move(p));
    }
  }
  emit(log, "verified degradation on " + std::to_string(result.pairs.size()) + " ordered pairs");
  return result;
}

std::string verify_json(const VerifyResult& r) {
  json j;
  j["failures"] = r.failures();
  j["vacuous"] = r.vacuous();
  j["deterministic_violations"] = r.deterministic_violations();
  json retention = json::array();
  for (std::size_t i = 0; i < r.retention.size(); ++i) {
    json e = json::parse(to_json(r.retention[i]));
    e["model"] = r.retention_models[i];
    retention.push_back(std::move(e));
  }
  j["retention"] = std::move(retention);
  json models = json::array();
  for (const auto& m : r.models) {
    models.push_back({{"model", m.model},
                      {"rank", m.rank},
                      {"smallest_singular", m.smallest_singular},
                      {"flatness", json::parse(to_json(m.flatness))},
                      {"alignment", json::parse(to_json(m.alignment))}});
  }
  j["models"] = std::move(models);
  json pairs = json::array();
  for (const auto& p : r.pairs) {
    json e = {{"first", p.first}, {"second", p.second}};
    if (p.report) {
      e["degradation"] = json::parse(to_json(*p.report));
    } else {
      e["note"] = p.note;
    }
    pairs.push_back(std::move(e));
  }
  j["pairs"] = std::move(pairs);
  j["notes"] = r.notes;
  return j.dump(2) + "\n";
}

void write_verify(const RunConfig& config, const LabeledDataset& data, const std::vector<NamedModel>& models,
                  const VerifyResult& result) {
  const fs::path dir = config.out / layout::kVerify;
  make_dirs(dir);
  write_text_atomic(dir / layout::kRetentionCsv, retention_csv(result.retention, result.retention_models));
  write_text_atomic(dir / layout::kBoundsJson, verify_json(result));
  RunInfo info = base_info(config, data, "verify");
  add_models(info, config, models);
  info.outputs[layout::kRetentionCsv] = 0;
  info.outputs[layout::kBoundsJson] = 0;
  write_run_files(config, dir, std::move(info));
}

// ---------------------------------------------------------------- eval

EvalReport run_eval(const RunConfig& config, const LabeledDataset& data, const std::vector<NamedModel>& models,
                    const LogFn& log) {
  EvalReport report;
  if (models.empty()) return report;
  const RecodingConfig rc = config.resolved_recoder();
  const Batch eval = split_batch(data, Split::eval);

  report.append(cross_matrix(models, eval, rc));
  emit(log, "cross matrix done");

  std::vector<PreprocessOp> ops;
  for (PreprocessKind k : config.harness.preprocess) {
    PreprocessOp op;
    op.kind = k;
    op.seed = derive_seed(config.seed, "eval/preprocess");
    ops.push_back(op);
  }

  AttackSettings settings;
  settings.pca_rank = config.harness.pca_rank;
  settings.seed = derive_seed(config.seed, "attack");
  settings.denoiser.epochs = config.harness.denoiser_epochs;
  settings.denoiser.seed = derive_seed(config.seed, "attack/denoiser");
  const Batch probe = split_batch(data, Split::probe);
  const Batch attacker = split_batch(data, Split::train);

  for (std::size_t t = 0; t < models.size(); ++t) {
    report.append(sweep_strength(models, t, config.harness.psnr_grid, eval, rc));
    if (!ops.empty()) report.append(preprocess_robustness(models, t, eval, rc, ops));
    if (config.harness.attacks) {
      report.append(projection_attacks(models, t, eval, probe.inputs, rc, settings));
      if (!config.harness.denoiser_modes.empty()) {
        report.append(denoiser_attacks(models, t, eval, attacker, rc, settings, config.harness.denoiser_modes));
      }
    }
    emit(log, "evaluated target " + models[t].name);
  }
  if (config.harness.attacks && !config.harness.denoiser_modes.empty()) {
    const auto control = denoiser_control(eval, attacker, data.shape, control_noise_std(config), settings,
                                          config.harness.denoiser_modes);
    report.attacks.insert(report.attacks.end(), control.begin(), control.end());
    emit(log, "denoiser control done");
  }
  return report;
}

void write_eval(const RunConfig& config, const LabeledDataset& data, const std::vector<NamedModel>& models,
                const EvalReport& report) {
  const fs::path dir = config.out / layout::kEval;
  make_dirs(dir);
  write_text_atomic(dir / layout::kEvalCsv, to_csv(report.rows));
  write_text_atomic(dir / layout::kSummary, summary_json(report, to_ini(config)) + "\n");
  RunInfo info = base_info(config, data, "eval");
  add_models(info, config, models);
  info.seeds["attack"] = derive_seed(config.seed, "attack");
  info.seeds["eval/preprocess"] = derive_seed(config.seed, "eval/preprocess");
  info.outputs[layout::kEvalCsv] = 0;
  info.outputs[layout::kSummary] = 0;
  write_run_files(config, dir, std::move(info));
}

// ---------------------------------------------------------------- report

namespace {

std::string pct(double v) {
  if (std::isnan(v)) return "n/a";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.1f", 100.0 * v);
  return buf;
}

std::string db(double v) {
  if (std::isinf(v)) return "clean";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

// Authorized accuracy and the best unauthorized accuracy of one group.
struct GroupStat {
  double psnr = 0.0;
  double authorized = std::nan("");
  double clean = std::nan("");
  double best_other = std::nan("");
};

template <typename Key>
std::map<Key, GroupStat> group(const std::vector<EvalRow>& rows, auto key_of, auto keep) {
  std::map<Key, GroupStat> out;
  for (const EvalRow& r : rows) {
    if (!keep(r)) continue;
    const Key key = key_of(r);
    if (out.count(key) && r.target_model == r.eval_model && !std::isnan(out[key].authorized)) continue;
    GroupStat& g = out[key];
    g.psnr = r.psnr_db;
    if (r.target_model == r.eval_model) {
      g.authorized = r.recoded_acc;
      g.clean = r.clean_acc;
    } else if (std::isnan(g.best_other) || r.recoded_acc > g.best_other) {
      g.best_other = r.recoded_acc;
    }
  }
  return out;
}

}  // namespace

std::string run_report(const RunConfig& config) {
  const fs::path eval_dir = config.out / layout::kEval;
  const std::vector<EvalRow> rows = parse_csv(read_text(eval_dir / layout::kEvalCsv));
  const double chance = 1.0 / static_cast<double>(config.classes());

  std::vector<std::string> names;
  for (const EvalRow& r : rows)
    if (std::find(names.begin(), names.end(), r.target_model) == names.end()) names.push_back(r.target_model);

  std::string md = "# necode report\n\n";
  md += "Root seed " + std::to_string(config.seed) + ", dataset " + config.dataset.kind + ", chance level " +
        pct(chance) + "%.\n\n";

  // Cross matrix: the first none/none row per (target, evaluator).
  md += "## Recoded accuracy (%), target rows by evaluator columns\n\n| target | clean | PSNR |";
  for (const auto& n : names) md += " " + n + " |";
  md += "\n|---|---|---|";
  for (std::size_t i = 0; i < names.size(); ++i) md += "---|";
  md += "\n";
  EvalReport all;
  all.rows = rows;
  for (const auto& t : names) {
    const EvalRow* self = all.find(t, t);
    md += "| " + t + " | " + (self ? pct(self->clean_acc) : "n/a") + " | " + (self ? db(self->psnr_db) : "n/a") + " |";
    for (const auto& e : names) {
      const EvalRow* r = all.find(t, e);
      md += " " + (r ? pct(r->recoded_acc) : "n/a") + " |";
    }
    md += "\n";
  }

  md += "\n## Strength sweep\n\n| target | PSNR | authorized | clean | best unauthorized |\n|---|---|---|---|---|\n";
  {
    using Key = std::pair<std::string, long long>;
    const auto groups = group<Key>(
        rows, [](const EvalRow& r) { return Key{r.target_model, std::llround(r.psnr_db * 100)}; },
        [](const EvalRow& r) { return r.preprocess == "none" && r.attack == "none"; });
    for (const auto& [key, g] : groups) {
      md += "| " + key.first + " | " + db(g.psnr) + " | " + pct(g.authorized) + " | " + pct(g.clean) + " | " +
            pct(g.best_other) + " |\n";
    }
  }

  md += "\n## Preprocessing\n\n| target | operator | authorized | clean | best unauthorized |\n|---|---|---|---|---|\n";
  {
    using Key = std::pair<std::string, std::string>;
    const auto groups = group<Key>(
        rows, [](const EvalRow& r) { return Key{r.target_model, r.preprocess}; },
        [](const EvalRow& r) { return r.preprocess != "none" && r.attack == "none"; });
    for (const auto& [key, g] : groups) {
      md += "| " + key.first + " | " + key.second + " | " + pct(g.authorized) + " | " + pct(g.clean) + " | " +
            pct(g.best_other) + " |\n";
    }
  }

  md += "\n## Attacks\n\n| target | attack | authorized | best unauthorized |\n|---|---|---|---|\n";
  {
    using Key = std::pair<std::string, std::string>;
    const auto groups = group<Key>(
        rows, [](const EvalRow& r) { return Key{r.target_model, r.attack}; },
        [](const EvalRow& r) { return r.preprocess == "none" && r.attack != "none"; });
    for (const auto& [key, g] : groups) {
      md += "| " + key.first + " | " + key.second + " | " + pct(g.authorized) + " | " + pct(g.best_other) + " |\n";
    }
  }

  const fs::path summary = eval_dir / layout::kSummary;
  if (fs::exists(summary)) {
    const json j = json::parse(read_text(summary));
    if (!j.at("attacks").empty()) {
      md += "\n## Reconstruction PSNR (dB)\n\n| target | attack | before | after | gain |\n|---|---|---|---|---|\n";
      for (const auto& a : j.at("attacks")) {
        auto num = [](const json& v) { return v.is_number() ? db(v.get<double>()) : v.get<std::string>(); };
        md += "| " + a.at("target_model").get<std::string>() + " | " + a.at("attack").get<std::string>() + " | " +
              num(a.at("psnr_before")) + " | " + num(a.at("psnr_after")) + " | " + num(a.at("gain_db")) + " |\n";
      }
    }
    if (!j.at("notes").empty()) {
      md += "\nNotes:\n\n";
      for (const auto& n : j.at("notes")) md += "- " + n.get<std::string>() + "\n";
    }
  }

  const fs::path bounds = config.out / layout::kVerify / layout::kBoundsJson;
  if (fs::exists(bounds)) {
    const json j = json::parse(read_text(bounds));
    md += "\n## Bound checks\n\n";
    md += "- retention grid points: " + std::to_string(j.at("retention").size()) + "\n";
    md += "- failing checks: " + std::to_string(j.at("failures").get<std::size_t>()) + "\n";
    md += "- vacuous checks: " + std::to_string(j.at("vacuous").get<std::size_t>()) + "\n";
    md += "- deterministic violations: " + std::to_string(j.at("deterministic_violations").get<std::size_t>()) + "\n";
  }

  const fs::path dir = config.out / layout::kReport;
  make_dirs(dir);
  write_text_atomic(dir / layout::kReportMd, md);
  RunInfo info;
  info.command = "report";
  info.seed = config.seed;
  info.inputs["config"] = fnv1a64(to_ini(config));
  info.inputs["eval.csv"] = fnv1a64(read_file(eval_dir / layout::kEvalCsv));
  info.outputs[layout::kReportMd] = 0;
  write_run_files(config, dir, std::move(info));
  return md;
}

}  // namespace necode
