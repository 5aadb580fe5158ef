#include "necode/config.hpp"

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <map>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "necode/binary_io.hpp"
#include "necode/error.hpp"
#include "necode/random.hpp"

namespace necode {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split_list(const std::string& value) {
  std::vector<std::string> out;
  if (trim(value).empty()) return out;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = value.find(',', start);
    out.push_back(trim(std::string_view(value).substr(start, comma - start)));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value, const std::string& expected) {
  throw ConfigError("key '" + key + "': '" + value + "' is not " + expected);
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
  char* end = nullptr;
  if (v.empty() || v[0] == '-') bad_value(key, v, "a non-negative integer");
  const unsigned long long x = std::strtoull(v.c_str(), &end, 10);
  if (*end != '\0') bad_value(key, v, "a non-negative integer");
  return x;
}

double to_real(const std::string& key, const std::string& v) {
  char* end = nullptr;
  const double x = std::strtod(v.c_str(), &end);
  if (v.empty() || *end != '\0' || std::isnan(x)) bad_value(key, v, "a number");
  return x;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  bad_value(key, v, "a boolean");
}

template <typename T, typename F>
std::vector<T> list_of(const std::string& key, const std::string& v, F convert) {
  std::vector<T> out;
  for (const std::string& item : split_list(v)) out.push_back(convert(key, item));
  return out;
}

template <typename F>
auto parse_enum(const std::string& key, const std::string& v, F parse) {
  try {
    return parse(v);
  } catch (const InvalidArgument& e) {
    throw ConfigError("key '" + key + "': " + e.what());
  }
}

std::string real(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

template <typename T, typename F>
std::string join(const std::vector<T>& items, F format) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (i) out += ", ";
    out += format(items[i]);
  }
  return out;
}

std::string short_name(Family f) {
  switch (f) {
    case Family::dense_front: return "dense";
    case Family::conv_front: return "conv";
    case Family::attention_front: return "attention";
  }
  return "model";
}

using Setter = std::function<void(RunConfig&, const std::string& key, const std::string& value)>;

const std::map<std::string, std::map<std::string, Setter>>& schema() {
  static const std::map<std::string, std::map<std::string, Setter>> s = {
      {"run",
       {{"seed", [](RunConfig& c, const auto& k, const auto& v) { c.seed = to_u64(k, v); }},
        {"out", [](RunConfig& c, const auto&, const auto& v) { c.out = v; }}}},
      {"dataset",
       {{"kind", [](RunConfig& c, const auto&, const auto& v) { c.dataset.kind = v; }},
        {"probe", [](RunConfig& c, const auto& k, const auto& v) { c.dataset.sizes.probe = to_u64(k, v); }},
        {"train", [](RunConfig& c, const auto& k, const auto& v) { c.dataset.sizes.train = to_u64(k, v); }},
        {"eval", [](RunConfig& c, const auto& k, const auto& v) { c.dataset.sizes.eval = to_u64(k, v); }},
        {"blob_classes", [](RunConfig& c, const auto& k, const auto& v) { c.dataset.blobs.classes = to_u64(k, v); }},
        {"blob_dim", [](RunConfig& c, const auto& k, const auto& v) { c.dataset.blobs.dim = to_u64(k, v); }},
        {"blob_separation",
         [](RunConfig& c, const auto& k, const auto& v) { c.dataset.blobs.separation = to_real(k, v); }},
        {"blob_sigma", [](RunConfig& c, const auto& k, const auto& v) { c.dataset.blobs.sigma = to_real(k, v); }}}},
      {"nn",
       {{"families",
         [](RunConfig& c, const auto& k, const auto& v) {
           c.models.families = list_of<Family>(k, v, [](const auto& kk, const auto& x) {
             return parse_enum(kk, x, parse_family);
           });
         }},
        {"reseed",
         [](RunConfig& c, const auto& k, const auto& v) {
           c.models.reseed = list_of<Family>(k, v, [](const auto& kk, const auto& x) {
             return parse_enum(kk, x, parse_family);
           });
         }},
        {"activation",
         [](RunConfig& c, const auto& k, const auto& v) { c.models.activation = parse_enum(k, v, parse_activation); }},
        {"hidden",
         [](RunConfig& c, const auto& k, const auto& v) { c.models.hidden = list_of<std::size_t>(k, v, to_u64); }},
        {"conv_channels", [](RunConfig& c, const auto& k, const auto& v) { c.models.conv.channels = to_u64(k, v); }},
        {"conv_kernel", [](RunConfig& c, const auto& k, const auto& v) { c.models.conv.kernel = to_u64(k, v); }},
        {"conv_stride", [](RunConfig& c, const auto& k, const auto& v) { c.models.conv.stride = to_u64(k, v); }},
        {"conv_padding", [](RunConfig& c, const auto& k, const auto& v) { c.models.conv.padding = to_u64(k, v); }},
        {"conv_pool", [](RunConfig& c, const auto& k, const auto& v) { c.models.conv.pool = to_u64(k, v); }},
        {"attention_patch",
         [](RunConfig& c, const auto& k, const auto& v) { c.models.attention.patch = to_u64(k, v); }},
        {"attention_dim",
         [](RunConfig& c, const auto& k, const auto& v) { c.models.attention.model_dim = to_u64(k, v); }},
        {"epochs", [](RunConfig& c, const auto& k, const auto& v) { c.models.training.epochs = to_u64(k, v); }},
        {"learning_rate",
         [](RunConfig& c, const auto& k, const auto& v) { c.models.training.learning_rate = to_real(k, v); }},
        {"momentum", [](RunConfig& c, const auto& k, const auto& v) { c.models.training.momentum = to_real(k, v); }},
        {"batch_size",
         [](RunConfig& c, const auto& k, const auto& v) { c.models.training.batch_size = to_u64(k, v); }},
        {"crop_augment",
         [](RunConfig& c, const auto& k, const auto& v) { c.models.training.crop_augment = to_u64(k, v); }}}},
      {"recoder",
       {{"tau", [](RunConfig& c, const auto& k, const auto& v) { c.recoder.tau = to_real(k, v); }},
        {"sigma", [](RunConfig& c, const auto& k, const auto& v) { c.recoder.sigma = to_real(k, v); }},
        {"lambda", [](RunConfig& c, const auto& k, const auto& v) { c.recoder.lambda = to_real(k, v); }},
        {"psnr",
         [](RunConfig& c, const auto& k, const auto& v) {
           if (v == "none") {
             c.recoder.target_psnr_db.reset();
           } else {
             c.recoder.target_psnr_db = to_real(k, v);
           }
         }},
        {"z_mode", [](RunConfig& c, const auto& k, const auto& v) { c.recoder.z_mode = parse_enum(k, v, parse_z_mode); }},
        {"criterion",
         [](RunConfig& c, const auto& k, const auto& v) { c.recoder.criterion = parse_enum(k, v, parse_criterion); }},
        {"clip", [](RunConfig& c, const auto& k, const auto& v) { c.recoder.clip = parse_enum(k, v, parse_clip_mode); }},
        {"normalize", [](RunConfig& c, const auto& k, const auto& v) { c.recoder.normalize = to_bool(k, v); }},
        {"extraction",
         [](RunConfig& c, const auto& k, const auto& v) {
           c.recoder.extraction = parse_enum(k, v, parse_extraction_target);
         }},
        {"split", [](RunConfig& c, const auto& k, const auto& v) { c.recode_split = parse_enum(k, v, parse_split); }}}},
      {"bounds",
       {{"k_grid",
         [](RunConfig& c, const auto& k, const auto& v) { c.bounds.k_grid = list_of<std::size_t>(k, v, to_u64); }},
        {"sigma_grid",
         [](RunConfig& c, const auto& k, const auto& v) { c.bounds.sigma_grid = list_of<double>(k, v, to_real); }},
        {"t_grid", [](RunConfig& c, const auto& k, const auto& v) { c.bounds.t_grid = list_of<double>(k, v, to_real); }},
        {"trials", [](RunConfig& c, const auto& k, const auto& v) { c.bounds.trials = to_u64(k, v); }},
        {"energy", [](RunConfig& c, const auto& k, const auto& v) { c.bounds.energy = parse_enum(k, v, parse_energy_mode); }},
        {"alignment_top_k", [](RunConfig& c, const auto& k, const auto& v) { c.bounds.alignment_top_k = to_u64(k, v); }},
        {"degradation_samples",
         [](RunConfig& c, const auto& k, const auto& v) { c.bounds.degradation_samples = to_u64(k, v); }}}},
      {"harness",
       {{"psnr_grid",
         [](RunConfig& c, const auto& k, const auto& v) { c.harness.psnr_grid = list_of<double>(k, v, to_real); }},
        {"preprocess",
         [](RunConfig& c, const auto& k, const auto& v) {
           c.harness.preprocess = list_of<PreprocessKind>(k, v, [](const auto& kk, const auto& x) {
             return parse_enum(kk, x, parse_preprocess_kind);
           });
         }},
        {"pca_rank", [](RunConfig& c, const auto& k, const auto& v) { c.harness.pca_rank = to_u64(k, v); }},
        {"attacks", [](RunConfig& c, const auto& k, const auto& v) { c.harness.attacks = to_bool(k, v); }},
        {"denoiser_modes",
         [](RunConfig& c, const auto& k, const auto& v) {
           c.harness.denoiser_modes = list_of<DenoiserMode>(k, v, [](const auto& kk, const auto& x) {
             return parse_enum(kk, x, parse_denoiser_mode);
           });
         }},
        {"denoiser_epochs",
         [](RunConfig& c, const auto& k, const auto& v) { c.harness.denoiser_epochs = to_u64(k, v); }}}},
  };
  return s;
}

}  // namespace

std::vector<RunConfig::ModelEntry> RunConfig::model_entries() const {
  std::vector<ModelEntry> out;
  auto spec_for = [&](Family f) {
    ModelSpec s;
    s.family = f;
    s.input = input_shape();
    s.classes = classes();
    s.activation = models.activation;
    s.hidden = f == Family::dense_front ? models.hidden : std::vector<std::size_t>{};
    s.conv = models.conv;
    s.attention = models.attention;
    return s;
  };
  for (Family f : models.families) {
    const std::string name = short_name(f);
    out.push_back({name, spec_for(f), derive_seed(seed, "train/" + name)});
  }
  for (Family f : models.reseed) {
    const std::string name = short_name(f) + "-b";
    out.push_back({name, spec_for(f), derive_seed(seed, "train/" + name)});
  }
  return out;
}

Shape RunConfig::input_shape() const {
  if (dataset.kind == "gaussian-blobs") return {1, 1, dataset.blobs.dim};
  return {1, 16, 16};
}

std::size_t RunConfig::classes() const {
  return dataset.kind == "gaussian-blobs" ? dataset.blobs.classes : 10;
}

RecodingConfig RunConfig::resolved_recoder() const {
  RecodingConfig r = recoder;
  r.seed = derive_seed(seed, "recode");
  return r;
}

void RunConfig::validate() const {
  try {
    if (dataset.kind != "mini-digits" && dataset.kind != "gaussian-blobs") {
      throw ConfigError("unknown dataset kind '" + dataset.kind + "'");
    }
    for (const ModelEntry& e : model_entries()) e.spec.validate();
    for (std::size_t i = 0; i < models.reseed.size(); ++i) {
      if (std::find(models.families.begin(), models.families.end(), models.reseed[i]) == models.families.end()) {
        throw ConfigError("reseeded family '" + std::string(to_string(models.reseed[i])) + "' is not in the grid");
      }
    }
    recoder.validate();
    if (bounds.trials == 0) throw ConfigError("bounds.trials must be at least 1");
    for (double t : bounds.t_grid)
      if (!(t > 0.0)) throw ConfigError("bounds.t_grid entries must be positive");
    for (std::size_t k : bounds.k_grid)
      if (k == 0) throw ConfigError("bounds.k_grid entries must be positive");
    if (models.training.batch_size == 0) throw ConfigError("nn.batch_size must be at least 1");
    if (!(models.training.learning_rate > 0.0)) throw ConfigError("nn.learning_rate must be positive");
  } catch (const ConfigError&) {
    throw;
  } catch (const InvalidArgument& e) {
    throw ConfigError(e.what());
  }
}

RunConfig parse_config(std::string_view text) {
  boost::property_tree::ptree tree;
  std::istringstream in{std::string(text)};
  try {
    boost::property_tree::read_ini(in, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ConfigError(std::string("malformed config: ") + e.message() + " (line " + std::to_string(e.line()) + ")");
  }
  RunConfig c;
  const auto& s = schema();
  for (const auto& [section, keys] : tree) {
    const auto sec = s.find(section);
    if (sec == s.end()) {
      if (keys.empty()) throw ConfigError("key '" + section + "' is outside any section");
      throw ConfigError("unknown section [" + section + "]");
    }
    for (const auto& [key, node] : keys) {
      const auto setter = sec->second.find(key);
      if (setter == sec->second.end()) throw ConfigError("unknown key '" + key + "' in [" + section + "]");
      setter->second(c, section + "." + key, trim(node.get_value<std::string>()));
    }
  }
  c.validate();
  return c;
}

RunConfig load_config(const std::filesystem::path& path) {
  const Bytes bytes = read_file(path);
  return parse_config(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
}

std::string to_ini(const RunConfig& c) {
  auto u = [](std::size_t v) { return std::to_string(v); };
  auto fam = [](Family f) { return std::string(to_string(f)); };
  std::ostringstream o;
  o << "[run]\n"
    << "seed = " << c.seed << "\n"
    << "out = " << c.out.string() << "\n\n";
  o << "[dataset]\n"
    << "kind = " << c.dataset.kind << "\n"
    << "probe = " << c.dataset.sizes.probe << "\n"
    << "train = " << c.dataset.sizes.train << "\n"
    << "eval = " << c.dataset.sizes.eval << "\n"
    << "blob_classes = " << c.dataset.blobs.classes << "\n"
    << "blob_dim = " << c.dataset.blobs.dim << "\n"
    << "blob_separation = " << real(c.dataset.blobs.separation) << "\n"
    << "blob_sigma = " << real(c.dataset.blobs.sigma) << "\n\n";
  o << "[nn]\n"
    << "families = " << join(c.models.families, fam) << "\n"
    << "reseed = " << join(c.models.reseed, fam) << "\n"
    << "activation = " << to_string(c.models.activation) << "\n"
    << "hidden = " << join(c.models.hidden, u) << "\n"
    << "conv_channels = " << c.models.conv.channels << "\n"
    << "conv_kernel = " << c.models.conv.kernel << "\n"
    << "conv_stride = " << c.models.conv.stride << "\n"
    << "conv_padding = " << c.models.conv.padding << "\n"
    << "conv_pool = " << c.models.conv.pool << "\n"
    << "attention_patch = " << c.models.attention.patch << "\n"
    << "attention_dim = " << c.models.attention.model_dim << "\n"
    << "epochs = " << c.models.training.epochs << "\n"
    << "learning_rate = " << real(c.models.training.learning_rate) << "\n"
    << "momentum = " << real(c.models.training.momentum) << "\n"
    << "batch_size = " << c.models.training.batch_size << "\n"
    << "crop_augment = " << c.models.training.crop_augment << "\n\n";
  o << "[recoder]\n"
    << "tau = " << real(c.recoder.tau) << "\n"
    << "sigma = " << real(c.recoder.sigma) << "\n"
    << "lambda = " << real(c.recoder.lambda) << "\n"
    << "psnr = " << (c.recoder.target_psnr_db ? real(*c.recoder.target_psnr_db) : "none") << "\n"
    << "z_mode = " << to_string(c.recoder.z_mode) << "\n"
    << "criterion = " << to_string(c.recoder.criterion) << "\n"
    << "clip = " << to_string(c.recoder.clip) << "\n"
    << "normalize = " << (c.recoder.normalize ? "true" : "false") << "\n"
    << "extraction = " << to_string(c.recoder.extraction) << "\n"
    << "split = " << to_string(c.recode_split) << "\n\n";
  o << "[bounds]\n"
    << "k_grid = " << join(c.bounds.k_grid, u) << "\n"
    << "sigma_grid = " << join(c.bounds.sigma_grid, real) << "\n"
    << "t_grid = " << join(c.bounds.t_grid, real) << "\n"
    << "trials = " << c.bounds.trials << "\n"
    << "energy = " << to_string(c.bounds.energy) << "\n"
    << "alignment_top_k = " << c.bounds.alignment_top_k << "\n"
    << "degradation_samples = " << c.bounds.degradation_samples << "\n\n";
  o << "[harness]\n"
    << "psnr_grid = " << join(c.harness.psnr_grid, real) << "\n"
    << "preprocess = " << join(c.harness.preprocess, [](PreprocessKind k) { return std::string(to_string(k)); })
    << "\n"
    << "pca_rank = " << c.harness.pca_rank << "\n"
    << "attacks = " << (c.harness.attacks ? "true" : "false") << "\n"
    << "denoiser_modes = "
    << join(c.harness.denoiser_modes, [](DenoiserMode m) { return std::string(to_string(m)); }) << "\n"
    << "denoiser_epochs = " << c.harness.denoiser_epochs << "\n";
  return o.str();
}

}  // namespace necode
