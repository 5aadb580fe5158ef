#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "necode/bounds.hpp"
#include "necode/nn.hpp"
#include "necode/preprocess.hpp"
#include "necode/recoder.hpp"

namespace necode {

struct DatasetConfig {
  std::string kind = "mini-digits";
  DatasetSizes sizes;
  BlobOptions blobs;
};

struct ModelGridConfig {
  std::vector<Family> families{Family::dense_front, Family::conv_front, Family::attention_front};
  /// Families trained a second time with another seed (transfer-match pairs).
  std::vector<Family> reseed{Family::conv_front};
  Activation activation = Activation::relu;
  std::vector<std::size_t> hidden{32};  // dense-front hidden widths
  ConvSettings conv;
  AttentionSettings attention;
  TrainOptions training{20, 0.05, 0.9, 32, 14};
};

struct BoundsConfig {
  std::vector<std::size_t> k_grid{4, 10, 32};
  std::vector<double> sigma_grid{0.05, 0.1, 0.3};
  std::vector<double> t_grid{0.01, 0.05, 0.2, 1.0};
  std::size_t trials = 10000;
  EnergyMode energy = EnergyMode::sum;
  std::size_t alignment_top_k = 4;
  std::size_t degradation_samples = 100;
};

struct HarnessConfig {
  std::vector<double> psnr_grid{30, 25, 20, 15, 10, 5, 0};
  std::vector<PreprocessKind> preprocess{PreprocessKind::resize, PreprocessKind::center_crop,
                                         PreprocessKind::random_crop, PreprocessKind::jpeg_like, PreprocessKind::blur};
  std::size_t pca_rank = 64;
  bool attacks = true;
  std::vector<DenoiserMode> denoiser_modes{DenoiserMode::noise2noise, DenoiserMode::noise2clean};
  std::size_t denoiser_epochs = 10;
};

/// Everything a CLI run needs. All randomness derives from `seed`.
struct RunConfig {
  std::uint64_t seed = 0;
  std::filesystem::path out = "necode-out";
  DatasetConfig dataset;
  ModelGridConfig models;
  RecodingConfig recoder = [] {
    RecodingConfig r;
    r.target_psnr_db = 20.0;
    return r;
  }();  // seed is overwritten from the root seed
  Split recode_split = Split::eval;
  BoundsConfig bounds;
  HarnessConfig harness;

  /// Specs in grid order: one per family, then one per reseeded family.
  struct ModelEntry {
    std::string name;
    ModelSpec spec;
    std::uint64_t seed;
  };
  std::vector<ModelEntry> model_entries() const;
  /// Input layout implied by the dataset section.
  Shape input_shape() const;
  std::size_t classes() const;
  /// Recoding settings with the seed derived from the root seed.
  RecodingConfig resolved_recoder() const;

  void validate() const;
};

/// INI-style text with sections [run] [dataset] [nn] [recoder] [bounds]
/// [harness]. Missing keys keep their defaults; unknown sections or keys and
/// malformed values throw ConfigError.
RunConfig parse_config(std::string_view text);
RunConfig load_config(const std::filesystem::path& path);

/// Every key with its resolved value, in a fixed order. parse_config of the
/// result reproduces the configuration.
std::string to_ini(const RunConfig& config);

}  // namespace necode
