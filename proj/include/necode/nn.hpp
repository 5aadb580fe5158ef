#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "necode/binary_io.hpp"
#include "necode/linalg.hpp"
#include "necode/shape.hpp"

namespace necode {

enum class Family { dense_front, conv_front, attention_front };
enum class Activation { relu, tanh };
enum class Split { probe, train, eval };

std::string_view to_string(Family f);
std::string_view to_string(Activation a);
std::string_view to_string(Split s);
Family parse_family(std::string_view s);
Activation parse_activation(std::string_view s);
Split parse_split(std::string_view s);

struct ConvSettings {
  std::size_t channels = 8;
  std::size_t kernel = 4;
  std::size_t stride = 4;
  std::size_t padding = 0;
  std::size_t pool = 1;  // max-pool window and stride; 1 disables pooling

  bool operator==(const ConvSettings&) const = default;
};

struct AttentionSettings {
  std::size_t patch = 4;
  std::size_t model_dim = 8;

  bool operator==(const AttentionSettings&) const = default;
};

/// Architecture of a small classifier.
///
/// dense-front: `hidden` lists the widths of the fully connected layers; the
/// first entry is the first linear stage. conv-front and attention-front:
/// the front stage is described by `conv` / `attention` and `hidden` lists the
/// head's fully connected widths (possibly empty).
struct ModelSpec {
  Family family = Family::dense_front;
  Shape input{1, 16, 16};
  std::size_t classes = 10;
  Activation activation = Activation::relu;
  std::vector<std::size_t> hidden{32};
  ConvSettings conv;
  AttentionSettings attention;

  /// Throws InvalidArgument when a dimension is zero or the front does not
  /// fit the input.
  void validate() const;
  std::size_t parameter_count() const;

  std::string to_json() const;
  static ModelSpec from_json(std::string_view text);

  bool operator==(const ModelSpec&) const = default;
};

struct TrainedModel {
  ModelSpec spec;
  Vector parameters;
  std::uint64_t seed = 0;
  std::uint64_t dataset_fingerprint = 0;

  /// Hash of the serialized container.
  std::uint64_t checksum() const;
};

/// Named slice of the flat parameter vector, stored row-major.
struct ParameterBlock {
  std::string name;
  std::size_t offset = 0;
  std::size_t rows = 0;
  std::size_t cols = 0;
};

/// Parameter blocks in storage order. Names: "fc<i>.weight", "fc<i>.bias",
/// "head.weight", "head.bias", "conv.weight", "conv.bias", "embed.weight",
/// "embed.bias", "position", "qkv.weight", "qkv.bias".
std::vector<ParameterBlock> parameter_layout(const ModelSpec& spec);
DenseMatrix parameter_block(const TrainedModel& model, std::string_view name);

struct Batch {
  DenseMatrix inputs;  // one sample per row, native layout flattened
  std::vector<int> labels;

  std::size_t size() const { return labels.size(); }
};

struct LabeledDataset {
  std::string kind;
  Shape shape;
  std::size_t classes = 0;
  DenseMatrix inputs;
  std::vector<int> labels;
  std::vector<Split> splits;

  std::size_t size() const { return labels.size(); }
  std::size_t count(Split s) const;
  Batch subset(Split s) const;
  /// FNV-1a over the raw input, label and split bytes.
  std::uint64_t fingerprint() const;
};

struct DatasetSizes {
  std::size_t probe = 200;
  std::size_t train = 1000;
  std::size_t eval = 500;
};

struct BlobOptions {
  std::size_t classes = 2;
  std::size_t dim = 64;
  double separation = 3.0;
  double sigma = 0.5;
};

/// "gaussian-blobs" or "mini-digits". Blob inputs are unbounded Gaussian
/// draws; digit inputs are 16×16 images in [0, 1].
LabeledDataset make_dataset(std::string_view kind, std::uint64_t seed, const DatasetSizes& sizes,
                            const BlobOptions& blobs = {});
/// Mean of blob class c: ±separation·e₁ for two classes, separation·e_c otherwise.
Vector blob_mean(const BlobOptions& blobs, std::size_t c);

struct TrainOptions {
  std::size_t epochs = 20;
  double learning_rate = 0.05;
  double momentum = 0.9;
  std::size_t batch_size = 32;
  /// When non-zero, half of the samples in every epoch are replaced by a
  /// random crop of this size resized back to the input size.
  std::size_t crop_augment = 0;
};

TrainedModel init_model(const ModelSpec& spec, std::uint64_t seed);
/// Minibatch SGD with momentum on the train split. Throws NumericalError when
/// the loss becomes non-finite.
TrainedModel train(const ModelSpec& spec, const LabeledDataset& data, std::uint64_t seed,
                   const TrainOptions& options = {});

struct Prediction {
  std::vector<int> classes;
  DenseMatrix logits;
};

Prediction predict(const TrainedModel& model, const DenseMatrix& batch);
double accuracy(const TrainedModel& model, const DenseMatrix& inputs, std::span<const int> labels);
double accuracy(const TrainedModel& model, const LabeledDataset& data, Split split);

/// Output of the first linear stage, bias included and before any
/// activation, taken from the forward pass. Rows are output channels and
/// columns positions (one column for dense-front). For attention-front the
/// stage is the QKV projection of the embedded tokens, or the token embedding
/// itself when `embedding_only` is set.
DenseMatrix first_stage_response(const TrainedModel& model, std::span<const double> x,
                                 bool embedding_only = false);

Bytes serialize_model(const TrainedModel& model);
TrainedModel deserialize_model(std::span<const std::uint8_t> bytes);
void save_model(const TrainedModel& model, const std::filesystem::path& path);
TrainedModel load_model(const std::filesystem::path& path);

}  // namespace necode
