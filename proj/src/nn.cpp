#include "necode/nn.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "json.hpp"
#include "necode/error.hpp"
#include "necode/image.hpp"
#include "necode/patches.hpp"
#include "necode/random.hpp"
#include "network.hpp"

namespace necode {

namespace {

constexpr char kModelMagic[4] = {'N', 'E', 'C', 'M'};
constexpr std::uint32_t kModelVersion = 1;

void require(bool ok, const std::string& what) {
  if (!ok) throw InvalidArgument(what);
}

}  // namespace

std::string_view to_string(Family f) {
  switch (f) {
    case Family::dense_front: return "dense-front";
    case Family::conv_front: return "conv-front";
    case Family::attention_front: return "attention-front";
  }
  return "?";
}

std::string_view to_string(Activation a) { return a == Activation::relu ? "relu" : "tanh"; }

std::string_view to_string(Split s) {
  switch (s) {
    case Split::probe: return "probe";
    case Split::train: return "train";
    case Split::eval: return "eval";
  }
  return "?";
}

Family parse_family(std::string_view s) {
  if (s == "dense-front" || s == "dense") return Family::dense_front;
  if (s == "conv-front" || s == "conv") return Family::conv_front;
  if (s == "attention-front" || s == "attention") return Family::attention_front;
  throw InvalidArgument("unknown model family '" + std::string(s) + "'");
}

Activation parse_activation(std::string_view s) {
  if (s == "relu") return Activation::relu;
  if (s == "tanh") return Activation::tanh;
  throw InvalidArgument("unknown activation '" + std::string(s) + "'");
}

Split parse_split(std::string_view s) {
  if (s == "probe") return Split::probe;
  if (s == "train") return Split::train;
  if (s == "eval") return Split::eval;
  throw InvalidArgument("unknown split '" + std::string(s) + "'");
}

void ModelSpec::validate() const {
  require(input.size() >= 1, "model input layout must be non-empty");
  require(classes >= 1, "class count must be at least 1");
  for (std::size_t h : hidden) require(h >= 1, "hidden widths must be at least 1");
  switch (family) {
    case Family::dense_front:
      break;
    case Family::conv_front: {
      require(conv.channels >= 1 && conv.pool >= 1, "conv channels and pool must be at least 1");
      const PatchGeometry g{conv.kernel, conv.stride, conv.padding};
      g.validate(input);
      require(g.out_height(input) >= conv.pool && g.out_width(input) >= conv.pool,
              "conv pool window larger than the feature map");
      break;
    }
    case Family::attention_front: {
      require(attention.model_dim >= 1, "attention model_dim must be at least 1");
      const PatchGeometry g{attention.patch, attention.patch, 0};
      g.validate(input);
      break;
    }
  }
}

std::size_t ModelSpec::parameter_count() const { return detail::Network(*this).parameter_count(); }

std::string ModelSpec::to_json() const {
  nlohmann::json j;
  j["family"] = std::string(to_string(family));
  j["input"] = {input.channels, input.height, input.width};
  j["classes"] = classes;
  j["activation"] = std::string(to_string(activation));
  j["hidden"] = hidden;
  j["conv"] = {{"channels", conv.channels}, {"kernel", conv.kernel}, {"stride", conv.stride},
               {"padding", conv.padding}, {"pool", conv.pool}};
  j["attention"] = {{"patch", attention.patch}, {"model_dim", attention.model_dim}};
  return j.dump();
}

ModelSpec ModelSpec::from_json(std::string_view text) {
  try {
    const auto j = nlohmann::json::parse(text);
    ModelSpec s;
    s.family = parse_family(j.at("family").get<std::string>());
    const auto in = j.at("input").get<std::vector<std::size_t>>();
    require(in.size() == 3, "model input layout needs three entries");
    s.input = {in[0], in[1], in[2]};
    s.classes = j.at("classes").get<std::size_t>();
    s.activation = parse_activation(j.at("activation").get<std::string>());
    s.hidden = j.at("hidden").get<std::vector<std::size_t>>();
    const auto& c = j.at("conv");
    s.conv = {c.at("channels"), c.at("kernel"), c.at("stride"), c.at("padding"), c.at("pool")};
    const auto& a = j.at("attention");
    s.attention = {a.at("patch"), a.at("model_dim")};
    s.validate();
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("malformed model spec: ") + e.what());
  }
}

std::vector<ParameterBlock> parameter_layout(const ModelSpec& spec) {
  return detail::Network(spec).layout();
}

DenseMatrix parameter_block(const TrainedModel& model, std::string_view name) {
  const detail::Network net(model.spec);
  const auto& b = net.block(name);
  const auto first = model.parameters.begin() + static_cast<std::ptrdiff_t>(b.offset);
  return DenseMatrix(b.rows, b.cols, Vector(first, first + static_cast<std::ptrdiff_t>(b.rows * b.cols)));
}

TrainedModel init_model(const ModelSpec& spec, std::uint64_t seed) {
  const detail::Network net(spec);
  TrainedModel m;
  m.spec = spec;
  m.seed = seed;
  m.parameters.assign(net.parameter_count(), 0.0);
  Rng rng(derive_seed(seed, "init"));
  net.initialize(m.parameters, rng);
  return m;
}

namespace {

void check_compatible(const ModelSpec& spec, const LabeledDataset& data) {
  if (spec.input.size() != data.shape.size()) {
    throw InvalidArgument("model expects inputs of " + spec.input.to_string() + ", dataset has " +
                          data.shape.to_string());
  }
  if (spec.classes < data.classes) {
    throw InvalidArgument("model has fewer classes than the dataset");
  }
}

// Softmax cross-entropy; writes p - onehot into grad and returns the loss.
double softmax_xent(std::span<const double> logits, int label, std::span<double> grad) {
  const double mx = *std::max_element(logits.begin(), logits.end());
  double total = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    grad[i] = std::exp(logits[i] - mx);
    total += grad[i];
  }
  for (double& g : grad) g /= total;
  const auto y = static_cast<std::size_t>(label);
  const double loss = -(logits[y] - mx - std::log(total));
  grad[y] -= 1.0;
  return loss;
}

}  // namespace

TrainedModel train(const ModelSpec& spec, const LabeledDataset& data, std::uint64_t seed,
                   const TrainOptions& options) {
  check_compatible(spec, data);
  require(options.batch_size >= 1, "batch size must be at least 1");
  require(options.learning_rate > 0.0, "learning rate must be positive");
  require(options.crop_augment <= std::min(spec.input.height, spec.input.width),
          "augmentation crop does not fit the input");
  TrainedModel model = init_model(spec, seed);
  model.dataset_fingerprint = data.fingerprint();
  if (options.epochs == 0) return model;

  const detail::Network net(spec);
  std::vector<std::size_t> order;
  for (std::size_t i = 0; i < data.size(); ++i)
    if (data.splits[i] == Split::train) order.push_back(i);
  require(!order.empty(), "training split is empty");

  Rng rng(derive_seed(seed, "shuffle"));
  Rng augment_rng(derive_seed(seed, "augment"));
  const Shape& in = spec.input;
  const std::size_t crop_size = options.crop_augment;
  Vector augmented;
  Vector velocity(model.parameters.size(), 0.0);
  Vector grad(model.parameters.size(), 0.0);
  Vector dlogits(spec.classes);
  detail::Trace trace;

  for (std::size_t epoch = 0; epoch < options.epochs; ++epoch) {
    rng.shuffle(order);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += options.batch_size) {
      const std::size_t end = std::min(order.size(), start + options.batch_size);
      std::fill(grad.begin(), grad.end(), 0.0);
      for (std::size_t k = start; k < end; ++k) {
        const std::size_t i = order[k];
        std::span<const double> x = data.inputs.row(i);
        if (crop_size > 0 && augment_rng.uniform() < 0.5) {
          const std::size_t top = augment_rng.below(in.height - crop_size + 1);
          const std::size_t left = augment_rng.below(in.width - crop_size + 1);
          augmented = resize_bilinear(crop(x, in, top, left, crop_size, crop_size),
                                      {in.channels, crop_size, crop_size}, in.height, in.width);
          x = augmented;
        }
        net.forward(model.parameters, x, trace);
        epoch_loss += softmax_xent(trace.logits, data.labels[i], dlogits);
        net.backward(model.parameters, trace, dlogits, grad);
      }
      const double inv = 1.0 / static_cast<double>(end - start);
      for (std::size_t p = 0; p < grad.size(); ++p) {
        velocity[p] = options.momentum * velocity[p] + grad[p] * inv;
        model.parameters[p] -= options.learning_rate * velocity[p];
      }
    }
    if (!std::isfinite(epoch_loss)) {
      throw NumericalError("training diverged: loss is not finite in epoch " +
                           std::to_string(epoch + 1) + " (learning rate " +
                           std::to_string(options.learning_rate) + ")");
    }
  }
  if (!std::all_of(model.parameters.begin(), model.parameters.end(),
                   [](double x) { return std::isfinite(x); })) {
    throw NumericalError("training produced non-finite parameters");
  }
  return model;
}

Prediction predict(const TrainedModel& model, const DenseMatrix& batch) {
  const detail::Network net(model.spec);
  if (batch.rows() > 0 && batch.cols() != model.spec.input.size()) {
    throw InvalidArgument("batch rows have " + std::to_string(batch.cols()) +
                          " values, model expects " + std::to_string(model.spec.input.size()));
  }
  Prediction out;
  out.logits = DenseMatrix(batch.rows(), model.spec.classes);
  out.classes.resize(batch.rows());
  detail::Trace trace;
  for (std::size_t i = 0; i < batch.rows(); ++i) {
    net.forward(model.parameters, batch.row(i), trace);
    std::copy(trace.logits.begin(), trace.logits.end(), out.logits.row(i).begin());
    out.classes[i] = static_cast<int>(std::max_element(trace.logits.begin(), trace.logits.end()) -
                                      trace.logits.begin());
  }
  return out;
}

double accuracy(const TrainedModel& model, const DenseMatrix& inputs, std::span<const int> labels) {
  require(inputs.rows() == labels.size(), "accuracy: input and label counts differ");
  require(!labels.empty(), "accuracy: empty split");
  const auto pred = predict(model, inputs);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) correct += pred.classes[i] == labels[i];
  return static_cast<double>(correct) / static_cast<double>(labels.size());
}

double accuracy(const TrainedModel& model, const LabeledDataset& data, Split split) {
  const Batch b = data.subset(split);
  return accuracy(model, b.inputs, b.labels);
}

DenseMatrix first_stage_response(const TrainedModel& model, std::span<const double> x,
                                 bool embedding_only) {
  return detail::Network(model.spec).first_stage(model.parameters, x, embedding_only);
}

Bytes serialize_model(const TrainedModel& model) {
  ByteWriter w;
  w.raw({reinterpret_cast<const std::uint8_t*>(kModelMagic), 4});
  w.u32(kModelVersion);
  w.text(model.spec.to_json());
  w.u64(model.seed);
  w.u64(model.dataset_fingerprint);
  w.u64(model.parameters.size());
  w.f64s(model.parameters);
  w.checksum_trailer();
  return w.bytes();
}

TrainedModel deserialize_model(std::span<const std::uint8_t> bytes) {
  const auto payload = verify_checksum_trailer(bytes, "model container");
  ByteReader r(payload);
  const auto magic = r.raw(4);
  if (!std::equal(magic.begin(), magic.end(), kModelMagic)) throw IoError("not a model container");
  const std::uint32_t version = r.u32();
  if (version != kModelVersion) {
    throw IoError("unsupported model container version " + std::to_string(version));
  }
  TrainedModel m;
  try {
    m.spec = ModelSpec::from_json(r.text());
  } catch (const InvalidArgument& e) {
    throw IoError(std::string("model container holds an invalid spec: ") + e.what());
  }
  m.seed = r.u64();
  m.dataset_fingerprint = r.u64();
  const std::uint64_t count = r.u64();
  if (count != m.spec.parameter_count()) throw IoError("parameter count does not match the model spec");
  m.parameters = r.f64s(count);
  if (r.remaining() != 0) throw IoError("trailing bytes in model container");
  if (!std::all_of(m.parameters.begin(), m.parameters.end(), [](double x) { return std::isfinite(x); }))
    throw IoError("model container holds non-finite parameters");
  return m;
}

std::uint64_t TrainedModel::checksum() const { return fnv1a64(serialize_model(*this)); }

void save_model(const TrainedModel& model, const std::filesystem::path& path) {
  write_file_atomic(path, serialize_model(model));
}

TrainedModel load_model(const std::filesystem::path& path) { return deserialize_model(read_file(path)); }

}  // namespace necode
