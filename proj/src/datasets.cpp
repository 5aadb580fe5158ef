#include <algorithm>
#include <charconv>
#include <string>
#include <string_view>

#include "necode/binary_io.hpp"
#include "necode/error.hpp"
#include "necode/image.hpp"
#include "necode/nn.hpp"
#include "necode/random.hpp"

namespace necode {

namespace detail {
extern const std::string_view kMiniDigitsCsv;
}

namespace {

constexpr std::uint64_t kDigitsChecksum = 0x30da69b4c62d36a9ULL;
constexpr std::size_t kDigitsSide = 8;
constexpr double kDigitsLevels = 16.0;

struct DigitCorpus {
  DenseMatrix images;  // 16×16 per row, in [0, 1]
  std::vector<int> labels;
};

DigitCorpus parse_digits() {
  const std::string_view csv = detail::kMiniDigitsCsv;
  if (fnv1a64(csv) != kDigitsChecksum) throw IoError("bundled digit corpus fails its checksum");

  const Shape small{1, kDigitsSide, kDigitsSide};
  std::vector<double> rows;
  std::vector<int> labels;
  std::size_t pos = csv.find('\n');  // skip header
  if (pos == std::string_view::npos) throw IoError("digit corpus has no rows");
  ++pos;
  Vector pixels(small.size());
  while (pos < csv.size()) {
    std::size_t end = csv.find('\n', pos);
    if (end == std::string_view::npos) end = csv.size();
    const std::string_view line = csv.substr(pos, end - pos);
    pos = end + 1;
    if (line.empty()) continue;
    std::vector<int> fields;
    std::size_t p = 0;
    while (p <= line.size()) {
      std::size_t q = line.find(',', p);
      if (q == std::string_view::npos) q = line.size();
      int v = 0;
      const auto res = std::from_chars(line.data() + p, line.data() + q, v);
      if (res.ec != std::errc()) throw IoError("malformed digit corpus row");
      fields.push_back(v);
      p = q + 1;
    }
    if (fields.size() != 1 + small.size()) throw IoError("digit corpus row has the wrong width");
    labels.push_back(fields[0]);
    for (std::size_t i = 0; i < small.size(); ++i) pixels[i] = fields[i + 1] / kDigitsLevels;
    const Vector big = resize_bilinear(pixels, small, 2 * kDigitsSide, 2 * kDigitsSide);
    rows.insert(rows.end(), big.begin(), big.end());
  }
  DigitCorpus c;
  const std::size_t dim = 4 * kDigitsSide * kDigitsSide;
  c.images = DenseMatrix(labels.size(), dim, std::move(rows));
  c.labels = std::move(labels);
  return c;
}

const DigitCorpus& digit_corpus() {
  static const DigitCorpus corpus = parse_digits();
  return corpus;
}

std::vector<Split> split_tags(const DatasetSizes& sizes) {
  std::vector<Split> tags;
  tags.insert(tags.end(), sizes.probe, Split::probe);
  tags.insert(tags.end(), sizes.train, Split::train);
  tags.insert(tags.end(), sizes.eval, Split::eval);
  return tags;
}

}  // namespace

Vector blob_mean(const BlobOptions& blobs, std::size_t c) {
  if (c >= blobs.classes) throw InvalidArgument("blob class out of range");
  Vector mean(blobs.dim, 0.0);
  if (blobs.classes == 2) {
    mean[0] = c == 0 ? blobs.separation : -blobs.separation;
  } else {
    mean[c] = blobs.separation;
  }
  return mean;
}

LabeledDataset make_dataset(std::string_view kind, std::uint64_t seed, const DatasetSizes& sizes,
                            const BlobOptions& blobs) {
  if (sizes.probe == 0 || sizes.train == 0 || sizes.eval == 0) {
    throw InvalidArgument("every split needs at least one sample");
  }
  const std::size_t total = sizes.probe + sizes.train + sizes.eval;
  LabeledDataset d;
  d.kind = std::string(kind);
  d.splits = split_tags(sizes);

  if (kind == "gaussian-blobs") {
    if (blobs.classes < 2 || blobs.dim < 1) throw InvalidArgument("blobs need ≥ 2 classes and dim ≥ 1");
    if (blobs.classes > 2 && blobs.dim < blobs.classes) {
      throw InvalidArgument("blob dimension must be at least the class count");
    }
    if (!(blobs.sigma >= 0.0)) throw InvalidArgument("blob sigma must be non-negative");
    d.shape = {1, 1, blobs.dim};
    d.classes = blobs.classes;
    d.inputs = DenseMatrix(total, blobs.dim);
    Rng rng(derive_seed(seed, "blobs"));
    std::vector<Vector> means;
    for (std::size_t c = 0; c < blobs.classes; ++c) means.push_back(blob_mean(blobs, c));
    for (std::size_t i = 0; i < total; ++i) {
      const auto c = static_cast<std::size_t>(rng.below(blobs.classes));
      d.labels.push_back(static_cast<int>(c));
      auto row = d.inputs.row(i);
      for (std::size_t j = 0; j < blobs.dim; ++j) row[j] = means[c][j] + blobs.sigma * rng.normal();
    }
    return d;
  }

  if (kind == "mini-digits") {
    const DigitCorpus& corpus = digit_corpus();
    if (total > corpus.labels.size()) {
      throw InvalidArgument("mini-digits has " + std::to_string(corpus.labels.size()) +
                            " samples, " + std::to_string(total) + " requested");
    }
    std::vector<std::size_t> order(corpus.labels.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng(derive_seed(seed, "digits-split"));
    rng.shuffle(order);
    d.shape = {1, 2 * kDigitsSide, 2 * kDigitsSide};
    d.classes = 10;
    d.inputs = DenseMatrix(total, d.shape.size());
    for (std::size_t i = 0; i < total; ++i) {
      const auto src = corpus.images.row(order[i]);
      std::copy(src.begin(), src.end(), d.inputs.row(i).begin());
      d.labels.push_back(corpus.labels[order[i]]);
    }
    return d;
  }

  throw InvalidArgument("unknown dataset kind '" + std::string(kind) + "'");
}

std::size_t LabeledDataset::count(Split s) const {
  return static_cast<std::size_t>(std::count(splits.begin(), splits.end(), s));
}

Batch LabeledDataset::subset(Split s) const {
  Batch b;
  const std::size_t n = count(s);
  b.inputs = DenseMatrix(n, shape.size());
  std::size_t k = 0;
  for (std::size_t i = 0; i < size(); ++i) {
    if (splits[i] != s) continue;
    const auto src = inputs.row(i);
    std::copy(src.begin(), src.end(), b.inputs.row(k++).begin());
    b.labels.push_back(labels[i]);
  }
  return b;
}

std::uint64_t LabeledDataset::fingerprint() const {
  std::uint64_t h = hash_doubles(inputs.data());
  ByteWriter w;
  for (int l : labels) w.u32(static_cast<std::uint32_t>(l));
  for (Split s : splits) w.u32(static_cast<std::uint32_t>(s));
  return fnv1a64(w.bytes(), h);
}

}  // namespace necode
