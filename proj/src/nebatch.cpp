#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <string>

#include <zlib.h>

#include "json.hpp"
#include "necode/error.hpp"
#include "necode/recoder.hpp"

namespace necode {

namespace {

constexpr char kBatchMagic[4] = {'N', 'E', 'C', 'B'};
constexpr std::uint32_t kBatchVersion = 1;

nlohmann::json number_or_inf(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  return v;
}

double read_number_or_inf(const nlohmann::json& j) {
  if (j.is_string()) {
    const auto s = j.get<std::string>();
    if (s == "inf") return std::numeric_limits<double>::infinity();
    if (s == "-inf") return -std::numeric_limits<double>::infinity();
    throw IoError("unexpected string for a number: " + s);
  }
  return j.get<double>();
}

void put_u32_be(Bytes& out, std::uint32_t v) {
  for (int shift = 24; shift >= 0; shift -= 8) out.push_back(static_cast<std::uint8_t>(v >> shift));
}

void put_chunk(Bytes& out, const char type[4], const Bytes& data) {
  put_u32_be(out, static_cast<std::uint32_t>(data.size()));
  const std::size_t start = out.size();
  out.insert(out.end(), type, type + 4);
  out.insert(out.end(), data.begin(), data.end());
  const uLong crc = crc32(0L, out.data() + start, static_cast<uInt>(out.size() - start));
  put_u32_be(out, static_cast<std::uint32_t>(crc));
}

}  // namespace

std::string provenance_json(const Provenance& p) {
  const RecodingConfig& c = p.config;
  nlohmann::json cfg = {
      {"tau", c.tau},
      {"sigma", c.sigma},
      {"lambda", c.lambda},
      {"seed", c.seed},
      {"target_psnr_db", c.target_psnr_db ? number_or_inf(*c.target_psnr_db) : nlohmann::json()},
      {"z_mode", std::string(to_string(c.z_mode))},
      {"criterion", std::string(to_string(c.criterion))},
      {"clip", std::string(to_string(c.clip))},
      {"normalize", c.normalize},
      {"extraction", std::string(to_string(c.extraction))},
  };
  nlohmann::json j = {
      {"model_checksum", p.model_checksum},
      {"model_family", p.model_family},
      {"rank", p.rank},
      {"smallest_singular", p.smallest_singular},
      {"quantized_export", p.quantized_export},
      {"config", cfg},
  };
  return j.dump();
}

Provenance provenance_from_json(std::string_view text) {
  try {
    const auto j = nlohmann::json::parse(text);
    Provenance p;
    p.model_checksum = j.at("model_checksum").get<std::uint64_t>();
    p.model_family = j.at("model_family").get<std::string>();
    p.rank = j.at("rank").get<std::size_t>();
    p.smallest_singular = j.at("smallest_singular").get<double>();
    p.quantized_export = j.at("quantized_export").get<bool>();
    const auto& c = j.at("config");
    p.config.tau = c.at("tau").get<double>();
    p.config.sigma = c.at("sigma").get<double>();
    p.config.lambda = c.at("lambda").get<double>();
    p.config.seed = c.at("seed").get<std::uint64_t>();
    if (!c.at("target_psnr_db").is_null()) p.config.target_psnr_db = read_number_or_inf(c.at("target_psnr_db"));
    p.config.z_mode = parse_z_mode(c.at("z_mode").get<std::string>());
    p.config.criterion = parse_criterion(c.at("criterion").get<std::string>());
    p.config.clip = parse_clip_mode(c.at("clip").get<std::string>());
    p.config.normalize = c.at("normalize").get<bool>();
    p.config.extraction = parse_extraction_target(c.at("extraction").get<std::string>());
    return p;
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("malformed provenance record: ") + e.what());
  } catch (const InvalidArgument& e) {
    throw IoError(std::string("malformed provenance record: ") + e.what());
  }
}

Bytes serialize_batch(const NEBatch& b) {
  ByteWriter w;
  w.raw({reinterpret_cast<const std::uint8_t*>(kBatchMagic), 4});
  w.u32(kBatchVersion);
  w.text(provenance_json(b.provenance));
  w.u64(b.layout.channels);
  w.u64(b.layout.height);
  w.u64(b.layout.width);
  w.u64(b.size());
  w.f64s(b.originals.data());
  w.f64s(b.recoded.data());
  for (int l : b.labels) w.u32(static_cast<std::uint32_t>(l));
  for (const auto& p : b.perturbations) {
    w.u64(p.z.rows());
    w.u64(p.z.cols());
    w.f64s(p.z.data());
    w.f64s(p.delta);
    w.f64(p.realized_psnr_db);
  }
  w.checksum_trailer();
  return w.bytes();
}

NEBatch deserialize_batch(std::span<const std::uint8_t> bytes) {
  const auto payload = verify_checksum_trailer(bytes, "recoded batch");
  ByteReader r(payload);
  const auto magic = r.raw(4);
  if (!std::equal(magic.begin(), magic.end(), kBatchMagic)) throw IoError("not a recoded batch container");
  const std::uint32_t version = r.u32();
  if (version != kBatchVersion) throw IoError("unsupported batch container version " + std::to_string(version));
  NEBatch b;
  b.provenance = provenance_from_json(r.text());
  b.layout.channels = r.u64();
  b.layout.height = r.u64();
  b.layout.width = r.u64();
  const std::size_t n = r.u64();
  const std::size_t dim = b.layout.size();
  if (dim == 0 || n > r.remaining() / (16 * dim)) throw IoError("batch header is inconsistent");
  b.originals = DenseMatrix(n, dim, r.f64s(n * dim));
  b.recoded = DenseMatrix(n, dim, r.f64s(n * dim));
  for (std::size_t i = 0; i < n; ++i) b.labels.push_back(static_cast<int>(r.u32()));
  b.perturbations.resize(n);
  for (auto& p : b.perturbations) {
    const std::size_t rows = r.u64();
    const std::size_t cols = r.u64();
    if (rows != 0 && cols > r.remaining() / 8 / rows) throw IoError("perturbation record is inconsistent");
    p.z = DenseMatrix(rows, cols, r.f64s(rows * cols));
    p.delta = r.f64s(dim);
    p.realized_psnr_db = r.f64();
  }
  if (r.remaining() != 0) throw IoError("trailing bytes in batch container");
  return b;
}

void save_batch(const NEBatch& batch, const std::filesystem::path& path) {
  write_file_atomic(path, serialize_batch(batch));
}

NEBatch load_batch(const std::filesystem::path& path) { return deserialize_batch(read_file(path)); }

Bytes encode_png(std::span<const double> image, const Shape& layout) {
  if (image.size() != layout.size()) throw InvalidArgument("png: image does not match its layout");
  const std::size_t width = layout.width;
  const std::size_t height = layout.height * layout.channels;
  Bytes raw;
  raw.reserve(height * (width + 1));
  for (std::size_t y = 0; y < height; ++y) {
    raw.push_back(0);  // filter: none
    for (std::size_t x = 0; x < width; ++x) {
      const double v = std::clamp(image[y * width + x], 0.0, 1.0);
      raw.push_back(static_cast<std::uint8_t>(std::lround(v * 255.0)));
    }
  }
  uLongf packed_size = compressBound(static_cast<uLong>(raw.size()));
  Bytes packed(packed_size);
  if (compress2(packed.data(), &packed_size, raw.data(), static_cast<uLong>(raw.size()), 9) != Z_OK) {
    throw IoError("png: compression failed");
  }
  packed.resize(packed_size);

  Bytes out = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
  Bytes header;
  put_u32_be(header, static_cast<std::uint32_t>(width));
  put_u32_be(header, static_cast<std::uint32_t>(height));
  header.insert(header.end(), {8, 0, 0, 0, 0});  // 8-bit grayscale
  put_chunk(out, "IHDR", header);
  put_chunk(out, "IDAT", packed);
  put_chunk(out, "IEND", {});
  return out;
}

void export_png(NEBatch& batch, const std::filesystem::path& dir, const std::string& prefix) {
  std::filesystem::create_directories(dir);
  for (std::size_t i = 0; i < batch.size(); ++i) {
    write_file_atomic(dir / (prefix + std::to_string(i) + ".png"),
                      encode_png(batch.recoded.row(i), batch.layout));
  }
  batch.provenance.quantized_export = true;
}

}  // namespace necode
