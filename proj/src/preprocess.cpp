#include "necode/preprocess.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "necode/error.hpp"
#include "necode/image.hpp"
#include "necode/parallel.hpp"
#include "necode/patches.hpp"
#include "necode/random.hpp"

namespace necode {

std::string_view to_string(PreprocessKind k) {
  switch (k) {
    case PreprocessKind::none: return "none";
    case PreprocessKind::resize: return "resize";
    case PreprocessKind::center_crop: return "center-crop";
    case PreprocessKind::random_crop: return "random-crop";
    case PreprocessKind::jpeg_like: return "jpeg-like";
    case PreprocessKind::blur: return "blur";
  }
  return "?";
}

PreprocessKind parse_preprocess_kind(std::string_view s) {
  for (PreprocessKind k : {PreprocessKind::none, PreprocessKind::resize, PreprocessKind::center_crop,
                           PreprocessKind::random_crop, PreprocessKind::jpeg_like, PreprocessKind::blur}) {
    if (s == to_string(k)) return k;
  }
  throw InvalidArgument("unknown preprocessing '" + std::string(s) + "'");
}

void PreprocessOp::validate(const Shape& layout) const {
  switch (kind) {
    case PreprocessKind::resize:
      if (resize_to == 0) throw InvalidArgument("resize target must be positive");
      break;
    case PreprocessKind::center_crop:
    case PreprocessKind::random_crop:
      if (crop_size == 0 || crop_size > layout.height || crop_size > layout.width) {
        throw InvalidArgument("crop " + std::to_string(crop_size) + " does not fit a " + layout.to_string() +
                              " input");
      }
      break;
    case PreprocessKind::jpeg_like:
      if (quality < 1 || quality > 100) throw InvalidArgument("quality must be in [1, 100]");
      break;
    case PreprocessKind::blur:
      if (!(blur_sigma > 0.0)) throw InvalidArgument("blur sigma must be positive");
      break;
    case PreprocessKind::none: break;
  }
}

std::string PreprocessOp::label() const {
  const std::string base(to_string(kind));
  switch (kind) {
    case PreprocessKind::resize: return base + "-" + std::to_string(resize_to);
    case PreprocessKind::center_crop:
    case PreprocessKind::random_crop: return base + "-" + std::to_string(crop_size);
    case PreprocessKind::jpeg_like: return base + "-q" + std::to_string(quality);
    case PreprocessKind::blur: {
      char buf[32];
      std::snprintf(buf, sizeof buf, "-%g", blur_sigma);
      return base + buf;
    }
    case PreprocessKind::none: break;
  }
  return base;
}

std::vector<PreprocessOp> default_preprocess_suite(std::uint64_t seed) {
  std::vector<PreprocessOp> ops;
  for (PreprocessKind k : {PreprocessKind::resize, PreprocessKind::center_crop, PreprocessKind::random_crop,
                           PreprocessKind::jpeg_like, PreprocessKind::blur}) {
    PreprocessOp op;
    op.kind = k;
    op.seed = seed;
    ops.push_back(op);
  }
  return ops;
}

PreprocessResult apply_preprocess(const DenseMatrix& images, const Shape& layout, const PreprocessOp& op) {
  op.validate(layout);
  if (images.cols() != layout.size()) throw InvalidArgument("images do not match the layout");
  PreprocessResult out;
  out.images = DenseMatrix(images.rows(), images.cols());
  const bool cropping = op.kind == PreprocessKind::center_crop || op.kind == PreprocessKind::random_crop;
  if (cropping) out.offsets.resize(images.rows());

  parallel_for(images.rows(), [&](std::size_t i) {
    const auto x = images.row(i);
    Vector y;
    switch (op.kind) {
      case PreprocessKind::none: y.assign(x.begin(), x.end()); break;
      case PreprocessKind::resize: {
        const Shape small{layout.channels, op.resize_to, op.resize_to};
        y = resize_bilinear(resize_bilinear(x, layout, op.resize_to, op.resize_to), small, layout.height,
                            layout.width);
        break;
      }
      case PreprocessKind::center_crop:
      case PreprocessKind::random_crop: {
        std::size_t top = (layout.height - op.crop_size) / 2;
        std::size_t left = (layout.width - op.crop_size) / 2;
        if (op.kind == PreprocessKind::random_crop) {
          Rng rng(derive_seed(op.seed, i));
          top = rng.below(layout.height - op.crop_size + 1);
          left = rng.below(layout.width - op.crop_size + 1);
        }
        out.offsets[i] = {top, left};
        const Shape window{layout.channels, op.crop_size, op.crop_size};
        y = resize_bilinear(crop(x, layout, top, left, op.crop_size, op.crop_size), window, layout.height,
                            layout.width);
        break;
      }
      case PreprocessKind::jpeg_like: y = dct_quantize(x, layout, op.quality); break;
      case PreprocessKind::blur: y = gaussian_blur(x, layout, op.blur_sigma); break;
    }
    std::copy(y.begin(), y.end(), out.images.row(i).begin());
  });
  return out;
}

namespace {

Vector column_mean(const DenseMatrix& samples) {
  Vector mean(samples.cols(), 0.0);
  for (std::size_t r = 0; r < samples.rows(); ++r)
    for (std::size_t c = 0; c < samples.cols(); ++c) mean[c] += samples(r, c);
  for (double& m : mean) m /= static_cast<double>(std::max<std::size_t>(1, samples.rows()));
  return mean;
}

void check_rank(const DenseMatrix& samples, std::size_t rank) {
  if (samples.rows() == 0) throw InvalidArgument("attacker needs public samples");
  if (rank == 0 || rank > samples.cols()) {
    throw InvalidArgument("attacker rank must be in [1, " + std::to_string(samples.cols()) + "]");
  }
}

}  // namespace

ProjectionBasis pca_attacker(const DenseMatrix& public_samples, std::size_t rank) {
  check_rank(public_samples, rank);
  const CovarianceSpectrum c = pca(public_samples);
  return {"pca", column_mean(public_samples), c.eigvecs.columns(c.eigvecs.cols() - rank, rank), true};
}

ProjectionBasis random_attacker(const DenseMatrix& public_samples, std::size_t rank, std::uint64_t seed) {
  check_rank(public_samples, rank);
  const std::size_t n = public_samples.cols();
  Rng rng(seed);
  DenseMatrix g(n, rank);
  for (double& v : g.data()) v = rng.normal();
  // Gram-Schmidt twice for orthonormality to round-off.
  for (std::size_t j = 0; j < rank; ++j) {
    Vector col = g.column(j);
    for (int pass = 0; pass < 2; ++pass) {
      for (std::size_t p = 0; p < j; ++p) {
        const Vector q = g.column(p);
        const double d = dot(q, col);
        for (std::size_t r = 0; r < n; ++r) col[r] -= d * q[r];
      }
    }
    const double len = norm2(col);
    for (double& v : col) v /= len;
    g.set_column(j, col);
  }
  return {"random", column_mean(public_samples), std::move(g), true};
}

DenseMatrix project_back(const DenseMatrix& images, const ProjectionBasis& b) {
  const std::size_t n = b.basis.rows();
  if (images.rows() > 0 && images.cols() != n) throw InvalidArgument("images do not match the basis");
  DenseMatrix out(images.rows(), n);
  for (std::size_t i = 0; i < images.rows(); ++i) {
    Vector centered(n);
    for (std::size_t j = 0; j < n; ++j) centered[j] = images(i, j) - b.mean[j];
    const Vector coeff = transpose_multiply(b.basis, centered);
    const Vector part = b.basis * coeff;
    for (std::size_t j = 0; j < n; ++j)
      out(i, j) = b.keep ? b.mean[j] + part[j] : images(i, j) - part[j];
  }
  return out;
}

DenseMatrix remove_insensitive_component(const DenseMatrix& images, const FirstLayerOperator& op,
                                         const InsensitiveSubspace& s) {
  DenseMatrix out(images.rows(), images.cols());
  const bool patches = op.per_patch() && op.lift != LiftKind::identity;
  for (std::size_t i = 0; i < images.rows(); ++i) {
    const auto x = images.row(i);
    const DenseMatrix cols =
        patches ? unfold(x, op.layout, op.geometry) : DenseMatrix(x.size(), 1, Vector(x.begin(), x.end()));
    if (cols.rows() != s.dimension()) throw InvalidArgument("subspace does not match the operator");
    const DenseMatrix part = s.basis * transpose_multiply(s.basis, cols);
    const Vector delta = patches ? fold_delta(part, op.layout, op.geometry)
                                 : Vector(part.data().begin(), part.data().end());
    for (std::size_t j = 0; j < x.size(); ++j) out(i, j) = x[j] - delta[j];
  }
  return out;
}

std::string_view to_string(DenoiserMode m) { return m == DenoiserMode::noise2noise ? "noise2noise" : "noise2clean"; }

DenoiserMode parse_denoiser_mode(std::string_view s) {
  if (s == "noise2noise") return DenoiserMode::noise2noise;
  if (s == "noise2clean") return DenoiserMode::noise2clean;
  throw InvalidArgument("unknown denoiser mode '" + std::string(s) + "'");
}

namespace {

struct DenoiserView {
  std::size_t cin, hidden, taps1, taps2;
  std::size_t w1, b1, w2, b2, total;
};

DenoiserView view_of(const Denoiser& d) {
  DenoiserView v{};
  v.cin = d.layout.channels;
  v.hidden = d.channels;
  v.taps1 = v.cin * d.kernel * d.kernel;
  v.taps2 = v.hidden * d.kernel * d.kernel;
  v.w1 = 0;
  v.b1 = v.w1 + v.hidden * v.taps1;
  v.w2 = v.b1 + v.hidden;
  v.b2 = v.w2 + v.cin * v.taps2;
  v.total = v.b2 + v.cin;
  return v;
}

PatchGeometry same_geometry(std::size_t kernel) { return {kernel, 1, kernel / 2}; }

DenseMatrix block(const Vector& p, std::size_t offset, std::size_t rows, std::size_t cols) {
  return DenseMatrix(rows, cols, Vector(p.begin() + static_cast<std::ptrdiff_t>(offset),
                                        p.begin() + static_cast<std::ptrdiff_t>(offset + rows * cols)));
}

struct Forward {
  DenseMatrix u1, pre, u2;
  Vector y;
};

Forward forward(const Denoiser& d, std::span<const double> x) {
  const DenoiserView v = view_of(d);
  const PatchGeometry g = same_geometry(d.kernel);
  const std::size_t pixels = d.layout.height * d.layout.width;
  Forward f;
  f.u1 = unfold(x, d.layout, g);
  f.pre = block(d.parameters, v.w1, v.hidden, v.taps1) * f.u1;
  Vector act(v.hidden * pixels);
  for (std::size_t c = 0; c < v.hidden; ++c)
    for (std::size_t p = 0; p < pixels; ++p) {
      f.pre(c, p) += d.parameters[v.b1 + c];
      act[c * pixels + p] = std::max(0.0, f.pre(c, p));
    }
  f.u2 = unfold(act, {v.hidden, d.layout.height, d.layout.width}, g);
  const DenseMatrix out = block(d.parameters, v.w2, v.cin, v.taps2) * f.u2;
  f.y.assign(x.begin(), x.end());
  for (std::size_t c = 0; c < v.cin; ++c)
    for (std::size_t p = 0; p < pixels; ++p) f.y[c * pixels + p] += out(c, p) + d.parameters[v.b2 + c];
  return f;
}

}  // namespace

Vector Denoiser::apply(std::span<const double> x) const {
  if (x.size() != layout.size()) throw InvalidArgument("image does not match the denoiser layout");
  return forward(*this, x).y;
}

DenseMatrix Denoiser::apply(const DenseMatrix& images) const {
  DenseMatrix out(images.rows(), images.cols());
  parallel_for(images.rows(), [&](std::size_t i) {
    const Vector y = apply(images.row(i));
    std::copy(y.begin(), y.end(), out.row(i).begin());
  });
  return out;
}

double Denoiser::loss_and_gradient(std::span<const double> x, std::span<const double> target,
                                   Vector& grad) const {
  const DenoiserView v = view_of(*this);
  const PatchGeometry g = same_geometry(kernel);
  const std::size_t pixels = layout.height * layout.width;
  const Forward f = forward(*this, x);
  const double scale = 1.0 / static_cast<double>(f.y.size());

  double loss = 0.0;
  DenseMatrix dout(v.cin, pixels);
  for (std::size_t i = 0; i < f.y.size(); ++i) {
    const double r = f.y[i] - target[i];
    loss += r * r;
    dout.data()[i] = 2.0 * r * scale;
  }
  grad.assign(v.total, 0.0);

  const DenseMatrix dw2 = dout * f.u2.transpose();
  std::copy(dw2.data().begin(), dw2.data().end(), grad.begin() + static_cast<std::ptrdiff_t>(v.w2));
  for (std::size_t c = 0; c < v.cin; ++c)
    for (std::size_t p = 0; p < pixels; ++p) grad[v.b2 + c] += dout(c, p);

  const DenseMatrix du2 = transpose_multiply(block(parameters, v.w2, v.cin, v.taps2), dout);
  const Vector dact = unfold_adjoint(du2, {v.hidden, layout.height, layout.width}, g);
  DenseMatrix dpre(v.hidden, pixels);
  for (std::size_t c = 0; c < v.hidden; ++c)
    for (std::size_t p = 0; p < pixels; ++p) {
      const double d = f.pre(c, p) > 0.0 ? dact[c * pixels + p] : 0.0;
      dpre(c, p) = d;
      grad[v.b1 + c] += d;
    }
  const DenseMatrix dw1 = dpre * f.u1.transpose();
  std::copy(dw1.data().begin(), dw1.data().end(), grad.begin() + static_cast<std::ptrdiff_t>(v.w1));
  return loss * scale;
}

Denoiser init_denoiser(const Shape& layout, const DenoiserOptions& options) {
  if (options.channels == 0 || options.kernel == 0 || options.kernel % 2 == 0) {
    throw InvalidArgument("denoiser needs at least one channel and an odd kernel");
  }
  Denoiser d;
  d.layout = layout;
  d.channels = options.channels;
  d.kernel = options.kernel;
  const DenoiserView v = view_of(d);
  d.parameters.assign(v.total, 0.0);
  Rng rng(derive_seed(options.seed, "denoiser-init"));
  const double std1 = std::sqrt(2.0 / static_cast<double>(v.taps1));
  for (std::size_t i = v.w1; i < v.b1; ++i) d.parameters[i] = std1 * rng.normal();
  return d;
}

Denoiser train_denoiser(const DenseMatrix& inputs, const DenseMatrix& targets, const Shape& layout,
                        const DenoiserOptions& options) {
  if (inputs.rows() != targets.rows() || inputs.cols() != targets.cols()) {
    throw InvalidArgument("denoiser inputs and targets differ in shape");
  }
  if (inputs.rows() == 0) throw InvalidArgument("denoiser needs training pairs");
  if (inputs.cols() != layout.size()) throw InvalidArgument("training images do not match the layout");
  if (options.batch == 0 || !(options.learning_rate > 0.0)) {
    throw InvalidArgument("denoiser batch and learning rate must be positive");
  }
  Denoiser d = init_denoiser(layout, options);
  const std::size_t np = d.parameters.size();
  Vector m(np, 0.0), s(np, 0.0);
  constexpr double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  std::size_t step = 0;

  std::vector<std::size_t> order(inputs.rows());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(derive_seed(options.seed, "denoiser-order"));

  for (std::size_t epoch = 0; epoch < options.epochs; ++epoch) {
    rng.shuffle(order);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += options.batch) {
      const std::size_t count = std::min(options.batch, order.size() - start);
      std::vector<Vector> grads(count);
      Vector losses(count);
      parallel_for(count, [&](std::size_t b) {
        const std::size_t i = order[start + b];
        losses[b] = d.loss_and_gradient(inputs.row(i), targets.row(i), grads[b]);
      });
      Vector grad(np, 0.0);
      for (std::size_t b = 0; b < count; ++b) {
        epoch_loss += losses[b];
        for (std::size_t p = 0; p < np; ++p) grad[p] += grads[b][p] / static_cast<double>(count);
      }
      ++step;
      const double c1 = 1.0 - std::pow(beta1, static_cast<double>(step));
      const double c2 = 1.0 - std::pow(beta2, static_cast<double>(step));
      for (std::size_t p = 0; p < np; ++p) {
        m[p] = beta1 * m[p] + (1.0 - beta1) * grad[p];
        s[p] = beta2 * s[p] + (1.0 - beta2) * grad[p] * grad[p];
        d.parameters[p] -= options.learning_rate * (m[p] / c1) / (std::sqrt(s[p] / c2) + eps);
      }
    }
    if (!std::isfinite(epoch_loss)) {
      throw NumericalError("denoiser training diverged at epoch " + std::to_string(epoch + 1) +
                           ": loss is not finite");
    }
  }
  return d;
}

}  // namespace necode
