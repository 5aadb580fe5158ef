#include "network.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "necode/error.hpp"

namespace necode::detail {

namespace {

// y = W·x + b for a row-major rows×cols block.
void affine(std::span<const double> w, std::span<const double> b, std::span<const double> x,
            std::span<double> y) {
  const std::size_t cols = x.size();
  for (std::size_t r = 0; r < y.size(); ++r) {
    const double* row = w.data() + r * cols;
    double s = b.empty() ? 0.0 : b[r];
    for (std::size_t c = 0; c < cols; ++c) s += row[c] * x[c];
    y[r] = s;
  }
}

// out(rows × n) = W(rows × inner) · X(inner × n)
void matmul(std::span<const double> w, std::size_t rows, const DenseMatrix& x, DenseMatrix& out) {
  const std::size_t inner = x.rows();
  const std::size_t n = x.cols();
  out = DenseMatrix(rows, n);
  for (std::size_t r = 0; r < rows; ++r) {
    auto orow = out.row(r);
    for (std::size_t k = 0; k < inner; ++k) {
      const double wk = w[r * inner + k];
      if (wk == 0.0) continue;
      const auto xrow = x.row(k);
      for (std::size_t j = 0; j < n; ++j) orow[j] += wk * xrow[j];
    }
  }
}

// dW(rows × inner) += dY(rows × n) · Xᵀ
void accumulate_outer(const DenseMatrix& dy, const DenseMatrix& x, std::span<double> dw) {
  const std::size_t inner = x.rows();
  for (std::size_t r = 0; r < dy.rows(); ++r) {
    const auto drow = dy.row(r);
    for (std::size_t k = 0; k < inner; ++k) {
      const auto xrow = x.row(k);
      double s = 0.0;
      for (std::size_t j = 0; j < x.cols(); ++j) s += drow[j] * xrow[j];
      dw[r * inner + k] += s;
    }
  }
}

std::span<const double> slice(std::span<const double> p, const ParameterBlock& b) {
  return p.subspan(b.offset, b.rows * b.cols);
}

std::span<double> slice(std::span<double> p, const ParameterBlock& b) {
  return p.subspan(b.offset, b.rows * b.cols);
}

}  // namespace

Network::Network(const ModelSpec& spec) : spec_(spec) {
  spec_.validate();
  const Shape& in = spec_.input;
  switch (spec_.family) {
    case Family::dense_front:
      flat_dim_ = in.size();
      break;
    case Family::conv_front: {
      geometry_ = {spec_.conv.kernel, spec_.conv.stride, spec_.conv.padding};
      grid_h_ = geometry_.out_height(in);
      grid_w_ = geometry_.out_width(in);
      positions_ = grid_h_ * grid_w_;
      pooled_h_ = grid_h_ / spec_.conv.pool;
      pooled_w_ = grid_w_ / spec_.conv.pool;
      add_block("conv.weight", spec_.conv.channels, geometry_.patch_size(in));
      add_block("conv.bias", spec_.conv.channels, 1);
      flat_dim_ = spec_.conv.channels * pooled_h_ * pooled_w_;
      break;
    }
    case Family::attention_front: {
      const std::size_t d = spec_.attention.model_dim;
      geometry_ = {spec_.attention.patch, spec_.attention.patch, 0};
      positions_ = geometry_.positions(in);
      add_block("embed.weight", d, geometry_.patch_size(in));
      add_block("embed.bias", d, 1);
      add_block("position", d, positions_);
      add_block("qkv.weight", 3 * d, d);
      add_block("qkv.bias", 3 * d, 1);
      flat_dim_ = d * positions_;
      break;
    }
  }
  fc_first_ = layout_.size();
  std::size_t width = flat_dim_;
  for (std::size_t i = 0; i < spec_.hidden.size(); ++i) {
    add_block("fc" + std::to_string(i) + ".weight", spec_.hidden[i], width);
    add_block("fc" + std::to_string(i) + ".bias", spec_.hidden[i], 1);
    width = spec_.hidden[i];
  }
  add_block("head.weight", spec_.classes, width);
  add_block("head.bias", spec_.classes, 1);
}

void Network::add_block(std::string name, std::size_t rows, std::size_t cols) {
  layout_.push_back({std::move(name), count_, rows, cols});
  count_ += rows * cols;
}

const ParameterBlock& Network::block(std::string_view name) const {
  for (const auto& b : layout_)
    if (b.name == name) return b;
  throw InvalidArgument("model has no parameter block named " + std::string(name));
}

double Network::activate(double z) const {
  return spec_.activation == Activation::relu ? (z > 0.0 ? z : 0.0) : std::tanh(z);
}

double Network::activation_slope(double z, double a) const {
  return spec_.activation == Activation::relu ? (z > 0.0 ? 1.0 : 0.0) : 1.0 - a * a;
}

void Network::initialize(std::span<double> params, Rng& rng) const {
  const double gain = spec_.activation == Activation::relu ? std::sqrt(2.0) : 1.0;
  std::fill(params.begin(), params.end(), 0.0);
  for (const auto& b : layout_) {
    auto p = slice(params, b);
    if (b.name.ends_with(".bias")) continue;
    double stddev;
    if (b.name == "position") {
      stddev = 0.1;
    } else if (b.name == "head.weight") {
      stddev = 1.0 / std::sqrt(static_cast<double>(b.cols));
    } else {
      stddev = gain / std::sqrt(static_cast<double>(b.cols));
    }
    for (double& x : p) x = rng.normal(0.0, stddev);
  }
}

void Network::forward(std::span<const double> params, std::span<const double> x, Trace& t) const {
  const Shape& in = spec_.input;
  if (x.size() != in.size()) {
    throw InvalidArgument("input has " + std::to_string(x.size()) + " values, model expects " +
                          std::to_string(in.size()));
  }
  t.act.assign(1, Vector(flat_dim_));
  Vector& flat = t.act[0];

  switch (spec_.family) {
    case Family::dense_front:
      std::copy(x.begin(), x.end(), flat.begin());
      break;
    case Family::conv_front: {
      const auto& wb = block("conv.weight");
      const auto bias = slice(params, block("conv.bias"));
      t.cols = unfold(x, in, geometry_);
      matmul(slice(params, wb), wb.rows, t.cols, t.front);
      for (std::size_t c = 0; c < wb.rows; ++c)
        for (double& z : t.front.row(c)) z += bias[c];
      const std::size_t pool = spec_.conv.pool;
      t.argmax.assign(flat_dim_, 0);
      for (std::size_t c = 0; c < wb.rows; ++c) {
        const auto z = t.front.row(c);
        for (std::size_t py = 0; py < pooled_h_; ++py) {
          for (std::size_t px = 0; px < pooled_w_; ++px) {
            std::size_t best = (py * pool) * grid_w_ + px * pool;
            for (std::size_t dy = 0; dy < pool; ++dy)
              for (std::size_t dx = 0; dx < pool; ++dx) {
                const std::size_t p = (py * pool + dy) * grid_w_ + px * pool + dx;
                if (z[p] > z[best]) best = p;
              }
            const std::size_t k = (c * pooled_h_ + py) * pooled_w_ + px;
            t.argmax[k] = c * positions_ + best;
            flat[k] = activate(z[best]);
          }
        }
      }
      break;
    }
    case Family::attention_front: {
      const std::size_t d = spec_.attention.model_dim;
      const std::size_t n_tok = positions_;
      const auto& eb = block("embed.weight");
      const auto ebias = slice(params, block("embed.bias"));
      const auto pos = slice(params, block("position"));
      const auto& qb = block("qkv.weight");
      const auto qbias = slice(params, block("qkv.bias"));
      t.cols = unfold(x, in, geometry_);
      matmul(slice(params, eb), d, t.cols, t.front);
      for (std::size_t i = 0; i < d; ++i) {
        auto row = t.front.row(i);
        for (std::size_t s = 0; s < n_tok; ++s) row[s] += ebias[i] + pos[i * n_tok + s];
      }
      matmul(slice(params, qb), 3 * d, t.front, t.qkv);
      for (std::size_t i = 0; i < 3 * d; ++i)
        for (double& z : t.qkv.row(i)) z += qbias[i];

      const double scale = 1.0 / std::sqrt(static_cast<double>(d));
      t.weights = DenseMatrix(n_tok, n_tok);
      for (std::size_t a = 0; a < n_tok; ++a) {
        auto wrow = t.weights.row(a);
        double mx = -1e300;
        for (std::size_t b = 0; b < n_tok; ++b) {
          double s = 0.0;
          for (std::size_t i = 0; i < d; ++i) s += t.qkv(i, a) * t.qkv(d + i, b);
          wrow[b] = s * scale;
          mx = std::max(mx, wrow[b]);
        }
        double total = 0.0;
        for (double& w : wrow) {
          w = std::exp(w - mx);
          total += w;
        }
        for (double& w : wrow) w /= total;
      }
      t.mixed = DenseMatrix(d, n_tok);
      for (std::size_t i = 0; i < d; ++i) {
        const auto v = t.qkv.row(2 * d + i);
        for (std::size_t a = 0; a < n_tok; ++a) {
          double s = 0.0;
          for (std::size_t b = 0; b < n_tok; ++b) s += t.weights(a, b) * v[b];
          t.mixed(i, a) = s;
          flat[i * n_tok + a] = activate(s);
        }
      }
      break;
    }
  }

  t.pre.clear();
  for (std::size_t l = 0; l < spec_.hidden.size(); ++l) {
    const auto& wb = layout_[fc_first_ + 2 * l];
    const auto& bb = layout_[fc_first_ + 2 * l + 1];
    Vector z(wb.rows);
    affine(slice(params, wb), slice(params, bb), t.act.back(), z);
    Vector a(z.size());
    for (std::size_t i = 0; i < z.size(); ++i) a[i] = activate(z[i]);
    t.pre.push_back(std::move(z));
    t.act.push_back(std::move(a));
  }
  const auto& hw = layout_[layout_.size() - 2];
  const auto& hb = layout_.back();
  t.logits.assign(spec_.classes, 0.0);
  affine(slice(params, hw), slice(params, hb), t.act.back(), t.logits);
}

void Network::backward(std::span<const double> params, const Trace& t,
                       std::span<const double> dlogits, std::span<double> grad) const {
  // Head.
  const auto& hw = layout_[layout_.size() - 2];
  const auto& hb = layout_.back();
  Vector upstream(hw.cols, 0.0);
  {
    const auto w = slice(params, hw);
    auto dw = slice(grad, hw);
    auto db = slice(grad, hb);
    const Vector& a = t.act.back();
    for (std::size_t r = 0; r < hw.rows; ++r) {
      const double g = dlogits[r];
      db[r] += g;
      if (g == 0.0) continue;
      for (std::size_t c = 0; c < hw.cols; ++c) {
        dw[r * hw.cols + c] += g * a[c];
        upstream[c] += g * w[r * hw.cols + c];
      }
    }
  }
  // Hidden layers, last to first.
  for (std::size_t l = spec_.hidden.size(); l-- > 0;) {
    const auto& wb = layout_[fc_first_ + 2 * l];
    const auto& bb = layout_[fc_first_ + 2 * l + 1];
    const auto w = slice(params, wb);
    auto dw = slice(grad, wb);
    auto db = slice(grad, bb);
    const Vector& z = t.pre[l];
    const Vector& a = t.act[l + 1];
    const Vector& below = t.act[l];
    Vector next(wb.cols, 0.0);
    for (std::size_t r = 0; r < wb.rows; ++r) {
      const double g = upstream[r] * activation_slope(z[r], a[r]);
      if (g == 0.0) continue;
      db[r] += g;
      for (std::size_t c = 0; c < wb.cols; ++c) {
        dw[r * wb.cols + c] += g * below[c];
        next[c] += g * w[r * wb.cols + c];
      }
    }
    upstream = std::move(next);
  }

  switch (spec_.family) {
    case Family::dense_front:
      break;
    case Family::conv_front: {
      const auto& wb = block("conv.weight");
      DenseMatrix dz(wb.rows, positions_);
      for (std::size_t k = 0; k < flat_dim_; ++k) {
        const std::size_t src = t.argmax[k];
        const double z = t.front.data()[src];
        dz.data()[src] += upstream[k] * activation_slope(z, t.act[0][k]);
      }
      accumulate_outer(dz, t.cols, slice(grad, wb));
      auto db = slice(grad, block("conv.bias"));
      for (std::size_t c = 0; c < wb.rows; ++c)
        for (double g : dz.row(c)) db[c] += g;
      break;
    }
    case Family::attention_front: {
      const std::size_t d = spec_.attention.model_dim;
      const std::size_t n_tok = positions_;
      const double scale = 1.0 / std::sqrt(static_cast<double>(d));
      DenseMatrix dmixed(d, n_tok);
      for (std::size_t i = 0; i < d; ++i)
        for (std::size_t a = 0; a < n_tok; ++a) {
          const std::size_t k = i * n_tok + a;
          dmixed(i, a) = upstream[k] * activation_slope(t.mixed(i, a), t.act[0][k]);
        }
      DenseMatrix dqkv(3 * d, n_tok);
      DenseMatrix dweights(n_tok, n_tok);
      for (std::size_t i = 0; i < d; ++i) {
        const auto v = t.qkv.row(2 * d + i);
        for (std::size_t a = 0; a < n_tok; ++a) {
          const double g = dmixed(i, a);
          if (g == 0.0) continue;
          for (std::size_t b = 0; b < n_tok; ++b) {
            dqkv(2 * d + i, b) += t.weights(a, b) * g;
            dweights(a, b) += g * v[b];
          }
        }
      }
      for (std::size_t a = 0; a < n_tok; ++a) {
        double inner = 0.0;
        for (std::size_t b = 0; b < n_tok; ++b) inner += t.weights(a, b) * dweights(a, b);
        for (std::size_t b = 0; b < n_tok; ++b) {
          const double ds = t.weights(a, b) * (dweights(a, b) - inner) * scale;
          if (ds == 0.0) continue;
          for (std::size_t i = 0; i < d; ++i) {
            dqkv(i, a) += ds * t.qkv(d + i, b);
            dqkv(d + i, b) += ds * t.qkv(i, a);
          }
        }
      }
      const auto& qb = block("qkv.weight");
      accumulate_outer(dqkv, t.front, slice(grad, qb));
      auto dqbias = slice(grad, block("qkv.bias"));
      for (std::size_t r = 0; r < 3 * d; ++r)
        for (double g : dqkv.row(r)) dqbias[r] += g;
      // dTokens = Wqkvᵀ · dQKV
      const auto wq = slice(params, qb);
      DenseMatrix dtok(d, n_tok);
      for (std::size_t r = 0; r < 3 * d; ++r) {
        const auto grow = dqkv.row(r);
        for (std::size_t i = 0; i < d; ++i) {
          const double w = wq[r * d + i];
          auto trow = dtok.row(i);
          for (std::size_t a = 0; a < n_tok; ++a) trow[a] += w * grow[a];
        }
      }
      accumulate_outer(dtok, t.cols, slice(grad, block("embed.weight")));
      auto debias = slice(grad, block("embed.bias"));
      auto dpos = slice(grad, block("position"));
      for (std::size_t i = 0; i < d; ++i)
        for (std::size_t a = 0; a < n_tok; ++a) {
          debias[i] += dtok(i, a);
          dpos[i * n_tok + a] += dtok(i, a);
        }
      break;
    }
  }
}

DenseMatrix Network::first_stage(std::span<const double> params, std::span<const double> x,
                                 bool embedding_only) const {
  Trace t;
  forward(params, x, t);
  switch (spec_.family) {
    case Family::dense_front: {
      if (spec_.hidden.empty()) return DenseMatrix(spec_.classes, 1, t.logits);
      return DenseMatrix(spec_.hidden[0], 1, t.pre[0]);
    }
    case Family::conv_front:
      return t.front;
    case Family::attention_front:
      return embedding_only ? t.front : t.qkv;
  }
  return {};
}

}  // namespace necode::detail
