#include "necode/firstlayer.hpp"

#include <string>

#include "necode/error.hpp"

namespace necode {

std::string_view to_string(LiftKind k) {
  switch (k) {
    case LiftKind::identity: return "identity";
    case LiftKind::patch_unfold: return "patch-unfold";
    case LiftKind::token_projection: return "token-projection";
  }
  return "?";
}

std::string_view to_string(ExtractionTarget t) {
  return t == ExtractionTarget::qkv_projection ? "qkv-projection" : "token-embedding";
}

ExtractionTarget parse_extraction_target(std::string_view s) {
  if (s == "qkv-projection" || s == "qkv") return ExtractionTarget::qkv_projection;
  if (s == "token-embedding" || s == "embedding") return ExtractionTarget::token_embedding;
  throw InvalidArgument("unknown extraction target '" + std::string(s) + "'");
}

std::size_t FirstLayerOperator::positions() const {
  return lift == LiftKind::identity ? 1 : geometry.positions(layout);
}

std::size_t FirstLayerOperator::lifted_dim() const {
  const std::size_t base = lift == LiftKind::identity ? layout.size() : geometry.patch_size(layout);
  return base + (bias_folded ? 1 : 0);
}

bool FirstLayerOperator::per_patch() const {
  return lift == LiftKind::identity || geometry.non_overlapping();
}

DenseMatrix FirstLayerOperator::lift_input(std::span<const double> x) const {
  if (x.size() != layout.size()) {
    throw InvalidArgument("operator input has " + std::to_string(x.size()) + " values, layout " +
                          layout.to_string() + " expects " + std::to_string(layout.size()));
  }
  DenseMatrix base = lift == LiftKind::identity ? DenseMatrix(x.size(), 1, Vector(x.begin(), x.end()))
                                                : unfold(x, layout, geometry);
  if (!bias_folded) return base;
  DenseMatrix aug(base.rows() + 1, base.cols(), 1.0);
  std::copy(base.data().begin(), base.data().end(), aug.data().begin());
  return aug;
}

DenseMatrix FirstLayerOperator::apply(std::span<const double> x) const {
  DenseMatrix out = weight * lift_input(x);
  if (!bias_folded && !bias.empty()) out = out + bias;
  return out;
}

DenseMatrix FirstLayerOperator::effective_matrix() const {
  if (bias_folded) throw InvalidArgument("effective matrix is undefined for a folded bias");
  if (lift == LiftKind::identity) return weight;
  const std::size_t p_count = positions();
  const std::size_t m = weight.rows();
  DenseMatrix eff(m * p_count, layout.size());
  // Unfolding the i-th unit vector gives the taps that read pixel i.
  Vector unit(layout.size(), 0.0);
  const Vector counts = coverage_counts(layout, geometry);
  for (std::size_t i = 0; i < layout.size(); ++i) {
    if (counts[i] == 0.0) continue;
    unit[i] = 1.0;
    const DenseMatrix cols = unfold(unit, layout, geometry);
    unit[i] = 0.0;
    const DenseMatrix resp = weight * cols;
    for (std::size_t o = 0; o < m; ++o)
      for (std::size_t p = 0; p < p_count; ++p) eff(o * p_count + p, i) = resp(o, p);
  }
  return eff;
}

DenseMatrix FirstLayerOperator::synthesis_operator() const {
  return per_patch() ? weight : effective_matrix();
}

FirstLayerOperator extract(const TrainedModel& model, ExtractionTarget target, bool fold_bias) {
  const ModelSpec& spec = model.spec;
  FirstLayerOperator op;
  op.layout = spec.input;
  switch (spec.family) {
    case Family::dense_front: {
      const std::string prefix = spec.hidden.empty() ? "head" : "fc0";
      op.lift = LiftKind::identity;
      op.weight = parameter_block(model, prefix + ".weight");
      op.bias = parameter_block(model, prefix + ".bias");
      break;
    }
    case Family::conv_front: {
      op.lift = LiftKind::patch_unfold;
      op.geometry = {spec.conv.kernel, spec.conv.stride, spec.conv.padding};
      op.weight = parameter_block(model, "conv.weight");
      const DenseMatrix b = parameter_block(model, "conv.bias");
      op.bias = DenseMatrix(b.rows(), op.geometry.positions(spec.input));
      for (std::size_t o = 0; o < b.rows(); ++o)
        for (double& v : op.bias.row(o)) v = b(o, 0);
      break;
    }
    case Family::attention_front: {
      op.lift = LiftKind::token_projection;
      op.geometry = {spec.attention.patch, spec.attention.patch, 0};
      const DenseMatrix embed = parameter_block(model, "embed.weight");
      const DenseMatrix embed_bias = parameter_block(model, "embed.bias");
      const DenseMatrix position = parameter_block(model, "position");
      DenseMatrix token_bias = position;
      for (std::size_t i = 0; i < token_bias.rows(); ++i)
        for (double& v : token_bias.row(i)) v += embed_bias(i, 0);
      if (target == ExtractionTarget::token_embedding) {
        op.weight = embed;
        op.bias = token_bias;
      } else {
        const DenseMatrix qkv = parameter_block(model, "qkv.weight");
        const DenseMatrix qkv_bias = parameter_block(model, "qkv.bias");
        op.weight = qkv * embed;
        op.bias = qkv * token_bias;
        for (std::size_t r = 0; r < op.bias.rows(); ++r)
          for (double& v : op.bias.row(r)) v += qkv_bias(r, 0);
      }
      if (fold_bias) {
        throw InvalidArgument("bias folding needs a bias shared by all positions; attention fronts add positional terms");
      }
      break;
    }
  }
  if (fold_bias) {
    DenseMatrix aug(op.weight.rows(), op.weight.cols() + 1);
    for (std::size_t r = 0; r < op.weight.rows(); ++r) {
      std::copy(op.weight.row(r).begin(), op.weight.row(r).end(), aug.row(r).begin());
      aug(r, op.weight.cols()) = op.bias(r, 0);
    }
    op.weight = std::move(aug);
    op.bias_folded = true;
  }
  return op;
}

Vector fold_delta(const DenseMatrix& delta_cols, const Shape& layout, const PatchGeometry& g) {
  if (delta_cols.rows() != g.patch_size(layout) || delta_cols.cols() != g.positions(layout)) {
    throw InvalidArgument("fold_delta: " + std::to_string(delta_cols.rows()) + "x" +
                          std::to_string(delta_cols.cols()) + " columns do not match geometry on " +
                          layout.to_string());
  }
  Vector out = unfold_adjoint(delta_cols, layout, g);
  const Vector counts = coverage_counts(layout, g);
  for (std::size_t i = 0; i < out.size(); ++i)
    if (counts[i] > 0.0) out[i] /= counts[i];
  return out;
}

}  // namespace necode
