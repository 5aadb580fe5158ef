#include "doctest.h"

#include <cmath>
#include <map>
#include <tuple>

#include "necode/error.hpp"
#include "necode/harness.hpp"
#include "necode/image.hpp"
#include "necode/random.hpp"

using namespace necode;

namespace {

const LabeledDataset& digits() {
  static const LabeledDataset d = make_dataset("mini-digits", 21, {60, 400, 120});
  return d;
}

const std::vector<NamedModel>& grid() {
  static const std::vector<NamedModel> models = [] {
    std::vector<NamedModel> out;
    const std::vector<std::tuple<std::string, Family, std::uint64_t>> entries{
        {"dense", Family::dense_front, 1}, {"conv", Family::conv_front, 2}, {"conv-b", Family::conv_front, 3}};
    for (const auto& [name, family, seed] : entries) {
      ModelSpec s;
      s.family = family;
      s.hidden = family == Family::dense_front ? std::vector<std::size_t>{32} : std::vector<std::size_t>{};
      out.push_back({name, train(s, digits(), seed, {8, 0.05, 0.9, 32})});
    }
    return out;
  }();
  return models;
}

RecodingConfig config_at(double psnr) {
  RecodingConfig cfg;
  cfg.seed = 17;
  cfg.target_psnr_db = psnr;
  return cfg;
}

double max_abs_diff(const DenseMatrix& a, const DenseMatrix& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
  return m;
}

}  // namespace

TEST_SUITE("harness") {

TEST_CASE("pair kinds") {
  const auto& m = grid();
  CHECK(pair_kind(m[1], m[1]) == PairKind::authorized);
  CHECK(pair_kind(m[1], m[2]) == PairKind::transfer_match);
  CHECK(pair_kind(m[0], m[1]) == PairKind::general);
  CHECK(to_string(PairKind::transfer_match) == "TA");
}

TEST_CASE("cell statistics") {
  const auto& m = grid();
  const Batch eval = digits().subset(Split::eval);
  const NEBatch ne = recode_for(m, 1, eval, config_at(20.0));
  const auto rows = score_cells(m, 1, eval.inputs, ne.recoded, eval.labels, ne.mean_psnr_db(), "none", "none", 5);
  REQUIRE(rows.size() == 3);
  const double target_err = 1.0 - rows[1].recoded_acc;
  CHECK(rows[1].rho_hat == doctest::Approx(rows[1].clean_acc - rows[1].recoded_acc));
  CHECK(rows[0].gamma_hat ==
        doctest::Approx(std::min(rows[0].error_rate - target_err, rows[2].error_rate - target_err)));
  for (const auto& r : rows) {
    CHECK(r.error_rate == doctest::Approx(1.0 - r.recoded_acc));
    CHECK(r.target_model == "conv");
  }

  const std::vector<NamedModel> single{m[0]};
  const auto one = cross_matrix(single, eval, config_at(20.0));
  REQUIRE(one.rows.size() == 1);
  CHECK(std::isnan(one.rows[0].gamma_hat));
  CHECK(one.rows[0].target_model == one.rows[0].eval_model);
  CHECK(to_csv(one.rows).find(",nan,") != std::string::npos);
}

TEST_CASE("cross matrix grid completeness and determinism") {
  const auto& m = grid();
  const Batch eval = digits().subset(Split::eval);
  const auto a = cross_matrix(m, eval, config_at(20.0));
  const auto b = cross_matrix(m, eval, config_at(20.0));
  CHECK(to_csv(a.rows) == to_csv(b.rows));
  std::map<std::pair<std::string, std::string>, int> seen;
  for (const auto& r : a.rows) {
    ++seen[{r.target_model, r.eval_model}];
    CHECK(r.psnr_db >= 19.75);
    CHECK(r.psnr_db <= 20.25);
  }
  CHECK(seen.size() == 9);
  for (const auto& [key, count] : seen) CHECK(count == 1);
  // Authorized utility survives.
  for (const auto& r : a.rows)
    if (r.target_model == r.eval_model) CHECK(std::abs(r.clean_acc - r.recoded_acc) <= 0.02);

  CHECK(to_csv(cross_matrix({}, eval, config_at(20.0)).rows) == std::string(kEvalCsvHeader) + "\n");
}

TEST_CASE("CSV round trip and an independent reducer") {
  const auto& m = grid();
  const Batch eval = digits().subset(Split::eval);
  EvalReport report = cross_matrix(m, eval, config_at(20.0));
  const std::vector<double> levels{30.0, 10.0};
  report.append(sweep_strength(m, 0, levels, eval, config_at(20.0)));
  const std::string csv = to_csv(report.rows);
  const auto parsed = parse_csv(csv);
  REQUIRE(parsed.size() == report.rows.size());
  CHECK(to_csv(parsed) == csv);

  // Spreadsheet-style reduction straight from the text columns.
  struct Group {
    double target_err = NAN, target_clean = NAN, gamma = INFINITY;
    std::vector<double> others;
  };
  std::map<std::string, Group> groups;
  std::size_t pos = csv.find('\n') + 1;
  while (pos < csv.size()) {
    const std::size_t end = csv.find('\n', pos);
    std::vector<std::string> f;
    std::size_t s = pos;
    for (std::size_t c = csv.find(',', s); c < end; c = csv.find(',', s)) {
      f.push_back(csv.substr(s, c - s));
      s = c + 1;
    }
    f.push_back(csv.substr(s, end - s));
    const std::string key = f[0] + "|" + f[2] + "|" + f[3] + "|" + f[4];
    Group& g = groups[key];
    const double err = std::stod(f[7]);
    if (f[0] == f[1]) {
      g.target_err = err;
      g.target_clean = std::stod(f[5]);
    } else {
      g.others.push_back(err);
    }
    pos = end + 1;
  }
  for (const auto& row : parsed) {
    char psnr[32];
    std::snprintf(psnr, sizeof psnr, "%.4f", row.psnr_db);
    const Group& g = groups.at(row.target_model + "|" + psnr + "|" + row.preprocess + "|" + row.attack);
    double gamma = INFINITY;
    for (double e : g.others) gamma = std::min(gamma, e - g.target_err);
    CHECK(row.gamma_hat == doctest::Approx(gamma).epsilon(1e-5));
    CHECK(row.rho_hat == doctest::Approx(g.target_err - (1.0 - g.target_clean)).epsilon(1e-5));
  }

  CHECK_THROWS_AS(parse_csv("bad,header\n"), IoError);
  CHECK_THROWS_AS(parse_csv(std::string(kEvalCsvHeader) + "\na,b,1\n"), IoError);
  CHECK(parse_csv(std::string(kEvalCsvHeader) + "\n").empty());
  EvalRow bad;
  bad.target_model = "a,b";
  CHECK_THROWS_AS(to_csv(std::vector<EvalRow>{bad}), InvalidArgument);
}

TEST_CASE("strength sweep") {
  const auto& m = grid();
  const Batch eval = digits().subset(Split::eval);
  const std::vector<double> levels{INFINITY, 20.0, -200.0};
  const auto r = sweep_strength(m, 1, levels, eval, config_at(20.0));
  CHECK(r.rows.size() == 6);
  REQUIRE(r.notes.size() == 1);
  CHECK(r.notes[0].find("skipped conv") == 0);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(std::isinf(r.rows[i].psnr_db));
    CHECK(r.rows[i].recoded_acc == r.rows[i].clean_acc);
    CHECK(r.rows[i].rho_hat == 0.0);
  }
}

TEST_CASE("preprocessing operators") {
  const Batch eval = digits().subset(Split::eval);
  const Shape layout = digits().shape;
  PreprocessOp identity;
  identity.kind = PreprocessKind::resize;
  identity.resize_to = 16;
  CHECK(apply_preprocess(eval.inputs, layout, identity).images == eval.inputs);

  // At quality 100 every step is 1, so each coefficient moves by at most 1/2
  // and a pixel by at most half the l1 norm of its row of the inverse DCT.
  PreprocessOp q100;
  q100.kind = PreprocessKind::jpeg_like;
  q100.quality = 100;
  double ceiling = 0.0;
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 8; ++x) {
      double l1 = 0.0;
      for (int u = 0; u < 8; ++u)
        for (int v = 0; v < 8; ++v) {
          const double cu = u == 0 ? std::sqrt(1.0 / 8) : std::sqrt(2.0 / 8);
          const double cv = v == 0 ? std::sqrt(1.0 / 8) : std::sqrt(2.0 / 8);
          l1 += std::abs(cu * std::cos((2 * y + 1) * u * M_PI / 16) * cv * std::cos((2 * x + 1) * v * M_PI / 16));
        }
      ceiling = std::max(ceiling, 0.5 * l1 / 255.0);
    }
  const double q100_dev = max_abs_diff(apply_preprocess(eval.inputs, layout, q100).images, eval.inputs);
  CHECK(q100_dev <= ceiling);
  CHECK(q100_dev <= 2.0 / 255.0);

  PreprocessOp crop;
  crop.kind = PreprocessKind::random_crop;
  crop.crop_size = 12;
  crop.seed = 4;
  const auto a = apply_preprocess(eval.inputs, layout, crop);
  const auto b = apply_preprocess(eval.inputs, layout, crop);
  CHECK(a.images == b.images);
  REQUIRE(a.offsets.size() == eval.size());
  bool moved = false;
  for (const auto& [top, left] : a.offsets) {
    CHECK(top <= 4);
    CHECK(left <= 4);
    moved |= top != a.offsets[0].first || left != a.offsets[0].second;
  }
  CHECK(moved);
  crop.kind = PreprocessKind::center_crop;
  CHECK(apply_preprocess(eval.inputs, layout, crop).offsets[0] == std::pair<std::size_t, std::size_t>{2, 2});
  crop.crop_size = 17;
  CHECK_THROWS_AS(apply_preprocess(eval.inputs, layout, crop), InvalidArgument);
  CHECK(parse_preprocess_kind("jpeg-like") == PreprocessKind::jpeg_like);
  CHECK(default_preprocess_suite(1).size() == 5);

  const auto& m = grid();
  const auto r = preprocess_robustness(m, 0, eval, config_at(20.0), default_preprocess_suite(3));
  CHECK(r.rows.size() == 6 * m.size());
  CHECK(r.find("dense", "dense", "jpeg-like-q75") != nullptr);
}

TEST_CASE("projection-back attacks") {
  const auto& d = digits();
  const DenseMatrix pub = d.subset(Split::probe).inputs;
  const auto pca_b = pca_attacker(pub, 20);
  CHECK(orthogonality_residual(pca_b.basis) <= 1e-8);
  const auto rnd = random_attacker(pub, 20, 3);
  CHECK(orthogonality_residual(rnd.basis) <= 1e-8);
  CHECK(project_back(DenseMatrix(0, 256), pca_b).rows() == 0);
  const auto full = random_attacker(pub, 256, 4);
  CHECK(max_abs_diff(project_back(pub, full), pub) <= 1e-10);
  CHECK_THROWS_AS(pca_attacker(pub, 0), InvalidArgument);

  // The oracle removal is blind to anything inside the private subspace.
  const auto& m = grid();
  const Batch eval = d.subset(Split::eval);
  for (std::size_t t = 0; t < 2; ++t) {
    const NEBatch ne = recode_for(m, t, eval, config_at(20.0));
    const auto op = extract(m[t].model);
    const auto s = identify_subspace(op, 1e-4);
    CHECK(max_abs_diff(remove_insensitive_component(ne.recoded, op, s),
                       remove_insensitive_component(eval.inputs, op, s)) <= 1e-10);
  }

  AttackSettings settings;
  settings.pca_rank = 32;
  const auto r = projection_attacks(m, 1, eval, pub, config_at(20.0), settings);
  CHECK(r.rows.size() == 4 * m.size());
  CHECK(r.attacks.size() == 3);
  CHECK(r.find("conv", "dense", "none", "projection-oracle") != nullptr);
}

TEST_CASE("denoiser gradient matches finite differences") {
  DenoiserOptions o;
  o.channels = 3;
  o.kernel = 3;
  o.seed = 2;
  Denoiser d = init_denoiser({1, 6, 6}, o);
  Rng rng(5);
  for (double& p : d.parameters) p += 0.2 * rng.normal();
  Vector x(36), t(36);
  for (double& v : x) v = rng.uniform();
  for (double& v : t) v = rng.uniform();
  Vector grad;
  d.loss_and_gradient(x, t, grad);
  Vector scratch;
  for (std::size_t p = 0; p < d.parameters.size(); ++p) {
    const double keep = d.parameters[p];
    const double h = 1e-6;
    d.parameters[p] = keep + h;
    const double up = d.loss_and_gradient(x, t, scratch);
    d.parameters[p] = keep - h;
    const double down = d.loss_and_gradient(x, t, scratch);
    d.parameters[p] = keep;
    CHECK(grad[p] == doctest::Approx((up - down) / (2 * h)).epsilon(1e-5).scale(1e-6));
  }
}

TEST_CASE("denoiser training") {
  const Batch train_b = digits().subset(Split::train);
  const Batch eval = digits().subset(Split::eval);
  DenoiserOptions o;
  o.epochs = 3;
  const Denoiser untrained = init_denoiser(digits().shape, o);
  CHECK(untrained.apply(eval.inputs) == eval.inputs);

  AttackSettings settings;
  settings.denoiser.epochs = 4;
  const std::vector<DenoiserMode> modes{DenoiserMode::noise2clean};
  const auto control = denoiser_control(eval, train_b, digits().shape, 0.1, settings, modes);
  REQUIRE(control.size() == 1);
  CHECK(control[0].gain_db() > 2.0);

  o.learning_rate = 1e300;
  CHECK_THROWS_AS(train_denoiser(train_b.inputs, 0.5 * train_b.inputs, digits().shape, o), NumericalError);
  CHECK_THROWS_AS(train_denoiser(DenseMatrix(0, 256), DenseMatrix(0, 256), digits().shape, o), InvalidArgument);

  const std::vector<DenoiserMode> both{DenoiserMode::noise2noise, DenoiserMode::noise2clean};
  const Batch small{DenseMatrix(eval.inputs.rows() / 4, 256,
                                Vector(eval.inputs.data().begin(), eval.inputs.data().begin() + 30 * 256)),
                    std::vector<int>(eval.labels.begin(), eval.labels.begin() + 30)};
  const auto r = denoiser_attacks(grid(), 0, small, small, config_at(20.0), settings, both);
  CHECK(r.attacks.size() == 2);
  CHECK(r.rows.size() == 2 * grid().size());
  CHECK(parse_denoiser_mode("noise2noise") == DenoiserMode::noise2noise);
}

TEST_CASE("summary JSON keeps non-finite values readable") {
  EvalReport r;
  EvalRow row;
  row.gamma_hat = NAN;
  row.psnr_db = INFINITY;
  r.rows.push_back(row);
  r.notes.push_back("note");
  const std::string j = summary_json(r, "[run]\nseed = 1\n");
  CHECK(j.find("\"nan\"") != std::string::npos);
  CHECK(j.find("\"inf\"") != std::string::npos);
  CHECK(j.find("seed = 1") != std::string::npos);
}

}  // TEST_SUITE
