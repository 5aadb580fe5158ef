#include "doctest.h"

#include <cmath>
#include <fstream>

#include "necode/config.hpp"
#include "necode/error.hpp"
#include "necode/random.hpp"

using namespace necode;

TEST_CASE("empty config keeps defaults") {
  const RunConfig c = parse_config("");
  CHECK(c.seed == 0);
  CHECK(c.dataset.kind == "mini-digits");
  CHECK(c.models.families.size() == 3);
  REQUIRE(c.recoder.target_psnr_db.has_value());
  CHECK(*c.recoder.target_psnr_db == 20.0);
  CHECK(c.bounds.trials == 10000);
  CHECK(c.harness.psnr_grid.size() == 7);
}

TEST_CASE("values are read per section") {
  const RunConfig c = parse_config(R"([run]
seed = 77
out = results/a
[dataset]
train = 300
[nn]
families = dense, conv
reseed =
hidden = 16, 8
learning_rate = 0.02
[recoder]
tau = 1e-3
psnr = none
criterion = cumulative-sum
[bounds]
sigma_grid = 0.5
[harness]
preprocess = blur, jpeg-like
denoiser_modes = noise2clean
attacks = false
)");
  CHECK(c.seed == 77);
  CHECK(c.out == "results/a");
  CHECK(c.dataset.sizes.train == 300);
  CHECK(c.models.families == std::vector<Family>{Family::dense_front, Family::conv_front});
  CHECK(c.models.reseed.empty());
  CHECK(c.models.hidden == std::vector<std::size_t>{16, 8});
  CHECK(c.models.training.learning_rate == 0.02);
  CHECK(c.recoder.tau == 1e-3);
  CHECK_FALSE(c.recoder.target_psnr_db.has_value());
  CHECK(c.recoder.criterion == Criterion::cumulative_sum);
  CHECK(c.bounds.sigma_grid == std::vector<double>{0.5});
  CHECK(c.harness.preprocess == std::vector<PreprocessKind>{PreprocessKind::blur, PreprocessKind::jpeg_like});
  CHECK(c.harness.denoiser_modes == std::vector<DenoiserMode>{DenoiserMode::noise2clean});
  CHECK_FALSE(c.harness.attacks);
}

TEST_CASE("unknown names and malformed values are config errors") {
  CHECK_THROWS_AS(parse_config("[extra]\na = 1\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("[run]\nseeds = 1\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("seed = 1\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("[run]\nseed = -1\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("[run]\nseed = 12x\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("[recoder]\ntau = fast\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("[recoder]\nsigma = 0\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("[nn]\nfamilies = mlp\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("[nn]\nfamilies = dense\nreseed = conv\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("[harness]\nattacks = maybe\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("[dataset]\nkind = cifar\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("[bounds]\nt_grid = 0.1, 0\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("[run\nseed = 1\n"), ConfigError);
}

TEST_CASE("ini echo reproduces the configuration") {
  RunConfig c = parse_config("[run]\nseed = 5\n[recoder]\nlambda = 0.1\npsnr = 17.25\n[bounds]\nt_grid = 0.3, 1e-7\n");
  c.dataset.blobs.separation = 1.0 / 3.0;
  const std::string text = to_ini(c);
  const RunConfig back = parse_config(text);
  CHECK(to_ini(back) == text);
  CHECK(back.dataset.blobs.separation == c.dataset.blobs.separation);
  CHECK(back.bounds.t_grid == c.bounds.t_grid);
  CHECK(*back.recoder.target_psnr_db == 17.25);

  RunConfig none = c;
  none.recoder.target_psnr_db.reset();
  none.models.reseed.clear();
  CHECK_FALSE(parse_config(to_ini(none)).recoder.target_psnr_db.has_value());
  CHECK(parse_config(to_ini(none)).models.reseed.empty());
}

TEST_CASE("model grid names and seeds") {
  const RunConfig c = parse_config("[run]\nseed = 9\n");
  const auto entries = c.model_entries();
  REQUIRE(entries.size() == 4);
  CHECK(entries[0].name == "dense");
  CHECK(entries[1].name == "conv");
  CHECK(entries[2].name == "attention");
  CHECK(entries[3].name == "conv-b");
  CHECK(entries[3].spec == entries[1].spec);
  CHECK(entries[3].seed != entries[1].seed);
  CHECK(entries[0].seed == derive_seed(9, "train/dense"));
  CHECK(entries[0].spec.hidden == std::vector<std::size_t>{32});
  CHECK(entries[1].spec.hidden.empty());
  CHECK(c.resolved_recoder().seed == derive_seed(9, "recode"));
}

TEST_CASE("blob datasets change the input layout") {
  const RunConfig c =
      parse_config("[dataset]\nkind = gaussian-blobs\nblob_dim = 12\nblob_classes = 3\n[nn]\nfamilies = dense\nreseed =\n");
  CHECK(c.input_shape() == Shape{1, 1, 12});
  CHECK(c.classes() == 3);
  CHECK(c.model_entries()[0].spec.input == Shape{1, 1, 12});
  CHECK_THROWS_AS(parse_config("[dataset]\nkind = gaussian-blobs\n"), ConfigError);  // conv needs an image
}

TEST_CASE("load_config reads files") {
  const auto path = std::filesystem::temp_directory_path() / "necode_test_config.ini";
  {
    std::ofstream f(path);
    f << "[run]\nseed = 3\n";
  }
  CHECK(load_config(path).seed == 3);
  std::filesystem::remove(path);
  CHECK_THROWS_AS(load_config(path), IoError);
}
