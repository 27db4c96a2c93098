#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <filesystem>
#include <fstream>

#include "mmt/config.hpp"
#include "mmt/error.hpp"

using namespace mmt;

TEST_CASE("defaults are valid and M_t differs from the true target identity count") {
  const RunConfig c;
  CHECK_NOTHROW(c.validate());
  CHECK(c.alpha == 0.999);
  CHECK(c.P == 16);
  CHECK(c.K == 4);
  CHECK(c.num_pseudo_classes != c.data.target_identities);
}

TEST_CASE("overrides use the flat dotted keys") {
  RunConfig c;
  apply_override(c, "weights.lambda_tri=0.3");
  apply_override(c, "epochs_adapt=3");
  apply_override(c, "ablation.no_ema=true");
  CHECK(c.weights.lambda_tri == 0.3);
  CHECK(c.epochs_adapt == 3);
  CHECK(c.ablation.no_ema);
  CHECK_THROWS_AS(apply_override(c, "weights.lambda_tri"), ConfigError);
  CHECK_THROWS_AS(apply_override(c, "no.such.key=1"), ConfigError);
  CHECK_THROWS_AS(apply_override(c, "epochs_adapt=-1"), ConfigError);
  CHECK_THROWS_AS(apply_override(c, "epochs_adapt=1.5"), ConfigError);
  CHECK_THROWS_AS(apply_override(c, "ablation.no_ema=1"), ConfigError);
  CHECK_THROWS_AS(apply_override(c, "alpha=abc"), ConfigError);
}

TEST_CASE("validation rejects out-of-range values") {
  auto rejects = [](const char* kv) {
    RunConfig c;
    apply_override(c, kv);
    CHECK_THROWS_AS(c.validate(), ConfigError);
  };
  rejects("alpha=1.0");
  rejects("weights.lambda_id=1.5");
  rejects("batch.K=1");
  rejects("seeds.net2=11");
  rejects("lr_adapt=0");
  rejects("data.target_anisotropy=0.5");
  rejects("augment.p_drop=2");
  RunConfig both;
  both.ablation.no_soft_id = true;
  both.ablation.no_hard_id = true;
  CHECK_THROWS_AS(both.validate(), ConfigError);
}

TEST_CASE("ablation flags map onto the effective loss weights") {
  RunConfig c;
  c.ablation.no_soft_id = true;
  c.ablation.no_hard_tri = true;
  c.ablation.no_ema = true;
  const RunConfig e = c.effective();
  CHECK(e.weights.lambda_id == 0.0);
  CHECK(e.weights.lambda_tri == 1.0);
  CHECK(e.alpha == 0.0);
}

TEST_CASE("JSON round trip and file loading") {
  RunConfig c;
  apply_override(c, "weights.margin=0.7");
  apply_override(c, "cluster.normalize=false");
  const nlohmann::json j = to_json(c);
  CHECK(j.at("weights.margin") == 0.7);
  const RunConfig back = config_from_json(j);
  CHECK(to_json(back) == j);

  const auto path = std::filesystem::temp_directory_path() / "mmt_config_test.json";
  {
    std::ofstream out(path);
    out << "{ // comment\n \"alpha\": 0.5 }\n";
  }
  CHECK(load_config(path.string()).alpha == 0.5);
  {
    std::ofstream out(path);
    out << "[1, 2]";
  }
  CHECK_THROWS_AS(load_config(path.string()), ConfigError);
  std::filesystem::remove(path);
  CHECK_THROWS_AS(load_config(path.string()), ConfigError);
}
