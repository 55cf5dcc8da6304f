#include "doctest.h"
#include "gmx/checkpoint.hpp"
#include "gmx/config.hpp"
#include "support.hpp"

using namespace gmx;

namespace {

Errc code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an error");
  return Errc::Io;
}

}  // namespace

TEST_CASE("key=value parsing") {
  const auto kv = parse_key_values("# header\nbase_lr = 0.1  # trailing\n\nmix.lambda_max=0.3\n", "t");
  REQUIRE(kv.size() == 2);
  CHECK(kv[0] == std::pair<std::string, std::string>{"base_lr", "0.1"});
  CHECK(kv[1] == std::pair<std::string, std::string>{"mix.lambda_max", "0.3"});
  CHECK(code_of([] { parse_key_values("base_lr\n", "t"); }) == Errc::InvalidConfig);
  CHECK(code_of([] { parse_key_values("=3\n", "t"); }) == Errc::InvalidConfig);
}

TEST_CASE("settings apply in order and reject unknown keys or bad values") {
  RunConfig cfg;
  apply_settings(cfg, {{"base_lr", "0.2"}, {"base_lr", "0.3"}, {"mix.pairing", "random"},
                       {"model.encoder_kernels", "5,5,3"}, {"data.size", "16"}});
  CHECK(cfg.train.base_lr == 0.3);
  CHECK(cfg.train.mix.pairing == Pairing::Random);
  CHECK(cfg.model.encoder[0].kernel == 5);
  CHECK(cfg.model.encoder[2].kernel == 3);
  CHECK(cfg.shapes.size == 16);
  CHECK(code_of([&] { apply_settings(cfg, {{"base_rl", "0.1"}}); }) == Errc::InvalidConfig);
  CHECK(code_of([&] { apply_settings(cfg, {{"max_iter", "ten"}}); }) == Errc::InvalidConfig);
  CHECK(code_of([&] { apply_settings(cfg, {{"mix.decouple_mode", "medium"}}); }) == Errc::InvalidConfig);
}

TEST_CASE("load_run_config") {
  testing::TempDir dir("config");
  const auto file = dir.path() / "run.cfg";
  write_file_bytes(file, "max_iter=50\ndata.dir=somewhere\n");
  const auto cfg = load_run_config(file, {"max_iter=60"});
  CHECK(cfg.train.max_iter == 60);
  CHECK(cfg.data_dir.is_absolute());
  CHECK(cfg.run_dir.is_absolute());
  CHECK(cfg.data_dir.filename() == "somewhere");

  CHECK(code_of([&] { load_run_config(dir.path() / "missing.cfg", {}); }) == Errc::Io);
  CHECK(code_of([&] { load_run_config(std::nullopt, {"max_iter"}); }) == Errc::InvalidConfig);
  CHECK(code_of([&] { load_run_config(std::nullopt, {"mix.lambda_max=2"}); }) == Errc::InvalidConfig);
}

TEST_CASE("formatted config round trips and covers every key") {
  RunConfig cfg;
  apply_settings(cfg, {{"seed", "5"}, {"mix.mitrans", "false"}, {"model.psp_bins", "1,2"}, {"cls_weight", "0.25"}});
  const std::string text = format_run_config(cfg);
  RunConfig back;
  apply_settings(back, parse_key_values(text, "dump"));
  CHECK(format_run_config(back) == text);
  for (const auto& key : known_config_keys()) CHECK(text.find(key + "=") != std::string::npos);
}

TEST_CASE("shipped config files load") {
  for (const char* name : {"desk.cfg", "ablate.cfg"}) {
    const RunConfig c = load_run_config(std::filesystem::path(GMX_CONFIG_DIR) / name, {});
    CHECK(c.train.base_lr == 0.1);
    CHECK(c.model.encoder[0].kernel == 5);
    CHECK(c.data_dir.is_absolute());
  }
}
