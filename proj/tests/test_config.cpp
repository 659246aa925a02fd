#include <fstream>

#include "dan/config.hpp"
#include "support.hpp"

using namespace dan;

namespace {

void write_text(const std::filesystem::path& p, const std::string& text) {
  std::ofstream out(p);
  out << text;
}

}  // namespace

TEST_SUITE("config") {
  TEST_CASE("defaults validate and mirror the reference schedule") {
    const RunConfig c;
    CHECK_NOTHROW(c.validate());
    CHECK(c.train.params.lr == 1e-4);
    CHECK(c.train.params.batch == 5);
    CHECK(c.train.params.seq_len == 20);
    CHECK(c.train.params.beta1 == 0.9);
    CHECK(c.train.params.beta2 == 0.999);
    CHECK(c.data.videos == 4);
    CHECK(c.data.frames == 20);
    CHECK(c.ablation_modes() == std::vector<std::string>{"ppn", "ppn+abdn", "full"});
  }

  TEST_CASE("file values and overrides") {
    test::TempDir dir("cfg");
    write_text(dir / "run.ini",
               "[run]\nseed = 7\n\n[data]\nvideos = 2\nmotion = translate dx=2 dy=0\n\n"
               "[train]\nlr = 0.001\nlr_decay_every = auto\npatch = 32\nflips = false\n");
    RunConfig c = RunConfig::from_file(dir / "run.ini");
    CHECK(c.seed == 7);
    CHECK(c.data.videos == 2);
    CHECK(c.data.motion == "translate dx=2 dy=0");
    CHECK(c.train.params.lr == 0.001);
    CHECK(c.train.params.lr_decay_every == 0);
    CHECK_FALSE(c.train.params.flips);
    CHECK(c.train_config().seed == 7);
    c.apply_override("train.batch=3");
    c.apply_override("model.abdn_depth = 2");
    CHECK(c.train.params.batch == 3);
    CHECK(c.model.dan().abdn.depth == 2);
    CHECK(c.get("train.batch") == "3");
    CHECK_NOTHROW(c.validate());
  }

  TEST_CASE("unknown keys and bad values are rejected") {
    test::TempDir dir("cfg_bad");
    write_text(dir / "typo.ini", "[train]\nlearning_rate = 0.1\n");
    CHECK_THROWS_AS(RunConfig::from_file(dir / "typo.ini"), ConfigError);
    write_text(dir / "section.ini", "[optim]\nlr = 0.1\n");
    CHECK_THROWS_AS(RunConfig::from_file(dir / "section.ini"), ConfigError);
    CHECK_THROWS_AS(RunConfig::from_file(dir / "absent.ini"), ConfigError);
    RunConfig c;
    CHECK_THROWS_AS(c.set("train.batch", "many"), ConfigError);
    CHECK_THROWS_AS(c.set("train.flips", "maybe"), ConfigError);
    CHECK_THROWS_AS(c.set("train.batch", "3x"), ConfigError);
    CHECK_THROWS_AS(c.apply_override("train.batch"), ConfigError);
    CHECK_THROWS_AS(c.apply_override("nodot=1"), ConfigError);
  }

  TEST_CASE("validation catches contract violations") {
    auto invalid = [](const std::string& key, const std::string& value) {
      RunConfig c;
      c.set(key, value);
      CHECK_THROWS_AS(c.validate(), ConfigError);
    };
    invalid("run.device", "cuda");
    invalid("train.patch", "30");
    invalid("train.seq_len", "2");
    invalid("train.lr", "-1");
    invalid("train.init", "zeros");
    invalid("data.motion", "spin");
    invalid("model.flow_backend", "spynet");
    invalid("model.abdn_preset", "huge");
    invalid("eval.modes", "ppn,fan-only");
    RunConfig deep;
    deep.set("model.abdn_depth", "4");
    deep.set("train.patch", "40");
    CHECK_THROWS_AS(deep.validate(), ConfigError);
    deep.set("train.patch", "48");
    CHECK_NOTHROW(deep.validate());
  }

  TEST_CASE("snapshots round trip through INI text and checkpoints") {
    test::TempDir dir("cfg_snap");
    RunConfig c;
    c.seed = 11;
    c.set("model.fan_width", "12");
    c.set("eval.modes", "ppn,full");
    write_text(dir / "snap.ini", c.to_ini());
    const RunConfig back = RunConfig::from_file(dir / "snap.ini");
    CHECK(back.snapshot() == c.snapshot());
    CHECK(back.fingerprint() == c.fingerprint());
    CHECK(RunConfig::from_snapshot(c.snapshot()).to_ini() == c.to_ini());
    RunConfig other = c;
    other.set("train.lr", "0.002");
    CHECK(other.fingerprint() != c.fingerprint());
  }

  TEST_CASE("every listed key is addressable") {
    RunConfig c;
    const auto keys = config_keys();
    CHECK(keys.size() == c.snapshot().size());
    for (const auto& key : keys) {
      CHECK(key.find('.') != std::string::npos);
      CHECK_NOTHROW(c.get(key));
    }
    CHECK_THROWS_AS(c.get("train.nope"), ConfigError);
  }

  TEST_CASE("model section builds the network configuration") {
    RunConfig c;
    c.set("model.ppn_width", "16");
    c.set("model.abdn_preset", "full");
    c.set("model.occ_alpha2", "0.75");
    const DanConfig d = c.model.dan();
    CHECK(d.ppn.width == 16);
    CHECK(d.abdn.depth == AbdnConfig::from_preset(AbdnPreset::kFull).depth);
    CHECK(d.occlusion.alpha2 == 0.75);
    c.set("model.abdn_width", "10");
    CHECK(c.model.dan().abdn.width == 10);
  }
}
