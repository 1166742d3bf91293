#include "introprior/config.hpp"

#include "testing.hpp"

#include <doctest.h>

#include <fstream>

using namespace introprior;
using namespace introprior::testing;

TEST_CASE("defaults validate and survive a text round trip") {
  const TrainConfig d;
  d.validate();
  const std::string text = d.to_text();
  CHECK(parse_config(text).to_text() == text);
  for (const auto& key : config_keys()) CHECK(text.find(key + " = ") != std::string::npos);
}

TEST_CASE("every key round-trips after an edit") {
  TrainConfig c;
  set_config_value(c, "dataset", "rings");
  set_config_value(c, "prior.kind", "vamp-to-mog");
  set_config_value(c, "hyper.beta_kl", "0.30000000000000004");
  set_config_value(c, "clip.K", "12.5");
  set_config_value(c, "mc.kl_mode", "mc");
  set_config_value(c, "prior.learnable_contributions", "false");
  set_config_value(c, "seed", "18446744073709551615");
  const TrainConfig back = parse_config(c.to_text());
  CHECK(back.to_text() == c.to_text());
  CHECK(back.dataset == "rings");
  CHECK(back.prior_kind == PriorKind::vamp_to_mog);
  CHECK(back.hyper.beta_kl == 0.30000000000000004);
  CHECK(back.clip_K == 12.5);
  CHECK(back.kl_mode == KlMode::mc);
  CHECK(!back.learnable_contributions);
  CHECK(back.seed == 18446744073709551615ull);
  for (const auto& key : config_keys()) CHECK(get_config_value(back, key) == get_config_value(c, key));
  set_config_value(c, "clip.K", "auto");
  CHECK(!c.clip_K.has_value());
}

TEST_CASE("comments, blank lines and whitespace are accepted") {
  const TrainConfig c = parse_config("# header\n\n  dataset =  checkerboard   # trailing\nhyper.alpha=3\n");
  CHECK(c.dataset == "checkerboard");
  CHECK(c.hyper.alpha == 3.0);
}

TEST_CASE("unknown keys, malformed lines and bad values are errors") {
  CHECK_THROWS_AS(parse_config("hyper.alpah = 2\n"), Error);
  CHECK_THROWS_AS(parse_config("hyper.alpha 2\n"), Error);
  CHECK_THROWS_AS(parse_config("hyper.alpha = two\n"), Error);
  CHECK_THROWS_AS(parse_config("hyper.alpha = 0.5\n"), Error);
  CHECK_THROWS_AS(parse_config("train.batch_size = 1.5\n"), Error);
  CHECK_THROWS_AS(parse_config("prior.kind = gmm\n"), Error);
  CHECK_THROWS_AS(parse_config("clip.enabled = maybe\n"), Error);
  CHECK_THROWS_AS(parse_config("dataset = moons\n"), Error);
  CHECK_THROWS_AS(parse_config("prior.modes = 0\n"), Error);
  try {
    parse_config("seed = 1\nbogus = 2\n");
    FAIL("expected an error");
  } catch (const Error& e) {
    // errors point at the offending line
    CHECK(std::string(e.what()).find(":2") != std::string::npos);
    CHECK(std::string(e.what()).find("bogus") != std::string::npos);
  }
}

TEST_CASE("adam keys set all three optimizers and objective options follow the config") {
  TrainConfig c;
  set_config_value(c, "adam.beta1", "0.5");
  CHECK(c.adam_encoder.beta1 == 0.5);
  CHECK(c.adam_decoder.beta1 == 0.5);
  CHECK(c.adam_prior.beta1 == 0.5);
  set_config_value(c, "mc.samples", "7");
  set_config_value(c, "fakes.include_reconstructions", "true");
  const ObjectiveOptions o = c.objective_options();
  CHECK(o.draws == 7);
  CHECK(o.fakes_include_reconstructions);
  CHECK(c.fakes() == c.batch_size);
  set_config_value(c, "train.fake_batch_size", "16");
  CHECK(c.fakes() == 16);
}

TEST_CASE("configs load from disk") {
  const auto dir = temp_dir("config");
  {
    std::ofstream f(dir / "a.cfg");
    f << "dataset = 2spirals\nprior.kind = mog\n";
  }
  const TrainConfig c = load_config((dir / "a.cfg").string());
  CHECK(c.dataset == "2spirals");
  CHECK(c.prior_kind == PriorKind::mog);
  CHECK_THROWS_AS(load_config((dir / "missing.cfg").string()), Error);
}
