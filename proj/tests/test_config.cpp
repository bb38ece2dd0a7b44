#include <doctest.h>

#include "groupflow/config.hpp"

using namespace groupflow;

namespace {

ErrorKind kind_of(const std::string& text) {
  try {
    parse_config(text);
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("expected an error");
  return ErrorKind::InvalidArgument;
}

}  // namespace

TEST_CASE("config: presets and overrides") {
  const RunConfig minimal = parse_config(R"({"version": 1})");
  CHECK(minimal.preset == "desk-fitting");
  CHECK(minimal.registration.group == GroupKind::SE3);

  const RunConfig c = parse_config(R"({
    "version": 1, "preset": "synthetic", "group": "sim3", "seed": 17, "iterations": 40,
    "network": {"hidden_dim": 32, "residual": "first-to-last"},
    "post_scale": {"scale": 0.25},
    "loss": {"bidirectional": true, "hess_weight": 0.5},
    "synth": {"noise_sigma": 0.02, "control_grid": [5, 6, 7]}
  })");
  const auto& r = c.registration;
  CHECK(r.group == GroupKind::SIM3);
  CHECK(r.siren.out_dim == 7);
  CHECK(r.seed == 17);
  CHECK(r.iterations == 40);
  CHECK(r.siren.hidden_dim == 32);
  CHECK(r.siren.residual == ResidualMode::FirstToLast);
  CHECK(r.siren.w0 == preset(Experiment::Synthetic, GroupKind::SIM3).siren.w0);
  CHECK(r.post_scale.scale_channel == 0.25);
  CHECK(r.loss.bidirectional);
  CHECK(r.loss.hess_weight == 0.5);
  CHECK(c.synth.noise_sigma == 0.02);
  CHECK(c.synth.control_grid == Dims{5, 6, 7});

  const RunConfig again = parse_config(dump_config(c));
  CHECK(dump_config(again) == dump_config(c));
  CHECK(config_hash(again) == config_hash(c));
  CHECK(config_hash(minimal) != config_hash(c));
  CHECK_FALSE(parse_config(R"({"version": 1, "eval_grid": null, "preset": "desk-synthetic"})").registration.eval_grid);
}

TEST_CASE("config: invalid documents") {
  CHECK(kind_of("{") == ErrorKind::Format);
  CHECK(kind_of(R"({"preset": "fitting"})") == ErrorKind::Format);
  CHECK(kind_of(R"({"version": 2})") == ErrorKind::Unsupported);
  CHECK(kind_of(R"({"version": 1, "bogus": 1})") == ErrorKind::Format);
  CHECK(kind_of(R"({"version": 1, "loss": {"ncc": 1}})") == ErrorKind::Format);
  CHECK(kind_of(R"({"version": 1, "iterations": "many"})") == ErrorKind::Format);
  CHECK(kind_of(R"({"version": 1, "eval_grid": [1, 2]})") == ErrorKind::Format);
  CHECK(kind_of(R"({"version": 1, "iterations": 0})") == ErrorKind::InvalidArgument);
  CHECK(kind_of(R"({"version": 1, "preset": "nope"})") == ErrorKind::InvalidArgument);
  CHECK(kind_of(R"({"version": 1, "group": "so3"})") == ErrorKind::InvalidArgument);
  CHECK_THROWS_AS(load_config("/nonexistent/config.json"), Error);
}
