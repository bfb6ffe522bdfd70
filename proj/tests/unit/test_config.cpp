#include <doctest.h>

#include <cstdlib>

#include "qdot/config.hpp"
#include "qdot/emitter.hpp"
#include "qdot/presets.hpp"

using namespace qdot;

TEST_CASE("parse strips comments and whitespace") {
  const auto cfg = KeyValueConfig::parse("# header\n  a = 1.5  # trailing\n\nb=text\n");
  CHECK(cfg.number("a") == 1.5);
  CHECK(cfg.get("b").value() == "text");
  CHECK(cfg.line_of("a") == 2);
  CHECK(cfg.line_of("b") == 4);
  CHECK(cfg.line_of("zzz") == 0);
}

TEST_CASE("malformed lines carry their line number") {
  try {
    KeyValueConfig::parse("a = 1\nnot a pair\n");
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(e.line() == 2);
  }
  CHECK_THROWS_AS(KeyValueConfig::parse("a=1\na=2\n"), ConfigError);
}

TEST_CASE("non-numeric value names the key and line") {
  const auto cfg = KeyValueConfig::parse("x = 1\nrate = fast\n");
  try {
    cfg.number("rate");
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(e.line() == 2);
    CHECK(std::string(e.what()).find("rate") != std::string::npos);
  }
}

TEST_CASE("format_double round-trips") {
  for (double v : {0.0, 1.0, -0.57, 652e-12, 1.0 / 3.0, 76.2e6, 5e-324, 1.7976931348623157e308}) {
    CHECK(std::strtod(format_double(v).c_str(), nullptr) == v);
  }
  CHECK(format_double(0.1) == "0.1");
}

TEST_CASE("emitter config round-trips through text") {
  EmitterConfig c = calibrated_dot();
  c.blinking = TelegraphParams{1e6, 2e6};
  const auto text = c.to_config().to_text();
  const EmitterConfig back = EmitterConfig::from_config(KeyValueConfig::parse(text));
  CHECK(back.to_config().to_text() == text);
  CHECK(back.hash() == c.hash());
  CHECK(back.blinking.has_value());
  CHECK(back.diffusion.correlation_time == c.diffusion.correlation_time);
}

TEST_CASE("unknown emitter key is reported with its line") {
  try {
    EmitterConfig::from_config(KeyValueConfig::parse("lifetime = 652e-12\nlifetme = 1\n"));
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(e.line() == 2);
  }
}

TEST_CASE("hash changes with any parameter") {
  EmitterConfig a = calibrated_dot();
  EmitterConfig b = a;
  b.prep_fidelity = 0.86;
  CHECK(a.hash() != b.hash());
  CHECK(a.hash().size() == 16);
}
