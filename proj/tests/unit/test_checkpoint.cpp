#include <doctest.h>

#include <cstring>
#include <filesystem>
#include <fstream>

#include "cal/checkpoint.hpp"

using namespace cal;

namespace {

EncoderConfig config() {
  EncoderConfig c;
  c.vocab_size = 12;
  c.hidden = 8;
  c.layers = 1;
  c.heads = 2;
  c.ffn_dim = 16;
  c.max_len = 8;
  return c;
}

CheckpointErrc code_of(const std::string& bytes) {
  try {
    parse_checkpoint(bytes);
  } catch (const CheckpointError& e) {
    return e.code();
  }
  FAIL("expected CheckpointError");
  return CheckpointErrc::io;
}

}  // namespace

TEST_SUITE("checkpoint") {
  TEST_CASE("save and load reproduce every tensor bit-exactly") {
    auto p = EncoderParams::init(config(), 5);
    auto path = std::filesystem::temp_directory_path() / "cal_ckpt_test.ckpt";
    save_checkpoint(make_checkpoint(p, nullptr, {{"step", "7"}}), path);
    Checkpoint c = load_checkpoint(path);
    CHECK(c.config == p.config());
    CHECK(c.meta.at("step") == "7");
    auto q = params_from_checkpoint(c);
    auto a = p.named(), b = q.named();
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
      CHECK(a[i].first == b[i].first);
      CHECK(std::memcmp(a[i].second.data().data(), b[i].second.data().data(), a[i].second.numel() * 4) == 0);
    }
    CHECK(serialize_checkpoint(c) == serialize_checkpoint(make_checkpoint(q, nullptr, {{"step", "7"}})));
  }

  TEST_CASE("optimizer state roundtrips") {
    auto p = EncoderParams::init(config(), 5);
    AdamW opt(p.named());
    opt.first_moment(0)[3] = 0.25f;
    opt.set_step_count(11);
    Checkpoint c = parse_checkpoint(serialize_checkpoint(make_checkpoint(p, &opt)));
    AdamW opt2(p.named());
    restore_optimizer(c, opt2);
    CHECK(opt2.step_count() == 11);
    CHECK(opt2.first_moment(0)[3] == 0.25f);
  }

  TEST_CASE("corruption maps to distinct error codes") {
    auto p = EncoderParams::init(config(), 5);
    const std::string good = serialize_checkpoint(make_checkpoint(p));
    std::string bad_magic = good;
    bad_magic[0] = 'X';
    CHECK(code_of(bad_magic) == CheckpointErrc::magic_mismatch);
    std::string bad_version = good;
    bad_version[8] = 9;
    CHECK(code_of(bad_version) == CheckpointErrc::version_mismatch);
    CHECK(code_of(good.substr(0, good.size() - 5)) == CheckpointErrc::truncated);
    CHECK(code_of(good + "xx") == CheckpointErrc::malformed);
    CHECK_THROWS_AS(load_checkpoint("/nonexistent/x.ckpt"), CheckpointError);
  }

  TEST_CASE("mismatched config fails naming the tensor") {
    auto p = EncoderParams::init(config(), 5);
    Checkpoint c = make_checkpoint(p);
    EncoderConfig other = config();
    other.ffn_dim = 32;
    auto q = EncoderParams::init(other, 5);
    try {
      restore_params(c, q);
      FAIL("expected shape mismatch");
    } catch (const CheckpointError& e) {
      CHECK(e.code() == CheckpointErrc::shape_mismatch);
      CHECK(std::string(e.what()).find("layer0.ffn.w1") != std::string::npos);
    }
  }
}
