#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "gali/model.hpp"
#include "gali/recompute_oracle.hpp"
#include "test_util.hpp"

namespace gali {
namespace {

namespace fs = std::filesystem;
using testing::bitwise_equal;

ModelSpec small_spec() {
  ModelSpec s;
  s.layers = 2;
  s.heads = 2;
  s.head_dim = 8;
  s.hidden = 16;
  s.mlp_hidden = 32;
  return s;
}

std::vector<TokenId> random_tokens(std::size_t n, std::uint64_t seed) {
  PhiloxStream rng(seed, 7);
  std::vector<TokenId> t(n);
  for (auto& v : t) v = static_cast<TokenId>(rng.below(256));
  return t;
}

RunMode gali_mode(std::size_t l_tr, std::size_t s, std::size_t l_w,
                  NoiseMode noise = NoiseMode::seq_len, std::uint64_t seed = 3) {
  GaliConfig c;
  c.train_window = l_tr;
  c.chunk_size = s;
  c.local_window = l_w;
  c.noise = noise;
  c.seed = seed;
  return RunMode::with_gali(c);
}

class TempDir : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("gali_model_test_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }
  fs::path dir_;
};

using WeightsIo = TempDir;

TEST(ModelSpec, Validation) {
  EXPECT_NO_THROW(small_spec().validate());
  auto s = small_spec();
  s.hidden = 20;
  EXPECT_THROW(s.validate(), Error);
  s = small_spec();
  s.head_dim = 7;
  s.hidden = 14;
  EXPECT_THROW(s.validate(), Error);
  s = small_spec();
  s.layers = 0;
  EXPECT_THROW(s.validate(), Error);
}

TEST_F(WeightsIo, RoundTripIsBitIdentical) {
  const Model m = Model::random(small_spec(), 5);
  save_weights(dir_ / "w.bin", m);
  const Model back = load_weights(dir_ / "w.bin");
  Weights a = m.weights();
  Weights b = back.weights();
  const auto sa = tensor_slots(a);
  const auto sb = tensor_slots(b);
  ASSERT_EQ(sa.size(), sb.size());
  for (std::size_t i = 0; i < sa.size(); ++i) EXPECT_TRUE(bitwise_equal(*sa[i], *sb[i]));
  EXPECT_EQ(back.spec().heads, 2u);
  EXPECT_EQ(back.spec().rope_base, 10000.0);
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

void spit(const fs::path& p, const std::string& s) {
  std::ofstream os(p, std::ios::binary | std::ios::trunc);
  os << s;
}

std::string load_error(const fs::path& p) {
  try {
    load_weights(p);
  } catch (const Error& e) {
    return e.what();
  }
  return "";
}

TEST_F(WeightsIo, HeaderWithInconsistentHiddenRejected) {
  save_weights(dir_ / "w.bin", Model::random(small_spec(), 6));
  std::string s = slurp(dir_ / "w.bin");
  s.replace(s.find("hidden: 16"), 10, "hidden: 17");
  spit(dir_ / "bad.bin", s);
  EXPECT_NE(load_error(dir_ / "bad.bin").find("heads * head_dim"), std::string::npos);
}

TEST_F(WeightsIo, TruncatedPayloadIsChecksumFailure) {
  save_weights(dir_ / "w.bin", Model::random(small_spec(), 7));
  std::string s = slurp(dir_ / "w.bin");
  spit(dir_ / "short.bin", s.substr(0, s.size() - 100));
  EXPECT_NE(load_error(dir_ / "short.bin").find("checksum failure"), std::string::npos);

  s[s.size() - 20] ^= 0x01;
  spit(dir_ / "flip.bin", s);
  EXPECT_NE(load_error(dir_ / "flip.bin").find("checksum failure"), std::string::npos);
}

TEST_F(WeightsIo, MissingOrMisshapenTensorIsNamed) {
  save_weights(dir_ / "w.bin", Model::random(small_spec(), 8));
  const std::string s = slurp(dir_ / "w.bin");

  std::string missing = s;
  const auto pos = missing.find("tensor: layers.1.wk");
  missing.erase(pos, missing.find('\n', pos) - pos + 1);
  spit(dir_ / "missing.bin", missing);
  EXPECT_NE(load_error(dir_ / "missing.bin").find("layers.1.wk"), std::string::npos);

  std::string shape = s;
  shape.replace(shape.find("tensor: lm_head 16 257"), 22, "tensor: lm_head 16 256");
  spit(dir_ / "shape.bin", shape);
  const auto err = load_error(dir_ / "shape.bin");
  EXPECT_NE(err.find("lm_head"), std::string::npos) << err;
  EXPECT_NE(err.find("16x256"), std::string::npos) << err;
}

TEST_F(WeightsIo, TokenFiles) {
  const std::vector<TokenId> t{0, 255, 256, 17};
  write_tokens(dir_ / "t.txt", t);
  EXPECT_EQ(read_tokens(dir_ / "t.txt"), t);
  spit(dir_ / "bad.txt", "12\nabc\n");
  EXPECT_THROW(read_tokens(dir_ / "bad.txt"), Error);
  EXPECT_THROW(read_tokens(dir_ / "absent.txt"), Error);
}

TEST(Fnv1a64, KnownValues) {
  EXPECT_EQ(fnv1a64({}), 0xcbf29ce484222325ULL);
  const unsigned char a[] = {'a'};
  EXPECT_EQ(fnv1a64(a), 0xaf63dc4c8601ec8cULL);
}

TEST(Prefill, GaliInsideWindowIsBitwiseExact) {
  const Model m = Model::random(small_spec(), 9);
  const auto tokens = random_tokens(16, 9);
  const auto exact = forward_prefill(m, tokens, RunMode::exact());
  const auto gali = forward_prefill(m, tokens, gali_mode(16, 4, 4));
  EXPECT_TRUE(bitwise_equal(exact.logits, gali.logits));
}

TEST(Prefill, SecondChunkUsesHandTracedIds) {
  const Model m = Model::random(small_spec(), 10);
  const auto mode = gali_mode(4, 2, 2);
  EXPECT_EQ(plan_chunks(6, mode.gali).sizes, (std::vector<std::size_t>{4, 2}));
  const SpanPositions chunk2(m, mode, 6, 2, 0);
  ASSERT_TRUE(chunk2.interpolated());
  EXPECT_EQ(chunk2.ids().ids,
            (std::vector<Rational>{0, Rational(1, 2), 1, Rational(3, 2), 2, 3}));
  const SpanPositions chunk1(m, mode, 4, 4, 0);
  EXPECT_FALSE(chunk1.interpolated());
}

TEST(Prefill, AttentionRowsSumToOne) {
  const Model m = Model::random(small_spec(), 11);
  const auto tokens = random_tokens(40, 11);
  for (RunMode mode : {RunMode::exact(), gali_mode(16, 4, 4),
                       RunMode::with_baseline({BaselineMethod::pi, 1.0, 16})}) {
    mode.record_attention = true;
    const auto out = forward_prefill(m, tokens, mode);
    ASSERT_TRUE(out.attention.has_value());
    ASSERT_EQ(out.attention->probs.size(), 4u);
    for (const auto& p : out.attention->probs) {
      ASSERT_EQ(p.rows(), 40u);
      for (std::size_t r = 0; r < p.rows(); ++r) {
        double s = 0.0;
        for (std::size_t c = 0; c < p.cols(); ++c) {
          if (c > r) EXPECT_EQ(p(r, c), 0.0);
          s += p(r, c);
        }
        EXPECT_NEAR(s, 1.0, 1e-9);
      }
    }
  }
}

TEST(Prefill, Errors) {
  const Model m = Model::random(small_spec(), 12);
  EXPECT_THROW(forward_prefill(m, std::vector<TokenId>{}, RunMode::exact()), Error);
  EXPECT_THROW(forward_prefill(m, std::vector<TokenId>{1, 257}, RunMode::exact()), Error);
}

TEST(Decode, MatchesFromScratchRecomputation) {
  const Model m = Model::random(small_spec(), 13);
  const auto mode = gali_mode(8, 3, 2);
  const auto tokens = random_tokens(8 + 20, 13);
  const std::size_t prompt = 10;
  auto pre = forward_prefill(m, std::span(tokens).first(prompt), mode);
  std::vector<std::vector<double>> cached;
  for (std::size_t t = prompt; t < tokens.size(); ++t) {
    cached.push_back(decode_step(m, pre.cache, tokens[t], mode,
                                 static_cast<std::uint32_t>(t - prompt + 1)));
  }
  const auto schedule = inference_schedule(prompt, tokens.size() - prompt, mode);
  const Matrix oracle = recompute_logits(m, tokens, schedule, mode);
  for (std::size_t i = 0; i < cached.size(); ++i) {
    const auto row = oracle.row(prompt + i);
    for (std::size_t v = 0; v < row.size(); ++v) EXPECT_NEAR(cached[i][v], row[v], 1e-9);
  }
}

TEST(Decode, InsideWindowIsBitwiseExact) {
  const Model m = Model::random(small_spec(), 14);
  const auto tokens = random_tokens(12, 14);
  auto a = forward_prefill(m, std::span(tokens).first(10), RunMode::exact());
  auto b = forward_prefill(m, std::span(tokens).first(10), gali_mode(12, 4, 4));
  for (std::uint32_t s = 1; s <= 2; ++s) {
    const auto la = decode_step(m, a.cache, tokens[9 + s], RunMode::exact(), s);
    const auto lb = decode_step(m, b.cache, tokens[9 + s], gali_mode(12, 4, 4), s);
    EXPECT_TRUE(bitwise_equal(la, lb));
  }
}

TEST(Decode, QueryIdIsLastTrainingPosition) {
  const Model m = Model::random(small_spec(), 15);
  const auto mode = gali_mode(8, 4, 2);
  for (std::size_t len = 9; len <= 40; ++len) {
    const SpanPositions pos(m, mode, len, 1, 1);
    EXPECT_EQ(pos.ids().ids.back(), Rational(7));
  }
}

TEST(Decode, Errors) {
  const Model m = Model::random(small_spec(), 16);
  auto empty = KvCache::empty(m.spec());
  EXPECT_THROW(decode_step(m, empty, 1, RunMode::exact(), 1), Error);
  auto pre = forward_prefill(m, std::vector<TokenId>{1, 2}, RunMode::exact());
  EXPECT_THROW(decode_step(m, pre.cache, 300, RunMode::exact(), 1), Error);
}

TEST(Generate, ZeroTokensDeterminismAndBoundary) {
  const Model m = Model::random(small_spec(), 17);
  const auto prompt = random_tokens(7, 17);
  const auto mode = gali_mode(8, 2, 2);
  EXPECT_TRUE(generate(m, prompt, 0, mode).empty());

  const auto a = generate(m, random_tokens(20, 18), 10, mode);
  const auto b = generate(m, random_tokens(20, 18), 10, mode);
  EXPECT_EQ(a.size(), 10u);
  EXPECT_EQ(a, b);

  EXPECT_EQ(generate(m, prompt, 1, mode), generate(m, prompt, 1, RunMode::exact()));
}

TEST(Argmax, LowestIndexWinsTies) {
  const std::vector<double> v{1.0, 3.0, 3.0, -2.0};
  EXPECT_EQ(argmax(v), 1u);
}

TEST(AttentionMethodNames, RoundTrip) {
  for (auto a : {AttentionMethod::exact, AttentionMethod::gali, AttentionMethod::pi,
                 AttentionMethod::ntk, AttentionMethod::dyn_ntk}) {
    EXPECT_EQ(parse_attention_method(to_string(a)), a);
  }
  EXPECT_THROW(parse_attention_method("alibi"), Error);
}

}  // namespace
}  // namespace gali
