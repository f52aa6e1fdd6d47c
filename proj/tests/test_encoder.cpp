#include <random>

#include "csmoe/encoder.hpp"
#include "csmoe/errors.hpp"
#include "csmoe/nn.hpp"
#include "doctest.h"
#include "oracle.hpp"
#include "test_util.hpp"

using namespace csmoe;
using csmoe::testing::random_matrix;

namespace {

EncoderConfig small_config(int layers = 2, int d = 8) {
  EncoderConfig c;
  c.num_layers = layers;
  c.d_model = d;
  c.d_ff = 2 * d;
  c.num_heads = 2;
  c.d_adapter = 4;
  return c;
}

ParamStore encoder_params(const EncoderConfig& c, std::uint64_t seed, bool moe = true) {
  ParamStore ps;
  std::mt19937_64 rng(seed);
  init_encoder_params(ps, c, moe, rng);
  return ps;
}

void zero(ParamStore& ps, const std::string& name) { ps.at(name).value.fill(0.0); }

// Adapter with LN(γ=1, β=0) on a 1x2 input, d_adapter = 1. LN([1, 3]) = [-1, 1].
Matrix hand_adapter(const Matrix& w_up) {
  ParamStore ps;
  ps.add("ad.ln.gamma", Matrix{{1, 1}});
  ps.add("ad.ln.beta", Matrix{{0, 0}});
  ps.add("ad.w_up", w_up);
  ps.add("ad.w_down", Matrix{{1, 1}});
  ad::Tape t;
  return adapter_forward(t, t.constant(Matrix{{1, 3}}), ps, "ad", 1e-12).value();
}

}  // namespace

TEST_CASE("adapter: negative up-projection is cut by ReLU") {
  CHECK(hand_adapter(Matrix{{1}, {0}}) == Matrix{{1, 3}});
}

TEST_CASE("adapter: positive path adds W_d") {
  CHECK(max_abs_diff(hand_adapter(Matrix{{0}, {1}}), Matrix{{2, 4}}) < 1e-11);
}

TEST_CASE("adapter: zero W_u is the identity bit for bit") {
  const auto c = small_config();
  ParamStore ps = encoder_params(c, 3);
  std::mt19937_64 rng(5);
  for (const char* lang : {"cn", "en"}) {
    const std::string p = std::string("enc.layer0.adapter_") + lang;
    zero(ps, p + ".w_up");
    const Matrix a = random_matrix(7, c.d_model, rng, -3, 3);
    ad::Tape t;
    CHECK(adapter_forward(t, t.constant(a), ps, p, c.eps).value() == a);
  }
}

TEST_CASE("adapter matches straight-line evaluation") {
  const auto c = small_config();
  ParamStore ps = encoder_params(c, 11);
  std::mt19937_64 rng(12);
  const Matrix a = random_matrix(5, c.d_model, rng);
  ad::Tape t;
  const Matrix got = adapter_forward(t, t.constant(a), ps, "enc.layer1.adapter_en", c.eps).value();
  CHECK(oracle::max_diff(oracle::adapter(oracle::from(a), ps, "enc.layer1.adapter_en", c.eps), got) < 1e-12);
}

TEST_CASE("gate: zero weights give the uniform mixture") {
  const auto c = small_config();
  ParamStore ps = encoder_params(c, 4);
  zero(ps, "enc.layer0.gate.w");
  std::mt19937_64 rng(1);
  const Matrix h_cn = random_matrix(4, c.d_model, rng), h_en = random_matrix(4, c.d_model, rng),
               a = random_matrix(4, c.d_model, rng);
  ad::Tape t;
  auto g = gate_fuse(t, t.constant(h_cn), t.constant(h_en), t.constant(a), ps, "enc.layer0.gate");
  for (int r = 0; r < 4; ++r) {
    CHECK(g.gate.value()(r, 0) == 0.5);
    CHECK(g.gate.value()(r, 1) == 0.5);
  }
  Matrix mean = h_cn;
  mean += h_en;
  mean *= 0.5;
  CHECK(max_abs_diff(g.h_out.value(), mean) < 1e-15);
}

TEST_CASE("gate: saturated bias selects the CN adapter") {
  const auto c = small_config();
  ParamStore ps = encoder_params(c, 4);
  zero(ps, "enc.layer0.gate.w");
  ps.at("enc.layer0.gate.b").value = Matrix{{20, -20}};
  std::mt19937_64 rng(2);
  const Matrix h_cn = random_matrix(3, c.d_model, rng), h_en = random_matrix(3, c.d_model, rng);
  ad::Tape t;
  auto g = gate_fuse(t, t.constant(h_cn), t.constant(h_en), t.constant(h_cn), ps, "enc.layer0.gate");
  for (int r = 0; r < 3; ++r) CHECK(g.gate.value()(r, 1) < 1e-17);
  CHECK(max_abs_diff(g.h_out.value(), h_cn) < 1e-15);
}

TEST_CASE("gate: convex combination and row sums over random instances") {
  const auto c = small_config();
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 50; ++trial) {
    ParamStore ps = encoder_params(c, 100 + static_cast<std::uint64_t>(trial));
    ps.at("enc.layer0.gate.b").value = random_matrix(1, 2, rng, -3, 3);
    const Matrix h_cn = random_matrix(6, c.d_model, rng, -5, 5), h_en = random_matrix(6, c.d_model, rng, -5, 5),
                 a = random_matrix(6, c.d_model, rng, -5, 5);
    ad::Tape t;
    auto g = gate_fuse(t, t.constant(h_cn), t.constant(h_en), t.constant(a), ps, "enc.layer0.gate");
    const Matrix& gv = g.gate.value();
    const Matrix& out = g.h_out.value();
    for (int r = 0; r < 6; ++r) {
      CHECK(gv(r, 0) >= 0.0);
      CHECK(gv(r, 1) >= 0.0);
      CHECK(std::abs(gv(r, 0) + gv(r, 1) - 1.0) < 1e-9);
      for (int j = 0; j < c.d_model; ++j) {
        CHECK(out(r, j) >= std::min(h_cn(r, j), h_en(r, j)) - 1e-9);
        CHECK(out(r, j) <= std::max(h_cn(r, j), h_en(r, j)) + 1e-9);
      }
    }
    auto [want, want_gate] = oracle::gate(oracle::from(h_cn), oracle::from(h_en), oracle::from(a), ps, "enc.layer0.gate");
    CHECK(oracle::max_diff(want, out) < 1e-12);
    CHECK(oracle::max_diff(want_gate, gv) < 1e-12);
  }
}

TEST_CASE("shared layer: zero parameters leave only the residual path") {
  const auto c = small_config(1);
  ParamStore ps = encoder_params(c, 8, false);
  for (Parameter* p : ps.all()) p->value.fill(0.0);
  std::mt19937_64 rng(3);
  const Matrix x = random_matrix(5, c.d_model, rng);
  ad::Tape t;
  CHECK(shared_layer_forward(t, t.constant(x), ps, "enc.layer0", c).value() == x);
}

TEST_CASE("shared layer: a single frame keeps its shape") {
  const auto c = small_config(1);
  ParamStore ps = encoder_params(c, 8);
  std::mt19937_64 rng(3);
  const Matrix x = random_matrix(1, c.d_model, rng);
  ad::Tape t;
  const Matrix y = shared_layer_forward(t, t.constant(x), ps, "enc.layer0", c).value();
  CHECK(y.rows() == 1);
  CHECK(y.cols() == c.d_model);
  CHECK(oracle::max_diff(oracle::shared_layer(oracle::from(x), ps, "enc.layer0", c.num_heads, c.eps), y) < 1e-12);
}

TEST_CASE("shared layer matches straight-line evaluation on a 3x8 input") {
  const auto c = small_config(1, 8);
  ParamStore ps = encoder_params(c, 21);
  std::mt19937_64 rng(22);
  for (Parameter* p : ps.all())
    if (p->name.find("_ln.") != std::string::npos) p->value = random_matrix(1, c.d_model, rng, 0.5, 1.5);
  const Matrix x = random_matrix(3, 8, rng);
  ad::Tape t;
  const Matrix y = shared_layer_forward(t, t.constant(x), ps, "enc.layer0", c).value();
  CHECK(oracle::max_diff(oracle::shared_layer(oracle::from(x), ps, "enc.layer0", c.num_heads, c.eps), y) < 1e-12);
}

TEST_CASE("shared layer rejects a width mismatch") {
  const auto c = small_config(1);
  ParamStore ps = encoder_params(c, 8);
  ad::Tape t;
  CHECK_THROWS_AS(shared_layer_forward(t, t.constant(Matrix(2, c.d_model + 1)), ps, "enc.layer0", c), ConfigError);
}

TEST_CASE("encode: one layer with identity adapters and uniform gate equals the shared layer") {
  const auto c = small_config(1);
  ParamStore ps = encoder_params(c, 30);
  zero(ps, "enc.layer0.adapter_cn.w_up");
  zero(ps, "enc.layer0.adapter_en.w_up");
  zero(ps, "enc.layer0.gate.w");
  std::mt19937_64 rng(31);
  const Matrix x = random_matrix(6, c.d_model, rng);
  ad::Tape t;
  const Matrix got = encode(t, x, ps, c, true).h_mix.value();
  Matrix xp = x;
  xp += nn::sinusoidal_positions(6, c.d_model);
  ad::Tape t2;
  CHECK(max_abs_diff(got, shared_layer_forward(t2, t2.constant(xp), ps, "enc.layer0", c).value()) < 1e-15);
}

TEST_CASE("encode: full stack matches straight-line evaluation") {
  const auto c = small_config(3);
  ParamStore ps = encoder_params(c, 40);
  std::mt19937_64 rng(41);
  for (Parameter* p : ps.all())
    if (p->name.find(".b") == p->name.size() - 2) p->value = random_matrix(1, p->value.cols(), rng);
  const Matrix x = random_matrix(7, c.d_model, rng);
  ad::Tape t;
  const EncodeOutput out = encode(t, x, ps, c, true);

  oracle::Mat h = oracle::plus(oracle::from(x), oracle::positions(7, static_cast<std::size_t>(c.d_model)));
  for (int l = 0; l < c.num_layers; ++l) {
    const std::string p = encoder_layer_prefix(l);
    const auto a = oracle::shared_layer(h, ps, p, c.num_heads, c.eps);
    const auto h_cn = oracle::adapter(a, ps, p + ".adapter_cn", c.eps);
    const auto h_en = oracle::adapter(a, ps, p + ".adapter_en", c.eps);
    const auto [fused, g] = oracle::gate(h_cn, h_en, a, ps, p + ".gate");
    const LayerCache& cache = out.caches[static_cast<std::size_t>(l)];
    CHECK(oracle::max_diff(a, cache.a.value()) < 1e-11);
    CHECK(oracle::max_diff(h_cn, cache.h_cn.value()) < 1e-11);
    CHECK(oracle::max_diff(h_en, cache.h_en.value()) < 1e-11);
    CHECK(oracle::max_diff(g, cache.gate.value()) < 1e-11);
    CHECK(oracle::max_diff(fused, cache.h_out.value()) < 1e-11);
    h = fused;
  }
  CHECK(oracle::max_diff(h, out.h_mix.value()) < 1e-11);
}

TEST_CASE("encode: shapes and cache contract for several lengths") {
  const auto c = small_config(2);
  ParamStore ps = encoder_params(c, 50);
  std::mt19937_64 rng(51);
  for (int T : {1, 2, 7, 64}) {
    ad::Tape t;
    const EncodeOutput out = encode(t, random_matrix(T, c.d_model, rng), ps, c, true);
    REQUIRE(out.caches.size() == 2);
    CHECK(out.h_mix.value() == out.caches.back().h_out.value());
    for (const LayerCache& cache : out.caches) {
      for (const ad::Var* v : {&cache.a, &cache.h_cn, &cache.h_en, &cache.h_out}) {
        CHECK(v->rows() == T);
        CHECK(v->cols() == c.d_model);
      }
      const Matrix& g = cache.gate.value();
      CHECK(g.rows() == T);
      CHECK(g.cols() == 2);
      for (int r = 0; r < T; ++r) {
        CHECK(std::abs(g(r, 0) + g(r, 1) - 1.0) < 1e-9);
        for (int j = 0; j < c.d_model; ++j) {
          const double want = g(r, 0) * cache.h_cn.value()(r, j) + g(r, 1) * cache.h_en.value()(r, j);
          CHECK(std::abs(cache.h_out.value()(r, j) - want) < 1e-12);
        }
      }
    }
  }
}

TEST_CASE("encode: baseline stack has no adapters and is deterministic") {
  const auto c = small_config(2);
  ParamStore ps = encoder_params(c, 60, false);
  for (const auto& name : ps.names()) {
    CHECK(name.find("adapter") == std::string::npos);
    CHECK(name.find("gate") == std::string::npos);
  }
  std::mt19937_64 rng(61);
  const Matrix x = random_matrix(9, c.d_model, rng);
  ad::Tape t1, t2;
  const EncodeOutput a = encode(t1, x, ps, c, false);
  const EncodeOutput b = encode(t2, x, ps, c, false);
  CHECK(a.h_mix.value() == b.h_mix.value());
  CHECK_FALSE(a.caches[0].gate.valid());
}

TEST_CASE("encode: errors name the failing layer") {
  const auto c = small_config(2);
  ParamStore ps = encoder_params(c, 70);
  ps.at("enc.layer1.attn.wq").value = Matrix(c.d_model + 2, c.d_model);
  ad::Tape t;
  try {
    encode(t, Matrix(3, c.d_model), ps, c, true);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("layer 1") != std::string::npos);
  }
}
