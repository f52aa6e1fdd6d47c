#include <random>

#include "csmoe/cla.hpp"
#include "csmoe/ctc.hpp"
#include "csmoe/errors.hpp"
#include "csmoe/gradcheck.hpp"
#include "doctest.h"
#include "test_util.hpp"

using namespace csmoe;
using csmoe::testing::random_matrix;

namespace {

constexpr int kUnk = Vocab::kUnk;

std::vector<LayerCache> constant_caches(ad::Tape& t, const std::vector<Matrix>& cn, const std::vector<Matrix>& en) {
  std::vector<LayerCache> caches(cn.size());
  for (std::size_t l = 0; l < cn.size(); ++l) {
    caches[l].h_cn = t.constant(cn[l]);
    caches[l].h_en = t.constant(en[l]);
  }
  return caches;
}

ParamStore cla_heads(int d, int vocab, std::uint64_t seed) {
  ParamStore ps;
  std::mt19937_64 rng(seed);
  init_cla_params(ps, d, vocab, rng);
  for (Parameter* p : ps.all()) p->value = random_matrix(p->value.rows(), p->value.cols(), rng, -1.5, 1.5);
  return ps;
}

Matrix log_softmax_head(const Matrix& h, const ParamStore& ps, const std::string& head) {
  Matrix z = matmul(h, ps.at(head + ".w").value);
  for (int r = 0; r < z.rows(); ++r)
    for (int c = 0; c < z.cols(); ++c) z(r, c) += ps.at(head + ".b").value(0, c);
  return ad::log_softmax_rows(z);
}

}  // namespace

TEST_CASE("mask_targets examples") {
  const std::vector<int> tokens{10, 11, 30};
  const std::vector<Lang> langs{Lang::CN, Lang::CN, Lang::EN};
  const MaskedTargets m = mask_targets(tokens, langs);
  CHECK(m.y_cn == std::vector<int>{10, 11, kUnk});
  CHECK(m.y_en == std::vector<int>{kUnk, kUnk, 30});

  const MaskedTargets all_cn = mask_targets(std::vector<int>{7, 8}, std::vector<Lang>{Lang::CN, Lang::CN});
  CHECK(all_cn.y_en == std::vector<int>{kUnk, kUnk});
  CHECK(all_cn.y_cn == std::vector<int>{7, 8});

  const MaskedTargets empty = mask_targets(std::vector<int>{}, std::vector<Lang>{});
  CHECK(empty.y_cn.empty());
  CHECK(empty.y_en.empty());
}

TEST_CASE("mask_targets rejects unknown tags and length mismatches") {
  const std::vector<int> tokens{7, 8};
  CHECK_THROWS_AS(mask_targets(tokens, std::vector<std::string>{"CN", "FR"}), TagError);
  CHECK(mask_targets(tokens, std::vector<std::string>{"CN", "EN"}).y_en == std::vector<int>{kUnk, 8});
  CHECK_THROWS_AS(mask_targets(tokens, std::vector<Lang>{Lang::CN}), ContractError);
}

TEST_CASE("mask_targets partitions every position") {
  std::mt19937_64 rng(1);
  std::bernoulli_distribution coin(0.5);
  std::uniform_int_distribution<int> tok(Vocab::kFirstUnit, 45);
  for (int trial = 0; trial < 200; ++trial) {
    const int n = trial % 15;
    std::vector<int> tokens(static_cast<std::size_t>(n));
    std::vector<Lang> langs(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
      tokens[static_cast<std::size_t>(i)] = tok(rng);
      langs[static_cast<std::size_t>(i)] = coin(rng) ? Lang::CN : Lang::EN;
    }
    const MaskedTargets m = mask_targets(tokens, langs);
    REQUIRE(m.y_cn.size() == tokens.size());
    REQUIRE(m.y_en.size() == tokens.size());
    for (std::size_t i = 0; i < tokens.size(); ++i) {
      CHECK(((m.y_cn[i] == kUnk) != (m.y_en[i] == kUnk)));
      const int kept = m.y_cn[i] == kUnk ? m.y_en[i] : m.y_cn[i];
      CHECK(kept == tokens[i]);
      CHECK((m.y_cn[i] != kUnk) == (langs[i] == Lang::CN));
    }
  }
}

TEST_CASE("cross-layer mean arithmetic") {
  std::mt19937_64 rng(2);
  const Matrix x = random_matrix(4, 3, rng);
  Matrix x3 = x;
  x3 *= 3.0;
  Matrix x2 = x;
  x2 *= 2.0;
  ad::Tape t;
  {
    auto caches = constant_caches(t, {x}, {x3});
    CHECK(cross_layer_adapter_mean(caches, Lang::CN).value() == x);
    CHECK(cross_layer_adapter_mean(caches, Lang::EN).value() == x3);
  }
  {
    auto caches = constant_caches(t, {x, x3}, {x, x});
    CHECK(max_abs_diff(cross_layer_adapter_mean(caches, Lang::CN).value(), x2) < 1e-15);
    CHECK(cross_layer_adapter_mean(caches, Lang::EN).value() == x);
  }
  CHECK_THROWS_AS(cross_layer_adapter_mean(std::vector<LayerCache>{}, Lang::CN), ContractError);
}

TEST_CASE("cross-layer mean matches recomputation over three layers") {
  std::mt19937_64 rng(3);
  std::vector<Matrix> cn, en;
  for (int l = 0; l < 3; ++l) {
    cn.push_back(random_matrix(5, 4, rng));
    en.push_back(random_matrix(5, 4, rng));
  }
  ad::Tape t;
  auto caches = constant_caches(t, cn, en);
  const Matrix got = cross_layer_adapter_mean(caches, Lang::EN).value();
  for (int r = 0; r < 5; ++r)
    for (int c = 0; c < 4; ++c) CHECK(got(r, c) == doctest::Approx((en[0](r, c) + en[1](r, c) + en[2](r, c)) / 3).epsilon(1e-14));
}

TEST_CASE("CLA combination is the mean of the two losses") {
  ad::Tape t;
  CHECK(combine_cla(t.constant(Matrix::scalar(2.0)), t.constant(Matrix::scalar(4.0))).scalar() == 3.0);
  CHECK(combine_cla(t.constant(Matrix::scalar(4.0)), t.constant(Matrix::scalar(2.0))).scalar() == 3.0);
}

TEST_CASE("CLA loss matches alignment enumeration on a toy instance") {
  const int d = 3, vocab = 8;
  // Vocabulary: 0 blank, 1 <Unk>, ..., 6 one CN unit, 7 one EN unit.
  ParamStore ps = cla_heads(d, vocab, 4);
  std::mt19937_64 rng(5);
  std::vector<Matrix> cn{random_matrix(4, d, rng), random_matrix(4, d, rng)};
  std::vector<Matrix> en{random_matrix(4, d, rng), random_matrix(4, d, rng)};
  const MaskedTargets masked = mask_targets(std::vector<int>{6, 7}, std::vector<Lang>{Lang::CN, Lang::EN});

  ad::Tape t;
  auto caches = constant_caches(t, cn, en);
  const ClaLoss loss = cla_loss(t, caches, masked, ps);

  Matrix mean_cn = cn[0];
  mean_cn += cn[1];
  mean_cn *= 0.5;
  Matrix mean_en = en[0];
  mean_en += en[1];
  mean_en *= 0.5;
  const double want_cn = ctc_brute_force({log_softmax_head(mean_cn, ps, "cla.cn"), Vocab::kBlank}, masked.y_cn);
  const double want_en = ctc_brute_force({log_softmax_head(mean_en, ps, "cla.en"), Vocab::kBlank}, masked.y_en);
  CHECK(loss.cn.scalar() == doctest::Approx(want_cn).epsilon(1e-12));
  CHECK(loss.en.scalar() == doctest::Approx(want_en).epsilon(1e-12));
  CHECK(loss.total.scalar() == doctest::Approx((want_cn + want_en) / 2).epsilon(1e-12));
}

TEST_CASE("CLA loss is symmetric in the two languages") {
  const int d = 4, vocab = 10;
  ParamStore ps = cla_heads(d, vocab, 6);
  ParamStore swapped;
  for (const char* part : {".w", ".b"}) {
    swapped.add(std::string("cla.cn") + part, ps.at(std::string("cla.en") + part).value);
    swapped.add(std::string("cla.en") + part, ps.at(std::string("cla.cn") + part).value);
  }
  std::mt19937_64 rng(7);
  std::vector<Matrix> cn{random_matrix(9, d, rng)}, en{random_matrix(9, d, rng)};
  const std::vector<int> tokens{6, 8, 9};
  const MaskedTargets m = mask_targets(tokens, std::vector<Lang>{Lang::CN, Lang::EN, Lang::EN});
  const MaskedTargets m_swapped{m.y_en, m.y_cn};
  ad::Tape t;
  auto a = constant_caches(t, cn, en);
  auto b = constant_caches(t, en, cn);
  CHECK(cla_loss(t, a, m, ps).total.scalar() == doctest::Approx(cla_loss(t, b, m_swapped, swapped).total.scalar()).epsilon(1e-14));
}

TEST_CASE("CLA infeasibility names the language") {
  ParamStore ps = cla_heads(3, 10, 8);
  ad::Tape t;
  std::mt19937_64 rng(9);
  auto caches = constant_caches(t, {random_matrix(2, 3, rng)}, {random_matrix(2, 3, rng)});
  // y_cn = [<Unk>, <Unk>, 6] needs 4 frames.
  const MaskedTargets m = mask_targets(std::vector<int>{8, 9, 6}, std::vector<Lang>{Lang::EN, Lang::EN, Lang::CN});
  try {
    cla_loss(t, caches, m, ps);
    FAIL("expected FeasibilityError");
  } catch (const FeasibilityError& e) {
    CHECK(std::string(e.what()).find("CN") != std::string::npos);
    CHECK(e.frames() == 2);
  }
}

TEST_CASE("CLA loss gradients pass a finite-difference check") {
  const int d = 4, vocab = 10;
  ParamStore ps = cla_heads(d, vocab, 10);
  std::mt19937_64 rng(11);
  for (int l = 0; l < 2; ++l) {
    ps.add("h_cn" + std::to_string(l), random_matrix(7, d, rng));
    ps.add("h_en" + std::to_string(l), random_matrix(7, d, rng));
  }
  const MaskedTargets m = mask_targets(std::vector<int>{6, 8, 9}, std::vector<Lang>{Lang::CN, Lang::EN, Lang::EN});
  const LossBuilder loss = [&](ad::Tape& t, ParamStore& p) {
    std::vector<LayerCache> caches(2);
    for (int l = 0; l < 2; ++l) {
      caches[static_cast<std::size_t>(l)].h_cn = t.param(p.at("h_cn" + std::to_string(l)));
      caches[static_cast<std::size_t>(l)].h_en = t.param(p.at("h_en" + std::to_string(l)));
    }
    return cla_loss(t, caches, m, p).total;
  };
  const GradCheckReport report = finite_diff_check(loss, ps);
  for (const auto& g : report.groups()) {
    INFO(g.group);
    CHECK(g.rel_error < 1e-6);
  }
}
