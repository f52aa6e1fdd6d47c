// Acceptance suite: one PASS/FAIL line per criterion, tolerances pinned below.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "csmoe/boundary.hpp"
#include "csmoe/cla.hpp"
#include "csmoe/ctc.hpp"
#include "csmoe/encoder.hpp"
#include "csmoe/errors.hpp"
#include "csmoe/harness.hpp"
#include "csmoe/nn.hpp"
#include "csmoe/objective.hpp"

using namespace csmoe;

namespace {

// Criterion 1
constexpr int kCtcInstances = 200;
constexpr double kCtcTolerance = 1e-9;
constexpr double kCtcSeconds = 10.0;
// Criterion 2
constexpr double kGradTolerance = 1e-4;
constexpr double kGradSeconds = 120.0;
// Criterion 3
constexpr double kInvariantSeconds = 30.0;
constexpr double kRowSumTolerance = 1e-9;
constexpr double kLinearityTolerance = 1e-12;
constexpr double kIdentityTolerance = 1e-12;
// Criterion 4
constexpr int kMetricPairs = 50;
constexpr double kReductionTolerance = 0.01;
// Criterion 5
constexpr int kTrainUtterances = 2000;
constexpr int kDevUtterances = 100;
constexpr int kTestUtterances = 200;
constexpr int kAblationEpochs = 20;
constexpr double kAblationFinalLrScale = 0.0;
constexpr double kMerSlack = 0.5;  // absolute points per step
constexpr double kAblationSeconds = 15 * 60.0;
// Criterion 6
constexpr double kGateSeparation = 0.2;
// Criterion 7
constexpr int kBoundaryRadius = 2;
constexpr double kConcentrationFactor = 1.5;
// Criterion 8
constexpr int kOverfitSteps = 200;
constexpr double kOverfitReduction = 0.5;

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

void report(int criterion, const std::string& name, const Outcome& o, std::vector<int>& failed) {
  std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << criterion << " (" << name << "): " << o.detail
            << std::endl;
  if (!o.pass) failed.push_back(criterion);
}

// ---------------------------------------------------------------- criterion 1

Outcome ctc_oracle() {
  const auto start = Clock::now();
  std::mt19937_64 rng(20240601);
  double worst = 0.0;
  int done = 0;
  while (done < kCtcInstances) {
    const int V = std::uniform_int_distribution<int>(2, 4)(rng);
    const int T = std::uniform_int_distribution<int>(1, 6)(rng);
    const int L = std::uniform_int_distribution<int>(0, 3)(rng);
    std::vector<int> target(static_cast<std::size_t>(L));
    for (int& y : target) y = std::uniform_int_distribution<int>(1, V - 1)(rng);
    if (ctc_min_frames(target) > T) continue;
    Matrix logits(T, V);
    std::normal_distribution<double> normal(0.0, 2.0);
    for (double& v : logits.data()) v = normal(rng);
    const LogProbLattice lattice{ad::log_softmax_rows(logits), 0};
    worst = std::max(worst, std::abs(ctc_loss(lattice, target) - ctc_brute_force(lattice, target)));
    ++done;
  }
  const double secs = seconds_since(start);
  return {worst < kCtcTolerance && secs < kCtcSeconds,
          std::to_string(done) + " instances, max |dp - brute| = " + fmt("%.3g", worst) + " (< " +
              fmt("%.0e", kCtcTolerance) + "), " + fmt("%.2f", secs) + " s (< " + fmt("%.0f", kCtcSeconds) + " s)"};
}

// ---------------------------------------------------------------- criterion 2

Outcome gradient_check() {
  const auto start = Clock::now();
  GradcheckOptions opt;
  opt.model = toy_model_config();
  opt.frames = 12;
  opt.tolerance = kGradTolerance;
  const GradcheckResult r = run_gradcheck(opt);
  const double secs = seconds_since(start);
  double worst = 0.0;
  std::string worst_group;
  for (const auto& g : r.groups)
    if (g.rel_error >= worst) {
      worst = g.rel_error;
      worst_group = g.group;
    }
  return {r.passed() && secs < kGradSeconds,
          std::to_string(r.groups.size()) + " groups, " + std::to_string(r.param_count) + " scalars, worst " +
              worst_group + " = " + fmt("%.3g", worst) + " (< " + fmt("%.0e", kGradTolerance) + "), " +
              fmt("%.1f", secs) + " s (< " + fmt("%.0f", kGradSeconds) + " s)"};
}

// ---------------------------------------------------------------- criterion 3

Matrix random_matrix(int rows, int cols, std::mt19937_64& rng, double scale = 1.0) {
  std::uniform_real_distribution<double> dist(-scale, scale);
  Matrix m(rows, cols);
  for (double& v : m.data()) v = dist(rng);
  return m;
}

Outcome structural_invariants() {
  const auto start = Clock::now();
  std::mt19937_64 rng(7);
  std::vector<std::string> broken;
  auto expect = [&broken](bool ok, const std::string& what) {
    if (!ok) broken.push_back(what);
  };

  // Adapter residual identity: zero down-projection returns the input.
  for (int trial = 0; trial < 20; ++trial) {
    ParamStore ps;
    nn::add_layer_norm(ps, "a.ln", 8);
    ps.add("a.w_up", random_matrix(8, 4, rng));
    ps.add("a.w_down", Matrix(4, 8));
    ad::Tape t;
    const Matrix x = random_matrix(5, 8, rng, 3.0);
    expect(adapter_forward(t, t.constant(x), ps, "a", 1e-5).value() == x, "adapter residual identity");
  }

  // Gate convexity and row sums.
  for (int trial = 0; trial < 20; ++trial) {
    ParamStore ps;
    ps.add("g.w", random_matrix(8, 2, rng, 2.0));
    ps.add("g.b", random_matrix(1, 2, rng));
    ad::Tape t;
    const Matrix h_cn = random_matrix(6, 8, rng), h_en = random_matrix(6, 8, rng), a = random_matrix(6, 8, rng);
    const GateOutput g = gate_fuse(t, t.constant(h_cn), t.constant(h_en), t.constant(a), ps, "g");
    const Matrix& gate = g.gate.value();
    const Matrix& out = g.h_out.value();
    for (int r = 0; r < 6; ++r) {
      expect(gate(r, 0) >= 0.0 && gate(r, 1) >= 0.0, "gate nonnegative");
      expect(std::abs(gate(r, 0) + gate(r, 1) - 1.0) <= kRowSumTolerance, "gate row sum");
      for (int j = 0; j < 8; ++j)
        expect(std::abs(out(r, j) - (gate(r, 0) * h_cn(r, j) + gate(r, 1) * h_en(r, j))) <= kIdentityTolerance,
               "gate convex combination");
    }
  }

  // Attention pooling columns are distributions; pooling is linear with d_r rows.
  for (int trial = 0; trial < 20; ++trial) {
    const int T = std::uniform_int_distribution<int>(1, 30)(rng);
    ad::Tape t;
    const Matrix a = attention_pool_weights(t.constant(random_matrix(T, 8, rng, 2.0)),
                                            t.constant(random_matrix(8, 6, rng)), t.constant(random_matrix(6, 4, rng, 3.0)))
                         .value();
    for (int r = 0; r < 4; ++r) {
      double sum = 0.0;
      for (int f = 0; f < T; ++f) sum += a(f, r);
      expect(std::abs(sum - 1.0) <= kRowSumTolerance, "pooling column sum");
    }
    const Matrix h1 = random_matrix(T, 8, rng), h2 = random_matrix(T, 8, rng);
    Matrix mix = h1;
    mix *= 0.75;
    Matrix part = h2;
    part *= -1.25;
    mix += part;
    const Matrix pooled = segment_pool(t.constant(a), t.constant(mix)).value();
    Matrix want = segment_pool(t.constant(a), t.constant(h1)).value();
    want *= 0.75;
    Matrix other = segment_pool(t.constant(a), t.constant(h2)).value();
    other *= -1.25;
    want += other;
    expect(pooled.rows() == 4 && pooled.cols() == 8, "pooling shape");
    expect(max_abs_diff(pooled, want) <= kLinearityTolerance, "pooling linearity");
  }

  // Target masking partition and run-length boundary targets.
  const SynthConfig sc;
  for (const Utterance& u : generate_dataset(sc, 300, 90000)) {
    const MaskedTargets m = mask_targets(u.tokens, u.langs);
    expect(m.y_cn.size() == u.tokens.size() && m.y_en.size() == u.tokens.size(), "masking lengths");
    for (std::size_t i = 0; i < u.tokens.size(); ++i) {
      const bool in_cn = m.y_cn[i] == u.tokens[i] && m.y_en[i] == Vocab::kUnk;
      const bool in_en = m.y_en[i] == u.tokens[i] && m.y_cn[i] == Vocab::kUnk;
      expect(in_cn != in_en && in_cn == (u.langs[i] == Lang::CN), "masking partition");
    }
    const std::vector<Lang> runs = compress_runs(u.langs);
    expect(compress_runs(runs) == runs, "run-length idempotence");
    for (std::size_t i = 1; i < runs.size(); ++i) expect(runs[i] != runs[i - 1], "run-length alternation");
    expect(runs.size() <= static_cast<std::size_t>(sc.max_switches + 1), "segment count");
    expect(boundary_targets(u.langs, 8).tags == runs, "boundary targets");
  }

  // Arithmetic identities of the loss combinations.
  {
    ad::Tape t;
    auto s = [&t](double v) { return t.constant(Matrix::scalar(v)); };
    expect(combine_cla(s(1.25), s(2.75)).scalar() == 2.0, "CLA mean");
    expect(combine_boundary(s(1.5), s(2.5)).scalar() == 4.0, "boundary sum");
    LossWeights w;
    const double total = weighted_total(t, w, s(1.0), s(2.0), s(3.0), s(4.0)).scalar();
    expect(std::abs(total - (0.7 + 0.6 + 0.3 + 0.4)) <= kIdentityTolerance, "weighted total");
    const ModelConfig model = toy_model_config();
    const Utterance u = toy_utterance(model, 12, 2);
    ParamStore ps = init_model_params(model, 2);
    ad::Tape t2;
    const LossReport r = total_loss(t2, u, ps, model, w).report;
    expect(std::abs(r.total - (w.ce * r.l_ce + w.ctc * r.l_ctc + w.cla * r.l_cla + w.boundary * r.l_b)) <=
               kIdentityTolerance,
           "total loss composition");
  }

  const double secs = seconds_since(start);
  std::set<std::string> unique(broken.begin(), broken.end());
  std::string detail = unique.empty() ? "all invariants hold" : "violated:";
  for (const auto& b : unique) detail += " [" + b + "]";
  detail += ", " + fmt("%.2f", secs) + " s (< " + fmt("%.0f", kInvariantSeconds) + " s)";
  return {unique.empty() && secs < kInvariantSeconds, detail};
}

// ---------------------------------------------------------------- criterion 4

int brute_distance(const std::vector<int>& a, const std::vector<int>& b) {
  std::map<std::pair<std::size_t, std::size_t>, int> memo;
  std::function<int(std::size_t, std::size_t)> go = [&](std::size_t i, std::size_t j) -> int {
    if (i == a.size()) return static_cast<int>(b.size() - j);
    if (j == b.size()) return static_cast<int>(a.size() - i);
    if (auto it = memo.find({i, j}); it != memo.end()) return it->second;
    const int v = std::min({go(i + 1, j + 1) + (a[i] == b[j] ? 0 : 1), go(i + 1, j) + 1, go(i, j + 1) + 1});
    memo[{i, j}] = v;
    return v;
  };
  return go(0, 0);
}

Outcome metric_oracle() {
  const Vocab vocab(6, 6);
  std::mt19937_64 rng(11);
  auto random_ids = [&] {
    std::vector<int> ids(static_cast<std::size_t>(std::uniform_int_distribution<int>(1, 10)(rng)));
    for (int& x : ids) x = std::uniform_int_distribution<int>(Vocab::kFirstUnit, vocab.size() - 1)(rng);
    return ids;
  };
  auto stream = [](const TaggedTokens& t, std::optional<Lang> lang) {
    std::vector<int> out;
    for (std::size_t i = 0; i < t.tokens.size(); ++i)
      if (!lang || t.langs[i] == *lang) out.push_back(t.tokens[i]);
    return out;
  };
  auto runs = [](const TaggedTokens& t) {
    std::vector<int> out;
    for (Lang l : compress_runs(t.langs)) out.push_back(static_cast<int>(l));
    return out;
  };
  int mismatches = 0;
  for (int i = 0; i < kMetricPairs; ++i) {
    const TaggedTokens ref = tag_by_vocabulary(random_ids(), vocab), hyp = tag_by_vocabulary(random_ids(), vocab);
    const ScoreReport r = score(ref, hyp);
    const bool ok = r.cer.errors() == brute_distance(stream(ref, Lang::CN), stream(hyp, Lang::CN)) &&
                    r.wer.errors() == brute_distance(stream(ref, Lang::EN), stream(hyp, Lang::EN)) &&
                    r.mer.errors() == brute_distance(ref.tokens, hyp.tokens) &&
                    r.ber.errors() == brute_distance(runs(ref), runs(hyp)) &&
                    r.mer.ref_length == static_cast<long>(ref.tokens.size()) &&
                    r.ber.ref_length == static_cast<long>(runs(ref).size());
    if (!ok) ++mismatches;
  }
  const double mer_red = relative_reduction(12.32, 10.28), ber_red = relative_reduction(3.97, 2.35);
  const bool reductions = std::abs(mer_red - 16.55) < kReductionTolerance && std::abs(ber_red - 40.81) < kReductionTolerance;
  return {mismatches == 0 && reductions,
          std::to_string(kMetricPairs - mismatches) + "/" + std::to_string(kMetricPairs) +
              " pairs agree; reductions " + fmt("%.4f", mer_red) + "% (16.55) and " + fmt("%.4f", ber_red) +
              "% (40.81), tolerance " + fmt("%.2f", kReductionTolerance)};
}

// ---------------------------------------------------------------- criteria 5-7

struct AblationRun {
  std::vector<AblationEntry> rows;
  Dataset test;
  double seconds = 0.0;
};

AblationRun run_acceptance_ablation(bool verbose) {
  const SynthConfig sc;
  AblationRun run;
  const Dataset train_set = generate_dataset(sc, kTrainUtterances, 0);
  const Dataset dev_set = generate_dataset(sc, kDevUtterances, kTrainUtterances);
  run.test = generate_dataset(sc, kTestUtterances, kTrainUtterances + kDevUtterances);
  TrainConfig tc;
  tc.epochs = kAblationEpochs;
  tc.final_lr_scale = kAblationFinalLrScale;
  AblationOptions opt;
  if (verbose) opt.train.progress = [](const std::string& s) { std::cout << "    " << s << std::endl; };
  opt.on_row = [](const AblationEntry& e) {
    std::cout << "  trained " << ablation_row_name(e.row) << " in " << fmt("%.1f", e.seconds) << " s: test MER "
              << fmt("%.2f", 100.0 * e.report.mer.rate().value_or(NAN)) << "%, BER "
              << fmt("%.2f", 100.0 * e.report.ber.rate().value_or(NAN)) << "%" << std::endl;
  };
  const auto start = Clock::now();
  run.rows = run_ablation(tc, train_set, dev_set, run.test, opt);
  run.seconds = seconds_since(start);
  return run;
}

double pct(const ErrorCounts& c) { return 100.0 * c.rate().value_or(NAN); }

Outcome ablation_direction(const AblationRun& run) {
  bool monotone = true;
  std::string detail = "MER";
  for (std::size_t i = 0; i < run.rows.size(); ++i) {
    detail += (i ? " -> " : " ") + fmt("%.2f", pct(run.rows[i].report.mer));
    if (i > 0 && !(pct(run.rows[i].report.mer) <= pct(run.rows[i - 1].report.mer) + kMerSlack)) monotone = false;
  }
  const double ber_base = pct(run.rows.front().report.ber), ber_bat = pct(run.rows.back().report.ber);
  const bool ber = ber_bat < ber_base;
  detail += " (slack " + fmt("%.1f", kMerSlack) + "/step: " + (monotone ? "ok" : "violated") + "); BER " +
            fmt("%.2f", ber_base) + " -> " + fmt("%.2f", ber_bat) + " (" + (ber ? "ok" : "not lower") + "); " +
            fmt("%.0f", run.seconds) + " s (< " + fmt("%.0f", kAblationSeconds) + " s)";
  return {monotone && ber && run.seconds < kAblationSeconds, detail};
}

const AblationEntry& row(const AblationRun& run, AblationRow which) {
  return *std::find_if(run.rows.begin(), run.rows.end(), [which](const AblationEntry& e) { return e.row == which; });
}

Outcome gate_separation_check(const AblationRun& run) {
  const GateSeparation cla = gate_separation(row(run, AblationRow::Cla).training.best, run.test);
  const GateSeparation moe = gate_separation(row(run, AblationRow::MoeAdapter).training.best, run.test);
  const bool pass = cla.separation() >= kGateSeparation && moe.separation() < cla.separation();
  return {pass, "CLA run: CN gate " + fmt("%.3f", cla.cn_gate_on_cn) + " on CN frames vs " +
                    fmt("%.3f", cla.cn_gate_on_en) + " on EN frames, separation " + fmt("%.3f", cla.separation()) +
                    " (>= " + fmt("%.1f", kGateSeparation) + "); no-CLA separation " + fmt("%.3f", moe.separation()) +
                    " (must be smaller)"};
}

Outcome attention_check(const AblationRun& run) {
  const AttentionConcentration c =
      attention_concentration(row(run, AblationRow::Bat).training.best, run.test, kBoundaryRadius);
  return {c.ratio() >= kConcentrationFactor,
          "mass within +-" + std::to_string(kBoundaryRadius) + " frames " + fmt("%.3f", c.boundary_mass) +
              " vs uniform " + fmt("%.3f", c.uniform_mass) + ", factor " + fmt("%.3f", c.ratio()) + " (>= " +
              fmt("%.1f", kConcentrationFactor) + ") over " + std::to_string(c.utterances) + " utterances"};
}

// ---------------------------------------------------------------- criterion 8

Outcome overfit() {
  const Dataset one{generate_utterance(SynthConfig{}, 0)};
  TrainConfig tc;
  tc.batch_size = 1;
  tc.epochs = kOverfitSteps;
  const TrainResult r = train(tc, one, {});
  const double first = r.log.front().loss.total, last = r.log.back().loss.total;
  const EvalResult e = evaluate(r.last, one);
  const double mer = e.report.mer.rate().value_or(NAN);
  const bool pass = r.log.size() == static_cast<std::size_t>(kOverfitSteps) && last <= (1.0 - kOverfitReduction) * first &&
                    mer == 0.0;
  return {pass, std::to_string(r.log.size()) + " steps, loss " + fmt("%.4f", first) + " -> " + fmt("%.4f", last) +
                    " (" + fmt("%.1f", 100.0 * (1.0 - last / first)) + "% reduction, need >= " +
                    fmt("%.0f", 100.0 * kOverfitReduction) + "%), MER " + fmt("%.2f", 100.0 * mer) + "%"};
}

// ---------------------------------------------------------------- criterion 9

Outcome determinism() {
  const SynthConfig sc;
  const Dataset train_set = generate_dataset(sc, 40, 0), test_set = generate_dataset(sc, 20, 40);
  TrainConfig tc;
  tc.epochs = 2;
  auto log_text = [](const TrainResult& r) {
    std::ostringstream out;
    write_step_log(r.log, out);
    return out.str();
  };
  const TrainResult a = train(tc, train_set, {}), b = train(tc, train_set, {});
  const bool logs = log_text(a) == log_text(b);
  const std::string text = checkpoint_to_string(a.last);
  const Checkpoint back = checkpoint_from_string(text);
  const bool bytes = checkpoint_to_string(back) == text;
  const EvalResult e1 = evaluate(a.last, test_set), e2 = evaluate(back, test_set);
  bool same = to_json(e1.report).dump() == to_json(e2.report).dump();
  for (std::size_t i = 0; i < e1.hypotheses.size(); ++i) same = same && e1.hypotheses[i].ids == e2.hypotheses[i].ids;
  return {logs && bytes && same, std::string("step logs ") + (logs ? "identical" : "differ") + " across runs (" +
                                     std::to_string(a.log.size()) + " steps); checkpoint re-save " +
                                     (bytes ? "byte-identical" : "differs") + "; evaluate() after reload " +
                                     (same ? "bit-identical" : "differs")};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance suite"};
  std::vector<int> only;
  bool verbose = false;
  app.add_option("--criteria", only, "Run only these criteria (1-9)")->check(CLI::Range(1, 9))->delimiter(',');
  app.add_flag("--verbose", verbose, "Print per-epoch training progress");
  CLI11_PARSE(app, argc, argv);
  auto wanted = [&only](int c) { return only.empty() || std::find(only.begin(), only.end(), c) != only.end(); };

  std::vector<int> failed;
  auto guarded = [&failed](int c, const std::string& name, const std::function<Outcome()>& f) {
    Outcome o;
    try {
      o = f();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    report(c, name, o, failed);
  };

  if (wanted(1)) guarded(1, "CTC oracle equivalence", ctc_oracle);
  if (wanted(2)) guarded(2, "end-to-end gradient check", gradient_check);
  if (wanted(3)) guarded(3, "structural invariants", structural_invariants);
  if (wanted(4)) guarded(4, "metric oracle", metric_oracle);
  if (wanted(5) || wanted(6) || wanted(7)) {
    std::optional<AblationRun> run;
    std::string error;
    try {
      run = run_acceptance_ablation(verbose);
    } catch (const std::exception& e) {
      error = e.what();
    }
    auto with_run = [&](int c, const std::string& name, Outcome (*f)(const AblationRun&)) {
      if (!wanted(c)) return;
      if (!run) return report(c, name, {false, "ablation failed: " + error}, failed);
      guarded(c, name, [&] { return f(*run); });
    };
    with_run(5, "directional ablation", ablation_direction);
    with_run(6, "gating separation", gate_separation_check);
    with_run(7, "boundary attention concentration", attention_check);
  }
  if (wanted(8)) guarded(8, "overfit sanity", overfit);
  if (wanted(9)) guarded(9, "determinism and persistence", determinism);

  if (failed.empty()) {
    std::cout << "all selected criteria passed" << std::endl;
    return 0;
  }
  std::cout << failed.size() << " criteria failed:";
  for (int c : failed) std::cout << ' ' << c;
  std::cout << std::endl;
  return 1;
}
