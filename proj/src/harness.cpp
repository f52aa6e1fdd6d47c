// SPDX-License-Identifier: Apache-2.0

#include "csmoe/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <ostream>
#include <random>
#include <sstream>

#include "csmoe/boundary.hpp"
#include "csmoe/decoder.hpp"
#include "csmoe/encoder.hpp"
#include "csmoe/errors.hpp"

namespace csmoe {

void check_compatibility(const TrainConfig& config, const Dataset& data) {
  const Vocab vocab(config.model.cn_vocab, config.model.en_vocab);
  for (const Utterance& u : data) {
    if (u.features.cols() != config.model.encoder.d_model) {
      throw CompatibilityError("utterance " + u.id + " has " + std::to_string(u.features.cols()) +
                               "-dim features, model expects " + std::to_string(config.model.encoder.d_model));
    }
    if (u.tokens.size() != u.langs.size()) throw CompatibilityError("utterance " + u.id + ": tokens/langs differ in length");
    for (std::size_t i = 0; i < u.tokens.size(); ++i) {
      const auto lang = vocab.lang_of(u.tokens[i]);
      if (!lang || *lang != u.langs[i]) {
        throw CompatibilityError("utterance " + u.id + ": token id " + std::to_string(u.tokens[i]) +
                                 " does not belong to the model's " + std::string(lang_name(u.langs[i])) + " vocabulary");
      }
    }
  }
}

void write_step_log(const std::vector<StepRecord>& log, std::ostream& out) {
  out << "step,l_ce,l_ctc,l_cla,l_b,total\n";
  const auto old = out.precision(17);
  for (const StepRecord& r : log) {
    out << r.step << ',' << r.loss.l_ce << ',' << r.loss.l_ctc << ',' << r.loss.l_cla << ',' << r.loss.l_b << ','
        << r.loss.total << '\n';
  }
  out.precision(old);
}

namespace {

Matrix encode_value(const TrainConfig& config, ParamStore& ps, const Utterance& u) {
  ad::Tape tape(/*grad_enabled=*/false);
  return encode(tape, u.features, ps, config.model.encoder, config.model.use_moe_adapter).h_mix.value();
}

ScoreReport score_hypothesis(const Utterance& ref, std::span<const int> hyp, const Vocab& vocab,
                             BoundarySource source) {
  const TaggedTokens r{ref.tokens, ref.langs};
  const TaggedTokens h = tag_by_vocabulary(hyp, vocab);
  if (source == BoundarySource::Emitted) return score(r, h, emitted_boundary_tags(hyp));
  return score(r, h);
}

double dev_loss(const TrainConfig& config, ParamStore& ps, const Dataset& dev) {
  double sum = 0.0;
  for (const Utterance& u : dev) {
    ad::Tape tape(/*grad_enabled=*/false);
    sum += total_loss(tape, u, ps, config.model, config.weights).report.total;
  }
  return sum / static_cast<double>(dev.size());
}

LossReport& accumulate(LossReport& acc, const LossReport& r, double w) {
  acc.l_ce += w * r.l_ce;
  acc.l_ctc += w * r.l_ctc;
  acc.l_cla += w * r.l_cla;
  acc.l_b += w * r.l_b;
  acc.total += w * r.total;
  return acc;
}

std::string fmt(double v, int digits = 4) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(digits) << v;
  return os.str();
}

}  // namespace

std::vector<int> decode_utterance(const TrainConfig& config, ParamStore& params, const Utterance& u) {
  const Matrix memory = encode_value(config, params, u);
  return greedy_decode(memory, params, config.model.decoder, config.max_decode_len);
}

TrainResult train(const TrainConfig& config, const Dataset& train_set, const Dataset& dev_set,
                  const TrainOptions& options) {
  config.validate();
  if (train_set.empty()) throw ContractError("train: training set is empty");
  check_compatibility(config, train_set);
  check_compatibility(config, dev_set);

  TrainResult result;
  ParamStore ps = init_model_params(config.model, config.seed);
  std::vector<Parameter*> params = ps.all();
  std::vector<Matrix> velocity;
  for (const Parameter* p : params) velocity.emplace_back(p->value.rows(), p->value.cols());

  std::seed_seq seq{config.seed, std::uint64_t{0x73687566ULL}};
  std::mt19937_64 rng(seq);
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  const Vocab vocab(config.model.cn_vocab, config.model.en_vocab);
  const long per_epoch = static_cast<long>((train_set.size() + static_cast<std::size_t>(config.batch_size) - 1) /
                                           static_cast<std::size_t>(config.batch_size));
  long total_steps = per_epoch * config.epochs;
  if (config.max_steps > 0) total_steps = std::min(total_steps, config.max_steps);
  std::optional<std::pair<double, double>> best_key;  // (mer, loss)
  long step = 0;
  bool done = false;

  auto evaluate_dev = [&](int epoch) {
    if (dev_set.empty()) return;
    DevRecord rec;
    rec.step = step;
    rec.loss = dev_loss(config, ps, dev_set);
    ScoreReport total;
    for (const Utterance& u : dev_set) {
      total += score_hypothesis(u, decode_utterance(config, ps, u), vocab, BoundarySource::TagInference);
    }
    rec.mer = total.mer.rate();
    result.dev.push_back(rec);
    const std::pair<double, double> key{rec.mer.value_or(0.0), rec.loss};
    if (!best_key || key < *best_key) {
      best_key = key;
      result.best = Checkpoint{config, step, ps};
    }
    if (options.progress) {
      options.progress("epoch " + std::to_string(epoch) + " step " + std::to_string(step) + " dev loss " +
                       fmt(rec.loss) + " dev MER " + fmt(100.0 * rec.mer.value_or(0.0), 2) + "%");
    }
  };

  for (int epoch = 1; epoch <= config.epochs && !done; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size() && !done; start += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
      const double w = 1.0 / static_cast<double>(end - start);
      ++step;
      StepRecord rec;
      rec.step = step;
      rec.epoch = epoch;
      try {
        ps.zero_grad();
        for (std::size_t b = start; b < end; ++b) {
          ad::Tape tape;
          LossGraph g = total_loss(tape, train_set[order[b]], ps, config.model, config.weights, &result.counters);
          tape.backward(g.total);
          accumulate(rec.loss, g.report, w);
        }
        if (!std::isfinite(rec.loss.total)) throw NumericalError("non-finite loss");
        double sq = 0.0;
        for (Parameter* p : params) {
          p->grad *= w;
          for (double g : p->grad.data()) sq += g * g;
        }
        rec.grad_norm = std::sqrt(sq);
        if (!std::isfinite(rec.grad_norm)) throw NumericalError("non-finite gradient");
      } catch (const NumericalError& e) {
        throw NumericalError("training diverged at step " + std::to_string(step) + ": " + e.what());
      }
      const double clip = rec.grad_norm > config.clip_norm ? config.clip_norm / rec.grad_norm : 1.0;
      const double progress = total_steps > 1 ? static_cast<double>(step - 1) / static_cast<double>(total_steps - 1) : 0.0;
      const double lr = config.learning_rate * (1.0 - (1.0 - config.final_lr_scale) * progress);
      for (std::size_t k = 0; k < params.size(); ++k) {
        auto& v = velocity[k].data();
        auto& value = params[k]->value.data();
        const auto& g = params[k]->grad.data();
        for (std::size_t i = 0; i < v.size(); ++i) {
          v[i] = config.momentum * v[i] + clip * g[i];
          value[i] -= lr * v[i];
        }
      }
      result.log.push_back(rec);
      if (config.max_steps > 0 && step >= config.max_steps) done = true;
    }
    if (options.progress) {
      double mean = 0.0;
      int n = 0;
      for (auto it = result.log.rbegin(); it != result.log.rend() && it->epoch == epoch; ++it, ++n) mean += it->loss.total;
      options.progress("epoch " + std::to_string(epoch) + " mean train loss " + fmt(n ? mean / n : 0.0));
    }
    evaluate_dev(epoch);
  }

  result.last = Checkpoint{config, step, ps};
  if (!best_key) result.best = result.last;
  return result;
}

EvalResult evaluate(const Checkpoint& ckpt, const Dataset& test_set, BoundarySource boundary_source) {
  if (test_set.empty()) throw ContractError("evaluate: test set is empty");
  check_compatibility(ckpt.config, test_set);
  ParamStore ps = ckpt.params;
  const Vocab vocab(ckpt.config.model.cn_vocab, ckpt.config.model.en_vocab);
  if (decoder_vocab_size(ps) != vocab.size()) {
    throw CompatibilityError("checkpoint decoder vocabulary (" + std::to_string(decoder_vocab_size(ps)) +
                             ") does not match its config (" + std::to_string(vocab.size()) + ")");
  }
  EvalResult out;
  for (const Utterance& u : test_set) {
    Hypothesis h{u.id, decode_utterance(ckpt.config, ps, u)};
    out.report += score_hypothesis(u, h.ids, vocab, boundary_source);
    out.hypotheses.push_back(std::move(h));
  }
  return out;
}

std::vector<GateRow> gate_coefficients(const Checkpoint& ckpt, const Utterance& u) {
  if (!ckpt.config.model.use_moe_adapter) throw ContractError("gate export needs a model with MoE adapters");
  check_compatibility(ckpt.config, Dataset{u});
  const auto frame_langs = u.frame_langs();
  if (static_cast<int>(frame_langs.size()) != u.frames()) {
    throw ContractError("gate export needs per-token durations for utterance " + u.id);
  }
  ParamStore ps = ckpt.params;
  ad::Tape tape(/*grad_enabled=*/false);
  const EncodeOutput enc = encode(tape, u.features, ps, ckpt.config.model.encoder, true);
  std::vector<GateRow> rows;
  for (std::size_t l = 0; l < enc.caches.size(); ++l) {
    const Matrix& g = enc.caches[l].gate.value();
    for (int t = 0; t < g.rows(); ++t) {
      rows.push_back(GateRow{static_cast<int>(l), t, g(t, 0), g(t, 1), frame_langs[static_cast<std::size_t>(t)]});
    }
  }
  return rows;
}

void write_gates_csv(const std::vector<GateRow>& rows, std::ostream& out) {
  out << "layer,frame,gate_cn,gate_en,true_lang\n";
  const auto old = out.precision(17);
  for (const GateRow& r : rows) {
    out << r.layer << ',' << r.frame << ',' << r.gate_cn << ',' << r.gate_en << ',' << lang_name(r.true_lang) << '\n';
  }
  out.precision(old);
}

GateSeparation gate_separation(const Checkpoint& ckpt, const Dataset& data, int layer) {
  const int top = ckpt.config.model.encoder.num_layers - 1;
  const int target = layer < 0 ? top : layer;
  if (target > top) throw ContractError("gate_separation: no layer " + std::to_string(layer));
  double sum_cn = 0.0, sum_en = 0.0;
  long n_cn = 0, n_en = 0;
  for (const Utterance& u : data) {
    for (const GateRow& r : gate_coefficients(ckpt, u)) {
      if (r.layer != target) continue;
      if (r.true_lang == Lang::CN) {
        sum_cn += r.gate_cn;
        ++n_cn;
      } else {
        sum_en += r.gate_cn;
        ++n_en;
      }
    }
  }
  if (n_cn == 0 || n_en == 0) throw ContractError("gate_separation: data must contain frames of both languages");
  return GateSeparation{sum_cn / static_cast<double>(n_cn), sum_en / static_cast<double>(n_en)};
}

Matrix attention_weights(const Checkpoint& ckpt, const Utterance& u) {
  if (!ckpt.config.model.use_bat) throw ContractError("attention export needs a model with the boundary predictor");
  check_compatibility(ckpt.config, Dataset{u});
  ParamStore ps = ckpt.params;
  ad::Tape tape(/*grad_enabled=*/false);
  const EncodeOutput enc = encode(tape, u.features, ps, ckpt.config.model.encoder, ckpt.config.model.use_moe_adapter);
  return attention_pool_weights(enc.h_mix, tape.param(ps.at("bat.w1")), tape.param(ps.at("bat.w2"))).value();
}

void write_attention_csv(const Matrix& a, const Utterance& u, std::ostream& out) {
  if (a.rows() != u.frames()) throw DimensionError("attention matrix has " + std::to_string(a.rows()) + " rows for " + std::to_string(u.frames()) + " frames");
  const auto boundaries = u.boundary_frames();
  out << "frame";
  for (int h = 0; h < a.cols(); ++h) out << ",head_" << h + 1;
  out << ",is_boundary_frame\n";
  const auto old = out.precision(17);
  for (int t = 0; t < a.rows(); ++t) {
    out << t;
    for (int h = 0; h < a.cols(); ++h) out << ',' << a(t, h);
    out << ',' << (std::find(boundaries.begin(), boundaries.end(), t) != boundaries.end() ? 1 : 0) << '\n';
  }
  out.precision(old);
}

AttentionConcentration attention_concentration(const Checkpoint& ckpt, const Dataset& data, int radius) {
  if (radius < 0) throw ContractError("attention_concentration: radius must be >= 0");
  AttentionConcentration out;
  for (const Utterance& u : data) {
    const auto boundaries = u.boundary_frames();
    if (boundaries.empty()) continue;
    const int T = u.frames();
    std::vector<bool> near(static_cast<std::size_t>(T), false);
    for (int b : boundaries)
      for (int t = std::max(0, b - radius); t <= std::min(T - 1, b + radius); ++t) near[static_cast<std::size_t>(t)] = true;
    const Matrix a = attention_weights(ckpt, u);
    double mass = 0.0, total = 0.0;
    int frames_near = 0;
    for (int t = 0; t < T; ++t) {
      double row = 0.0;
      for (int h = 0; h < a.cols(); ++h) row += a(t, h);
      total += row;
      if (near[static_cast<std::size_t>(t)]) {
        mass += row;
        ++frames_near;
      }
    }
    out.boundary_mass += mass / total;
    out.uniform_mass += static_cast<double>(frames_near) / static_cast<double>(T);
    ++out.utterances;
  }
  if (out.utterances == 0) throw ContractError("attention_concentration: no utterance contains a language switch");
  out.boundary_mass /= out.utterances;
  out.uniform_mass /= out.utterances;
  return out;
}

std::string ablation_row_name(AblationRow row) {
  switch (row) {
    case AblationRow::Baseline: return "Baseline";
    case AblationRow::MoeAdapter: return "+ MoE-Adapter";
    case AblationRow::Cla: return "+ CLA loss";
    case AblationRow::Bat: return "+ BAT";
  }
  return "?";
}

TrainConfig ablation_config(const TrainConfig& base, AblationRow row) {
  TrainConfig c = base;
  c.model.use_moe_adapter = row != AblationRow::Baseline;
  c.model.use_cla = row == AblationRow::Cla || row == AblationRow::Bat;
  c.model.use_bat = row == AblationRow::Bat;
  return c;
}

namespace {

template <class E>
[[noreturn]] void rethrow_tagged(const std::string& row, const E& e) {
  throw E(row + ": " + e.what());
}

}  // namespace

std::vector<AblationEntry> run_ablation(const TrainConfig& base, const Dataset& train_set, const Dataset& dev_set,
                                        const Dataset& test_set, const AblationOptions& options) {
  std::vector<AblationEntry> out;
  for (AblationRow row : kAblationRows) {
    const std::string name = ablation_row_name(row);
    const auto t0 = std::chrono::steady_clock::now();
    AblationEntry entry;
    entry.row = row;
    try {
      const TrainConfig config = ablation_config(base, row);
      entry.training = train(config, train_set, dev_set, options.train);
      entry.report = evaluate(entry.training.best, test_set).report;
    } catch (const NumericalError& e) {
      rethrow_tagged(name, e);
    } catch (const CompatibilityError& e) {
      rethrow_tagged(name, e);
    } catch (const ConfigError& e) {
      rethrow_tagged(name, e);
    } catch (const ContractError& e) {
      rethrow_tagged(name, e);
    } catch (const Error& e) {
      rethrow_tagged(name, e);
    }
    const ParamStore& ps = entry.training.best.params;
    for (const std::string& n : ps.names())
      if (n.find(".adapter_") != std::string::npos || n.find(".gate.") != std::string::npos) {
        entry.adapter_params += ps.at(n).value.size();
      }
    entry.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (options.on_row) options.on_row(entry);
    out.push_back(std::move(entry));
  }
  return out;
}

namespace {

std::string pct(const ErrorCounts& c) {
  const auto r = c.rate();
  return r ? fmt(100.0 * *r, 2) : "n/a";
}

}  // namespace

std::string ablation_markdown(const std::vector<AblationEntry>& entries) {
  std::ostringstream os;
  os << "| Model | CER (%) | WER (%) | MER (%) | BER (%) |\n";
  os << "|---|---|---|---|---|\n";
  for (const auto& e : entries) {
    os << "| " << ablation_row_name(e.row) << " | " << pct(e.report.cer) << " | " << pct(e.report.wer) << " | "
       << pct(e.report.mer) << " | " << pct(e.report.ber) << " |\n";
  }
  return os.str();
}

std::string ablation_csv(const std::vector<AblationEntry>& entries) {
  std::ostringstream os;
  os << "model,cer,wer,mer,ber,adapter_params,seconds\n";
  os.precision(17);
  auto rate = [](const ErrorCounts& c) {
    const auto r = c.rate();
    return r ? std::to_string(*r) : std::string();
  };
  for (const auto& e : entries) {
    os << ablation_row_name(e.row) << ',' << rate(e.report.cer) << ',' << rate(e.report.wer) << ','
       << rate(e.report.mer) << ',' << rate(e.report.ber) << ',' << e.adapter_params << ',' << e.seconds << '\n';
  }
  return os.str();
}

ModelConfig toy_model_config() {
  ModelConfig m;
  m.encoder.num_layers = 2;
  m.encoder.d_model = 16;
  m.decoder.d_model = 16;
  m.boundary.d_r = 4;
  return m;
}

Utterance toy_utterance(const ModelConfig& model, int frames, std::uint64_t seed) {
  if (frames < 6 || frames % 3 != 0) throw ContractError("toy_utterance: frames must be a multiple of 3, >= 6");
  SynthConfig sc;
  sc.cn_vocab = model.cn_vocab;
  sc.en_vocab = model.en_vocab;
  sc.feature_dim = model.encoder.d_model;
  sc.min_frames_per_token = sc.max_frames_per_token = 3;
  sc.min_tokens = sc.max_tokens = frames / 3;
  sc.max_switches = 1;
  sc.seed = seed;
  for (std::uint64_t i = 0;; ++i) {
    Utterance u = generate_utterance(sc, i);
    if (u.boundary_tags.tags.size() == 2) return u;
  }
}

bool GradcheckResult::passed() const {
  return std::all_of(groups.begin(), groups.end(), [this](const GroupGradCheck& g) { return g.rel_error < tolerance; });
}

GradcheckResult run_gradcheck(const GradcheckOptions& options) {
  options.model.validate();
  ParamStore ps = init_model_params(options.model, options.seed);
  if (ps.scalar_count() > options.max_params) {
    throw ConfigError("gradcheck refuses a model with " + std::to_string(ps.scalar_count()) +
                      " parameters (limit " + std::to_string(options.max_params) + ")");
  }
  const Utterance u = toy_utterance(options.model, options.frames, options.seed);
  const LossBuilder loss = [&](ad::Tape& tape, ParamStore& p) {
    return total_loss(tape, u, p, options.model, options.weights).total;
  };
  GradcheckResult r;
  r.report = finite_diff_check(loss, ps, options.step, options.after_backward);
  r.groups = r.report.groups();
  r.param_count = ps.scalar_count();
  r.tolerance = options.tolerance;
  return r;
}

void print_gradcheck(const GradcheckResult& result, std::ostream& out) {
  out << "parameters: " << result.param_count << "\n";
  std::size_t width = 5;
  for (const auto& g : result.groups) width = std::max(width, g.group.size());
  out << std::left << std::setw(static_cast<int>(width)) << "group" << "  scalars  rel_error   worst_entry  status\n";
  for (const auto& g : result.groups) {
    out << std::left << std::setw(static_cast<int>(width)) << g.group << "  " << std::right << std::setw(7) << g.scalars
        << "  " << std::scientific << std::setprecision(3) << g.rel_error << "   " << g.worst_entry_error << "    "
        << (g.rel_error < result.tolerance ? "ok" : "FAIL") << std::defaultfloat << std::left << "\n";
  }
  out << (result.passed() ? "gradcheck passed" : "gradcheck FAILED") << " (tolerance " << result.tolerance << ")\n";
}

}  // namespace csmoe
