// SPDX-License-Identifier: Apache-2.0
//
// Training, evaluation, CSV exports, the four-row ablation and the
// gradient-check entry point.

#pragma once

#include <cstddef>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "csmoe/checkpoint.hpp"
#include "csmoe/data.hpp"
#include "csmoe/gradcheck.hpp"
#include "csmoe/metrics.hpp"
#include "csmoe/objective.hpp"
#include "csmoe/run_config.hpp"

namespace csmoe {

// Throws CompatibilityError when the data does not fit the model: feature
// width differs from d_model, or a token lies outside the model vocabulary
// or carries the wrong language.
void check_compatibility(const TrainConfig& config, const Dataset& data);

struct StepRecord {
  long step = 0;  // 1-based
  int epoch = 0;
  LossReport loss;  // batch mean
  double grad_norm = 0.0;  // before clipping
};

// step,l_ce,l_ctc,l_cla,l_b,total with round-trip precision.
void write_step_log(const std::vector<StepRecord>& log, std::ostream& out);

struct DevRecord {
  long step = 0;
  double loss = 0.0;
  std::optional<double> mer;
};

struct TrainOptions {
  std::function<void(const std::string&)> progress;  // epoch summaries
};

struct TrainResult {
  Checkpoint best;  // lowest dev MER (ties: lower dev loss); the last step without dev data
  Checkpoint last;
  std::vector<StepRecord> log;
  std::vector<DevRecord> dev;
  ExecutionCounters counters;
};

// SGD with momentum and global-norm clipping on the batch-mean total loss.
// A non-finite loss or gradient aborts with NumericalError naming the step.
TrainResult train(const TrainConfig& config, const Dataset& train_set, const Dataset& dev_set,
                  const TrainOptions& options = {});

enum class BoundarySource { TagInference, Emitted };

struct Hypothesis {
  std::string id;
  std::vector<int> ids;  // decoder output, boundary tokens included
};

struct EvalResult {
  ScoreReport report;
  std::vector<Hypothesis> hypotheses;
};

std::vector<int> decode_utterance(const TrainConfig& config, ParamStore& params, const Utterance& u);
EvalResult evaluate(const Checkpoint& ckpt, const Dataset& test_set,
                    BoundarySource boundary_source = BoundarySource::TagInference);

struct GateRow {
  int layer = 0;
  int frame = 0;
  double gate_cn = 0.0;
  double gate_en = 0.0;
  Lang true_lang = Lang::CN;
};

// Requires a model with adapters and an utterance with known durations.
std::vector<GateRow> gate_coefficients(const Checkpoint& ckpt, const Utterance& u);
void write_gates_csv(const std::vector<GateRow>& rows, std::ostream& out);

struct GateSeparation {
  double cn_gate_on_cn = 0.0;  // mean CN coefficient on language-A frames
  double cn_gate_on_en = 0.0;
  double separation() const { return cn_gate_on_cn - cn_gate_on_en; }
};

// Pooled over all frames of the data set; layer -1 selects the top layer.
GateSeparation gate_separation(const Checkpoint& ckpt, const Dataset& data, int layer = -1);

// Boundary attention weights A (T x d_r). Requires a model with the
// boundary predictor.
Matrix attention_weights(const Checkpoint& ckpt, const Utterance& u);
void write_attention_csv(const Matrix& a, const Utterance& u, std::ostream& out);

struct AttentionConcentration {
  double boundary_mass = 0.0;  // mean share of A within the window
  double uniform_mass = 0.0;   // mean share the window would get under uniform A
  int utterances = 0;
  double ratio() const { return uniform_mass > 0.0 ? boundary_mass / uniform_mass : 0.0; }
};

// Over utterances with at least one switch; the window is +-`radius` frames
// around every boundary frame.
AttentionConcentration attention_concentration(const Checkpoint& ckpt, const Dataset& data, int radius = 2);

enum class AblationRow { Baseline, MoeAdapter, Cla, Bat };
inline constexpr AblationRow kAblationRows[] = {AblationRow::Baseline, AblationRow::MoeAdapter, AblationRow::Cla,
                                                AblationRow::Bat};

std::string ablation_row_name(AblationRow row);
TrainConfig ablation_config(const TrainConfig& base, AblationRow row);

struct AblationEntry {
  AblationRow row = AblationRow::Baseline;
  TrainResult training;
  ScoreReport report;
  std::size_t adapter_params = 0;
  double seconds = 0.0;
};

struct AblationOptions {
  TrainOptions train;
  std::function<void(const AblationEntry&)> on_row;
};

// Trains the four rows on identical data and seed; failures are rethrown
// with the row name.
std::vector<AblationEntry> run_ablation(const TrainConfig& base, const Dataset& train_set, const Dataset& dev_set,
                                        const Dataset& test_set, const AblationOptions& options = {});
std::string ablation_markdown(const std::vector<AblationEntry>& entries);
std::string ablation_csv(const std::vector<AblationEntry>& entries);

struct GradcheckOptions {
  ModelConfig model;
  LossWeights weights;
  int frames = 12;
  std::uint64_t seed = 1;
  double step = 1e-5;
  double tolerance = 1e-4;
  std::size_t max_params = 20000;
  std::function<void(ParamStore&)> after_backward;  // for self-tests
};

// L=2, d=16, d_r=4.
ModelConfig toy_model_config();
// A feasible synthetic utterance of exactly `frames` frames with one switch.
Utterance toy_utterance(const ModelConfig& model, int frames, std::uint64_t seed);

struct GradcheckResult {
  GradCheckReport report;
  std::vector<GroupGradCheck> groups;
  std::size_t param_count = 0;
  double tolerance = 0.0;
  bool passed() const;
};

// Refuses (ConfigError) models above max_params scalars.
GradcheckResult run_gradcheck(const GradcheckOptions& options);
void print_gradcheck(const GradcheckResult& result, std::ostream& out);

}  // namespace csmoe
