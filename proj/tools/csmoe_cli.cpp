// SPDX-License-Identifier: Apache-2.0
//
// csmoe: data generation, training, evaluation, ablation, gradient check and
// CSV exports. Exit status: 0 ok, 1 gradient check failed, 2 usage or
// contract error, 3 numerical failure.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "csmoe/errors.hpp"
#include "csmoe/harness.hpp"

namespace fs = std::filesystem;
using namespace csmoe;

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out_dir = ".";
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "key = value config file")->check(CLI::ExistingFile);
  cmd->add_option("--seed", c.seed, "override the seed");
  cmd->add_option("--out-dir", c.out_dir, "output directory");
}

ExperimentConfig load(const Common& c) {
  return c.config.empty() ? ExperimentConfig{} : load_experiment_config(c.config);
}

fs::path out_path(const Common& c, const std::string& name) {
  fs::create_directories(c.out_dir);
  return fs::path(c.out_dir) / name;
}

std::ofstream open_out(const fs::path& p) {
  std::ofstream out(p);
  if (!out) throw Error("cannot write " + p.string());
  return out;
}

const Utterance& pick(const Dataset& data, const std::string& id, int index) {
  if (!id.empty()) {
    for (const Utterance& u : data)
      if (u.id == id) return u;
    throw ContractError("no utterance with id " + id);
  }
  if (index < 0 || index >= static_cast<int>(data.size())) {
    throw ContractError("utterance index " + std::to_string(index) + " out of range (" + std::to_string(data.size()) +
                        " utterances)");
  }
  return data[static_cast<std::size_t>(index)];
}

void log_line(const std::string& s) { std::cerr << s << std::endl; }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Code-switching MoE-adapter recognizer on synthetic data"};
  app.require_subcommand(1);

  Common gen_opts, train_opts, eval_opts, ablate_opts, grad_opts, gates_opts, attn_opts;

  auto* gen = app.add_subcommand("gen-data", "write train/dev/test JSONL corpora");
  add_common(gen, gen_opts);

  auto* trn = app.add_subcommand("train", "train one model");
  add_common(trn, train_opts);
  std::string train_data, dev_data;
  trn->add_option("--train-data", train_data, "training JSONL")->required()->check(CLI::ExistingFile);
  trn->add_option("--dev-data", dev_data, "dev JSONL used for checkpoint selection")->check(CLI::ExistingFile);

  auto* ev = app.add_subcommand("eval", "greedy-decode and score a test set");
  add_common(ev, eval_opts);
  std::string eval_ckpt, eval_data, boundary_source = "tags";
  ev->add_option("--checkpoint", eval_ckpt)->required()->check(CLI::ExistingFile);
  ev->add_option("--data", eval_data, "test JSONL")->required()->check(CLI::ExistingFile);
  ev->add_option("--boundary-source", boundary_source, "hypothesis tags for BER")
      ->check(CLI::IsMember({"tags", "emitted"}));

  auto* abl = app.add_subcommand("ablate", "train and score the four ablation rows");
  add_common(abl, ablate_opts);
  std::string abl_train, abl_dev, abl_test;
  abl->add_option("--train-data", abl_train, "training JSONL (default: generated)")->check(CLI::ExistingFile);
  abl->add_option("--dev-data", abl_dev)->check(CLI::ExistingFile);
  abl->add_option("--test-data", abl_test)->check(CLI::ExistingFile);

  auto* grad = app.add_subcommand("gradcheck", "finite-difference check of the full objective");
  add_common(grad, grad_opts);
  int grad_frames = 12;
  grad->add_option("--frames", grad_frames, "utterance length");

  auto* gates = app.add_subcommand("export-gates", "per-layer, per-frame gate coefficients as CSV");
  add_common(gates, gates_opts);
  auto* attn = app.add_subcommand("export-attention", "boundary attention weights as CSV");
  add_common(attn, attn_opts);
  std::string exp_ckpt, exp_data, exp_id, exp_out;
  int exp_index = 0;
  for (auto* cmd : {gates, attn}) {
    cmd->add_option("--checkpoint", exp_ckpt)->required()->check(CLI::ExistingFile);
    cmd->add_option("--data", exp_data, "JSONL corpus")->required()->check(CLI::ExistingFile);
    cmd->add_option("--id", exp_id, "utterance id");
    cmd->add_option("--index", exp_index, "utterance index (default 0)");
    cmd->add_option("--out", exp_out, "CSV file name inside --out-dir");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*gen) {
      ExperimentConfig cfg = load(gen_opts);
      if (gen_opts.seed) cfg.data.seed = *gen_opts.seed;
      cfg.validate();
      const auto c = cfg.corpus;
      write_jsonl(generate_dataset(cfg.data, c.train, 0), out_path(gen_opts, "train.jsonl"));
      if (c.dev > 0) write_jsonl(generate_dataset(cfg.data, c.dev, static_cast<std::uint64_t>(c.train)), out_path(gen_opts, "dev.jsonl"));
      write_jsonl(generate_dataset(cfg.data, c.test, static_cast<std::uint64_t>(c.train + c.dev)), out_path(gen_opts, "test.jsonl"));
      std::cout << "wrote " << c.train << "/" << c.dev << "/" << c.test << " utterances to " << gen_opts.out_dir << "\n";
    } else if (*trn) {
      ExperimentConfig cfg = load(train_opts);
      if (train_opts.seed) cfg.train.seed = *train_opts.seed;
      const Dataset tr = read_jsonl(train_data);
      const Dataset dv = dev_data.empty() ? Dataset{} : read_jsonl(dev_data);
      TrainResult r = train(cfg.train, tr, dv, TrainOptions{log_line});
      save_checkpoint(r.best, out_path(train_opts, "checkpoint.json"));
      save_checkpoint(r.last, out_path(train_opts, "last.json"));
      auto log = open_out(out_path(train_opts, "steps.csv"));
      write_step_log(r.log, log);
      std::cout << "trained " << r.last.step << " steps; best checkpoint at step " << r.best.step << "\n";
    } else if (*ev) {
      const Checkpoint ckpt = load_checkpoint(eval_ckpt);
      const Dataset test = read_jsonl(eval_data);
      const EvalResult r = evaluate(ckpt, test, boundary_source == "emitted" ? BoundarySource::Emitted
                                                                           : BoundarySource::TagInference);
      const std::string report = to_json(r.report).dump(2);
      std::cout << report << "\n";
      auto js = open_out(out_path(eval_opts, "report.json"));
      js << report << "\n";
      auto al = open_out(out_path(eval_opts, "alignments.txt"));
      const Vocab vocab(ckpt.config.model.cn_vocab, ckpt.config.model.en_vocab);
      for (std::size_t i = 0; i < test.size(); ++i) {
        const TaggedTokens hyp = tag_by_vocabulary(r.hypotheses[i].ids, vocab);
        al << test[i].id << "\n" << alignment_report(test[i].tokens, hyp.tokens, vocab) << "\n";
      }
    } else if (*abl) {
      ExperimentConfig cfg = load(ablate_opts);
      if (ablate_opts.seed) cfg.train.seed = *ablate_opts.seed;
      const auto c = cfg.corpus;
      const Dataset tr = abl_train.empty() ? generate_dataset(cfg.data, c.train, 0) : read_jsonl(abl_train);
      const Dataset dv = abl_dev.empty()
                             ? (c.dev > 0 ? generate_dataset(cfg.data, c.dev, static_cast<std::uint64_t>(c.train)) : Dataset{})
                             : read_jsonl(abl_dev);
      const Dataset te = abl_test.empty()
                             ? generate_dataset(cfg.data, c.test, static_cast<std::uint64_t>(c.train + c.dev))
                             : read_jsonl(abl_test);
      AblationOptions opts;
      opts.train.progress = log_line;
      opts.on_row = [&](const AblationEntry& e) {
        static const char* const kSlugs[] = {"baseline", "moe_adapter", "cla", "bat"};
        const std::string file = kSlugs[static_cast<int>(e.row)];
        save_checkpoint(e.training.best, out_path(ablate_opts, "checkpoint_" + file + ".json"));
        log_line(ablation_row_name(e.row) + " done");
      };
      const auto rows = run_ablation(cfg.train, tr, dv, te, opts);
      const std::string md = ablation_markdown(rows);
      std::cout << md;
      auto m = open_out(out_path(ablate_opts, "ablation.md"));
      m << md;
      auto csv = open_out(out_path(ablate_opts, "ablation.csv"));
      csv << ablation_csv(rows);
    } else if (*grad) {
      GradcheckOptions opts;
      opts.model = grad_opts.config.empty() ? toy_model_config() : load(grad_opts).train.model;
      if (!grad_opts.config.empty()) opts.weights = load(grad_opts).train.weights;
      if (grad_opts.seed) opts.seed = *grad_opts.seed;
      opts.frames = grad_frames;
      const GradcheckResult r = run_gradcheck(opts);
      print_gradcheck(r, std::cout);
      return r.passed() ? 0 : 1;
    } else if (*gates || *attn) {
      const Checkpoint ckpt = load_checkpoint(exp_ckpt);
      const Dataset data = read_jsonl(exp_data);
      const Utterance& u = pick(data, exp_id, exp_index);
      const Common& c = *gates ? gates_opts : attn_opts;
      const std::string name = !exp_out.empty() ? exp_out : (*gates ? "gates.csv" : "attention.csv");
      auto out = open_out(out_path(c, name));
      if (*gates) {
        write_gates_csv(gate_coefficients(ckpt, u), out);
      } else {
        write_attention_csv(attention_weights(ckpt, u), u, out);
      }
      std::cout << "wrote " << (fs::path(c.out_dir) / name).string() << "\n";
    }
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
