// SPDX-License-Identifier: Apache-2.0

#include "csmoe/decoder.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "csmoe/errors.hpp"
#include "csmoe/nn.hpp"
#include "csmoe/vocab.hpp"

namespace csmoe {

namespace {

constexpr double kLayerNormEps = 1e-5;

std::string layer_prefix(int layer) { return "dec.layer" + std::to_string(layer); }

}  // namespace

int decoder_vocab_size(const ParamStore& ps) { return ps.at("dec.embed").value.rows(); }

ad::Var decoder_forward(ad::Tape& tape, ad::Var memory, std::span<const int> prefix, ParamStore& ps,
                        const DecoderConfig& config) {
  if (prefix.empty()) throw ContractError("decoder_forward: empty prefix");
  if (prefix.front() != Vocab::kSos) throw ContractError("decoder_forward: prefix must start with <sos>");
  if (memory.rows() < 1) throw ContractError("decoder_forward: empty memory");
  if (memory.cols() != config.d_model) {
    throw DimensionError("decoder_forward: memory width " + std::to_string(memory.cols()) + " != d_model " +
                         std::to_string(config.d_model));
  }
  const int n = static_cast<int>(prefix.size());
  memory = ad::add(memory, tape.constant(nn::sinusoidal_positions(memory.rows(), config.d_model)));
  ad::Var x = ad::gather_rows(tape.param(ps.at("dec.embed")), prefix);
  x = ad::add(x, tape.constant(nn::sinusoidal_positions(n, config.d_model)));
  for (int l = 0; l < config.num_layers; ++l) {
    const std::string p = layer_prefix(l);
    ad::Var h = nn::layer_norm(tape, x, ps, p + ".self_ln", kLayerNormEps);
    x = ad::add(x, nn::multi_head_attention(tape, h, h, ps, p + ".self", config.num_heads, true));
    h = nn::layer_norm(tape, x, ps, p + ".cross_ln", kLayerNormEps);
    x = ad::add(x, nn::multi_head_attention(tape, h, memory, ps, p + ".cross", config.num_heads, false));
    h = nn::layer_norm(tape, x, ps, p + ".ff_ln", kLayerNormEps);
    x = ad::add(x, nn::feed_forward(tape, h, ps, p + ".ff"));
  }
  x = nn::layer_norm(tape, x, ps, "dec.final_ln", kLayerNormEps);
  return nn::linear(tape, x, ps, "dec.out");
}

ad::Var ce_loss(ad::Var logits, std::span<const int> target) {
  if (static_cast<int>(target.size()) != logits.rows()) {
    throw DimensionError("ce_loss: " + std::to_string(target.size()) + " targets for " +
                         logits.value().shape_string() + " logits");
  }
  return ad::nll_mean(ad::log_softmax_rows(logits), target);
}

std::vector<int> decoder_input(std::span<const int> target) {
  std::vector<int> in;
  in.reserve(target.size() + 1);
  in.push_back(Vocab::kSos);
  in.insert(in.end(), target.begin(), target.end());
  return in;
}

std::vector<int> decoder_output(std::span<const int> target) {
  std::vector<int> out(target.begin(), target.end());
  out.push_back(Vocab::kEos);
  return out;
}

IncrementalDecoder::IncrementalDecoder(const Matrix& memory, const ParamStore& ps, const DecoderConfig& config)
    : ps_(ps), config_(config) {
  if (memory.rows() < 1) throw ContractError("IncrementalDecoder: empty memory");
  if (memory.cols() != config.d_model) {
    throw DimensionError("IncrementalDecoder: memory width " + std::to_string(memory.cols()) + " != d_model " +
                         std::to_string(config.d_model));
  }
  Matrix mem = memory;
  mem += nn::sinusoidal_positions(memory.rows(), config.d_model);
  for (int l = 0; l < config.num_layers; ++l) {
    const std::string p = layer_prefix(l) + ".cross";
    Layer layer;
    layer.self_k = Matrix(0, config.d_model);
    layer.self_v = Matrix(0, config.d_model);
    layer.cross_k = matmul(mem, ps.at(p + ".wk").value);
    layer.cross_v = matmul(mem, ps.at(p + ".wv").value);
    layers_.push_back(std::move(layer));
  }
}

Matrix IncrementalDecoder::attend(const Matrix& q, const Matrix& k, const Matrix& v, int rows) const {
  const int d = config_.d_model, dh = d / config_.num_heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  Matrix merged(1, d);
  std::vector<double> w(static_cast<std::size_t>(rows));
  for (int h = 0; h < config_.num_heads; ++h) {
    const int off = h * dh;
    double mx = -std::numeric_limits<double>::infinity();
    for (int j = 0; j < rows; ++j) {
      double dot = 0.0;
      for (int c = 0; c < dh; ++c) dot += q(0, off + c) * k(j, off + c);
      w[static_cast<std::size_t>(j)] = dot * inv_sqrt;
      mx = std::max(mx, w[static_cast<std::size_t>(j)]);
    }
    double z = 0.0;
    for (double& x : w) z += (x = std::exp(x - mx));
    for (int j = 0; j < rows; ++j)
      for (int c = 0; c < dh; ++c) merged(0, off + c) += w[static_cast<std::size_t>(j)] / z * v(j, off + c);
  }
  return merged;
}

Matrix IncrementalDecoder::step(int token) {
  const int d = config_.d_model;
  const Matrix& embed = ps_.at("dec.embed").value;
  if (token < 0 || token >= embed.rows()) throw ContractError("IncrementalDecoder: token id out of range");
  if (length_ == 0 && token != Vocab::kSos) throw ContractError("IncrementalDecoder: first token must be <sos>");
  const Matrix pe = nn::sinusoidal_positions(length_ + 1, d);
  Matrix x(1, d);
  for (int j = 0; j < d; ++j) x(0, j) = embed(token, j) + pe(length_, j);
  auto ln = [this](const Matrix& v, const std::string& p) {
    return ad::layer_norm_rows(v, ps_.at(p + ".gamma").value, ps_.at(p + ".beta").value, kLayerNormEps);
  };
  auto append = [d](Matrix& m, const Matrix& row) {
    std::vector<double> data = m.data();
    data.insert(data.end(), row.data().begin(), row.data().end());
    m = Matrix(m.rows() + 1, d, std::move(data));
  };
  for (int l = 0; l < config_.num_layers; ++l) {
    const std::string p = layer_prefix(l);
    Layer& layer = layers_[static_cast<std::size_t>(l)];
    Matrix h = ln(x, p + ".self_ln");
    append(layer.self_k, matmul(h, ps_.at(p + ".self.wk").value));
    append(layer.self_v, matmul(h, ps_.at(p + ".self.wv").value));
    x += matmul(attend(matmul(h, ps_.at(p + ".self.wq").value), layer.self_k, layer.self_v, layer.self_k.rows()),
                ps_.at(p + ".self.wo").value);
    h = ln(x, p + ".cross_ln");
    x += matmul(attend(matmul(h, ps_.at(p + ".cross.wq").value), layer.cross_k, layer.cross_v, layer.cross_k.rows()),
                ps_.at(p + ".cross.wo").value);
    h = ln(x, p + ".ff_ln");
    Matrix f = matmul(h, ps_.at(p + ".ff.fc1.w").value);
    f += ps_.at(p + ".ff.fc1.b").value;
    for (double& v : f.data()) v = v > 0.0 ? v : 0.0;
    Matrix o = matmul(f, ps_.at(p + ".ff.fc2.w").value);
    o += ps_.at(p + ".ff.fc2.b").value;
    x += o;
  }
  Matrix logits = matmul(ln(x, "dec.final_ln"), ps_.at("dec.out.w").value);
  logits += ps_.at("dec.out.b").value;
  ++length_;
  return logits;
}

std::vector<int> greedy_decode(const Matrix& memory, ParamStore& ps, const DecoderConfig& config, int max_len) {
  if (max_len < 1) throw ContractError("greedy_decode: max_len must be >= 1");
  IncrementalDecoder dec(memory, ps, config);
  std::vector<int> hyp;
  int next = Vocab::kSos;
  while (static_cast<int>(hyp.size()) < max_len) {
    const Matrix lv = dec.step(next);
    int best = -1;
    for (int k = 0; k < lv.cols(); ++k) {
      if (k == Vocab::kBlank || k == Vocab::kSos || k == Vocab::kUnk) continue;
      if (best < 0 || lv(0, k) > lv(0, best)) best = k;
    }
    if (best == Vocab::kEos) break;
    hyp.push_back(best);
    next = best;
  }
  return hyp;
}

void init_decoder_params(ParamStore& ps, const DecoderConfig& config, int vocab_size, std::mt19937_64& rng) {
  config.validate();
  const int d = config.d_model;
  ps.add_uniform("dec.embed", vocab_size, d, rng);
  for (int l = 0; l < config.num_layers; ++l) {
    const std::string p = layer_prefix(l);
    nn::add_layer_norm(ps, p + ".self_ln", d);
    nn::add_attention(ps, p + ".self", d, rng);
    nn::add_layer_norm(ps, p + ".cross_ln", d);
    nn::add_attention(ps, p + ".cross", d, rng);
    nn::add_layer_norm(ps, p + ".ff_ln", d);
    nn::add_feed_forward(ps, p + ".ff", d, config.d_ff, rng);
  }
  nn::add_layer_norm(ps, "dec.final_ln", d);
  nn::add_linear(ps, "dec.out", d, vocab_size, true, rng);
}

}  // namespace csmoe
