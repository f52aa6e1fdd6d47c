// SPDX-License-Identifier: Apache-2.0

#include "csmoe/nn.hpp"

#include <cmath>
#include <vector>

#include "csmoe/errors.hpp"

namespace csmoe::nn {

ad::Var linear(ad::Tape& tape, ad::Var x, ParamStore& ps, const std::string& prefix) {
  ad::Var y = ad::matmul(x, tape.param(ps.at(prefix + ".w")));
  if (Parameter* b = ps.find(prefix + ".b")) y = ad::add_row(y, tape.param(*b));
  return y;
}

ad::Var layer_norm(ad::Tape& tape, ad::Var x, ParamStore& ps, const std::string& prefix, double eps) {
  return ad::layer_norm_rows(x, tape.param(ps.at(prefix + ".gamma")), tape.param(ps.at(prefix + ".beta")), eps);
}

ad::Var multi_head_attention(ad::Tape& tape, ad::Var query_in, ad::Var memory, ParamStore& ps,
                             const std::string& prefix, int num_heads, bool causal) {
  const int d = query_in.cols();
  if (num_heads < 1 || d % num_heads != 0) {
    throw ConfigError(prefix + ": model width " + std::to_string(d) + " not divisible by " +
                      std::to_string(num_heads) + " heads");
  }
  const int dh = d / num_heads;
  ad::Var q = ad::matmul(query_in, tape.param(ps.at(prefix + ".wq")));
  ad::Var k = ad::matmul(memory, tape.param(ps.at(prefix + ".wk")));
  ad::Var v = ad::matmul(memory, tape.param(ps.at(prefix + ".wv")));
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<ad::Var> heads;
  heads.reserve(static_cast<std::size_t>(num_heads));
  for (int h = 0; h < num_heads; ++h) {
    ad::Var qh = num_heads == 1 ? q : ad::slice_cols(q, h * dh, dh);
    ad::Var kh = num_heads == 1 ? k : ad::slice_cols(k, h * dh, dh);
    ad::Var vh = num_heads == 1 ? v : ad::slice_cols(v, h * dh, dh);
    ad::Var scores = ad::scale(ad::matmul_nt(qh, kh), inv_sqrt);
    heads.push_back(ad::matmul(ad::softmax_rows(scores, causal), vh));
  }
  ad::Var merged = num_heads == 1 ? heads.front() : ad::concat_cols(heads);
  return ad::matmul(merged, tape.param(ps.at(prefix + ".wo")));
}

ad::Var feed_forward(ad::Tape& tape, ad::Var x, ParamStore& ps, const std::string& prefix) {
  return linear(tape, ad::relu(linear(tape, x, ps, prefix + ".fc1")), ps, prefix + ".fc2");
}

Matrix sinusoidal_positions(int length, int dim) {
  Matrix pe(length, dim);
  for (int pos = 0; pos < length; ++pos) {
    for (int i = 0; i < dim; ++i) {
      const double rate = std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / dim);
      pe(pos, i) = (i % 2 == 0) ? std::sin(pos * rate) : std::cos(pos * rate);
    }
  }
  return pe;
}

void add_linear(ParamStore& ps, const std::string& prefix, int in, int out, bool bias, std::mt19937_64& rng) {
  ps.add_uniform(prefix + ".w", in, out, rng);
  if (bias) ps.add_constant(prefix + ".b", 1, out, 0.0);
}

void add_layer_norm(ParamStore& ps, const std::string& prefix, int dim) {
  ps.add_constant(prefix + ".gamma", 1, dim, 1.0);
  ps.add_constant(prefix + ".beta", 1, dim, 0.0);
}

void add_attention(ParamStore& ps, const std::string& prefix, int dim, std::mt19937_64& rng) {
  for (const char* name : {".wq", ".wk", ".wv", ".wo"}) ps.add_uniform(prefix + name, dim, dim, rng);
}

void add_feed_forward(ParamStore& ps, const std::string& prefix, int dim, int hidden, std::mt19937_64& rng) {
  add_linear(ps, prefix + ".fc1", dim, hidden, true, rng);
  add_linear(ps, prefix + ".fc2", hidden, dim, true, rng);
}

}  // namespace csmoe::nn
