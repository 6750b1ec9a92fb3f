// Copyright 2026 The retromae-desk Authors
// SPDX-License-Identifier: Apache-2.0

#include "retromae/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "retromae/model.hpp"
#include "retromae/rng.hpp"
#include "retromae/text.hpp"

namespace retromae::gradcheck {

using ad::Var;

namespace {

Tensor<double> random_tensor(Rng& rng, Shape shape, double scale = 1.0) {
  Tensor<double> t(std::move(shape));
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = scale * rng.normal();
  return t;
}

// sum_i w_i * y_i with weights fixed by the seed.
Var<double> weighted_sum(Var<double> y, std::uint64_t seed) {
  Rng rng(seed);
  const std::size_t n = y.value().size();
  auto w = random_tensor(rng, {n, 1});
  auto flat = ad::reshape(y, {1, n});
  return ad::sum(ad::matmul(flat, y.tape->constant(std::move(w))));
}

void update(Result& r, double analytic, double numeric) {
  r.max_rel_error = std::max(r.max_rel_error, relative_error(analytic, numeric));
  r.max_abs_grad = std::max(r.max_abs_grad, std::abs(analytic));
  ++r.checked;
}

}  // namespace

double relative_error(double analytic, double numeric, double floor) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

double Report::max_rel_error() const {
  double m = 0.0;
  for (const auto& r : items) m = std::max(m, r.max_rel_error);
  return m;
}

std::size_t Report::checked() const {
  std::size_t n = 0;
  for (const auto& r : items) n += r.checked;
  return n;
}

std::string Report::format() const {
  std::string out;
  char buf[64];
  for (const auto& r : items) {
    std::snprintf(buf, sizeof buf, "  %.3e  %zu\n", r.max_rel_error, r.checked);
    out += r.name + buf;
  }
  return out;
}

Report check_function(const std::string& name, std::vector<Tensor<double>> inputs, const LossFn& loss,
                      double h) {
  std::vector<ad::Parameter<double>> leaves;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    leaves.emplace_back(name + "." + std::to_string(i), std::move(inputs[i]));
  }
  auto evaluate = [&](bool with_grad) {
    ad::Tape<double> tape;
    std::vector<Var<double>> vars;
    for (auto& p : leaves) vars.push_back(tape.param(p));
    auto l = loss(tape, vars);
    const double v = l.value()[0];
    if (with_grad) tape.backward(l);
    return v;
  };
  for (auto& p : leaves) p.zero_grad();
  evaluate(true);

  Report report;
  for (auto& p : leaves) {
    Result r{p.name};
    for (std::size_t j = 0; j < p.value.size(); ++j) {
      const double saved = p.value[j];
      p.value[j] = saved + h;
      const double up = evaluate(false);
      p.value[j] = saved - h;
      const double down = evaluate(false);
      p.value[j] = saved;
      update(r, p.grad[j], (up - down) / (2.0 * h));
    }
    report.items.push_back(r);
  }
  return report;
}

Report check_ops(std::uint64_t seed, double h) {
  Rng rng(derive_seed(seed, {0x6f70}));
  Report all;
  std::uint64_t k = 0;
  auto run = [&](const std::string& name, std::vector<Tensor<double>> inputs, auto&& op) {
    const std::uint64_t wseed = derive_seed(seed, {0x7773, k++});
    auto rep = check_function(
        name, std::move(inputs),
        [&](ad::Tape<double>&, std::vector<Var<double>>& v) { return weighted_sum(op(v), wseed); },
        h);
    all.items.insert(all.items.end(), rep.items.begin(), rep.items.end());
  };
  using V = std::vector<Var<double>>;

  run("add", {random_tensor(rng, {3, 4}), random_tensor(rng, {3, 4})},
      [](V& v) { return ad::add(v[0], v[1]); });
  run("scale", {random_tensor(rng, {3, 4})}, [](V& v) { return ad::scale(v[0], -1.7); });
  run("sum", {random_tensor(rng, {3, 4})}, [](V& v) { return ad::sum(v[0]); });
  run("add_bias", {random_tensor(rng, {3, 4}), random_tensor(rng, {4})},
      [](V& v) { return ad::add_bias(v[0], v[1]); });
  run("transpose", {random_tensor(rng, {3, 5})}, [](V& v) { return ad::transpose(v[0]); });
  run("reshape", {random_tensor(rng, {3, 4})}, [](V& v) { return ad::reshape(v[0], {2, 6}); });
  run("matmul", {random_tensor(rng, {4, 5}), random_tensor(rng, {5, 2})},
      [](V& v) { return ad::matmul(v[0], v[1]); });
  run("batched_matmul", {random_tensor(rng, {2, 3, 4}), random_tensor(rng, {2, 4, 2})},
      [](V& v) { return ad::batched_matmul(v[0], v[1]); });
  run("batched_matmul_bt", {random_tensor(rng, {2, 3, 4}), random_tensor(rng, {2, 5, 4})},
      [](V& v) { return ad::batched_matmul_bt(v[0], v[1]); });
  run("gelu", {random_tensor(rng, {3, 5}, 2.0)}, [](V& v) { return ad::gelu(v[0]); });
  run("layer_norm",
      {random_tensor(rng, {3, 6}), random_tensor(rng, {6}), random_tensor(rng, {6})},
      [](V& v) { return ad::layer_norm(v[0], v[1], v[2]); });

  Tensor<double> shared({3, 4});
  for (std::size_t r = 0; r < 3; ++r)
    for (std::size_t c = 0; c < 4; ++c)
      if ((r + c) % 3 == 1) shared.at(r, c) = ad::kMasked<double>;
  run("masked_softmax", {random_tensor(rng, {2, 3, 4})},
      [&](V& v) { return ad::masked_softmax(v[0], shared); });
  Tensor<double> grouped({2, 3, 4});
  for (std::size_t i = 0; i < grouped.size(); ++i)
    if (i % 5 == 2) grouped[i] = ad::kMasked<double>;
  run("masked_softmax.grouped", {random_tensor(rng, {4, 3, 4})},
      [&](V& v) { return ad::masked_softmax(v[0], grouped); });

  run("gather_rows", {random_tensor(rng, {5, 3})},
      [](V& v) { return ad::gather_rows(v[0], {0, 2, 2, 4, 2}); });
  run("select_rows", {random_tensor(rng, {4, 3}), random_tensor(rng, {4, 3})},
      [](V& v) { return ad::select_rows(v[0], v[1], {0, 1, 1, 0}); });
  run("split_heads", {random_tensor(rng, {6, 4})},
      [](V& v) { return ad::split_heads(v[0], 2, 2); });
  run("merge_heads", {random_tensor(rng, {4, 3, 2})},
      [](V& v) { return ad::merge_heads(v[0], 2, 2); });
  run("cross_entropy", {random_tensor(rng, {4, 6}, 2.0)},
      [](V& v) { return ad::cross_entropy(v[0], {1, 5, 0, 3}, {1, 0, 1, 1}); });
  return all;
}

RunConfig tiny_config(DecodeMode mode, std::size_t decoder_layers) {
  RunConfig c = RunConfig::desk();
  c.encoder.layers = 2;
  c.encoder.hidden_dim = 16;
  c.encoder.heads = 4;
  c.encoder.ffn_dim = 64;
  c.encoder.max_len = 8;
  c.encoder.vocab_size = 50;
  c.decoder.mode = mode;
  c.decoder.layers = decoder_layers;
  c.decoder.heads = 4;
  c.train.batch_size = 2;
  return c;
}

Report check_model(DecodeMode mode, std::size_t decoder_layers, std::uint64_t seed, double h,
                   std::size_t stride, double encoder_mlm_weight) {
  const RunConfig cfg = tiny_config(mode, decoder_layers);
  cfg.validate();
  auto params = model::ModelParams<double>::init(cfg.encoder, cfg.decoder, 0.3, seed);
  // Move gains and biases off their constant initial values so every
  // parameter sees a generic gradient.
  Rng rng(derive_seed(seed, {0x6763}));
  for (auto* p : params.all()) {
    if (p->value.shape().size() == 1) {
      for (std::size_t i = 0; i < p->value.size(); ++i) p->value[i] += 0.2 * rng.normal();
    }
  }

  const std::size_t V = cfg.encoder.vocab_size;
  std::vector<text::TokenSequence> store;
  for (std::size_t len : {cfg.encoder.max_len, cfg.encoder.max_len - 2}) {
    text::TokenSequence s;
    s.ids.push_back(text::kCls);
    for (std::size_t i = 0; i + 2 < len; ++i) {
      s.ids.push_back(static_cast<text::TokenId>(text::kNumReserved + rng.below(V - text::kNumReserved)));
    }
    s.ids.push_back(text::kSep);
    store.push_back(std::move(s));
  }
  const std::vector<std::size_t> idx{0, 1};
  const auto batch = text::make_batch(store, idx);
  const auto in = model::prepare_inputs(batch, mode, cfg.train.gamma_en, cfg.train.gamma_de, seed, 0);

  auto evaluate = [&](bool with_grad) {
    ad::Tape<double> tape;
    model::Graph<double> g(tape, params);
    auto out = model::forward_step(g, in, encoder_mlm_weight);
    const double v = out.loss.value()[0];
    if (with_grad) tape.backward(out.loss);
    return v;
  };
  params.zero_grad();
  evaluate(true);

  Report report;
  if (stride == 0) stride = 1;
  for (auto* p : params.all()) {
    Result r{p->name};
    for (std::size_t j = 0; j < p->value.size(); j += stride) {
      const double saved = p->value[j];
      p->value[j] = saved + h;
      const double up = evaluate(false);
      p->value[j] = saved - h;
      const double down = evaluate(false);
      p->value[j] = saved;
      update(r, p->grad[j], (up - down) / (2.0 * h));
    }
    report.items.push_back(r);
  }
  return report;
}

}  // namespace retromae::gradcheck
