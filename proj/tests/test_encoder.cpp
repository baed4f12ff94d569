#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>

#include "ponet/checkpoint.hpp"
#include "ponet/encoder.hpp"

using namespace ponet;

namespace {

double rel(double a, double b) {
  return std::fabs(a - b) / std::max({std::fabs(a), std::fabs(b), 1e-8});
}

EncoderConfig toy_cfg() {
  EncoderConfig cfg;
  cfg.vocab_size = 16;
  cfg.max_len = 12;
  cfg.d = 6;
  cfg.layers = 2;
  cfg.ffn_hidden = 12;
  cfg.dropout_rate = 0.0;
  cfg.num_classes = 3;
  cfg.mixer.heads = 2;
  return cfg;
}

}  // namespace

TEST_CASE("encode is deterministic in eval mode and shape preserving") {
  auto cfg = toy_cfg();
  Rng rng(41);
  auto params = EncoderParams<double>::random(cfg, rng);
  std::vector<int64_t> tokens{1, 5, 9, 3, 7};
  auto seg = segment_even(5, 2);
  auto a = encode(tokens, seg, params, cfg);
  auto b = encode(tokens, seg, params, cfg);
  REQUIRE(a.rows() == 5);
  REQUIRE(a.cols() == cfg.d);
  for (int64_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);

  // every variant keeps the shape
  for (MixerVariant v : {MixerVariant::no_ss_ga, MixerVariant::no_ga,
                         MixerVariant::ga_only}) {
    EncoderConfig c2 = cfg;
    c2.mixer.variant = v;
    Rng r2(42);
    auto p2 = EncoderParams<double>::random(c2, r2);
    auto out = encode(tokens, seg, p2, c2);
    CHECK(out.rows() == 5);
    CHECK(out.cols() == cfg.d);
  }
}

TEST_CASE("encode rejects invalid inputs") {
  auto cfg = toy_cfg();
  Rng rng(43);
  auto params = EncoderParams<double>::random(cfg, rng);
  auto seg = segment_even(3, 1);
  CHECK_THROWS_AS(encode({1, 2, 99}, seg, params, cfg), InputError);
  std::vector<int64_t> too_long(size_t(cfg.max_len + 1), 1);
  CHECK_THROWS_AS(
      encode(too_long, segment_even(cfg.max_len + 1, 1), params, cfg),
      InputError);
}

TEST_CASE("single layer equals manual sublayer composition") {
  auto cfg = toy_cfg();
  cfg.layers = 1;
  Rng rng(44);
  auto params = EncoderParams<double>::random(cfg, rng, 0.3);
  std::vector<int64_t> tokens{2, 8, 4, 11};
  auto seg = segment_even(4, 2);
  auto out = encode(tokens, seg, params, cfg);

  // manual composition: embed -> mix -> residual+LN -> ffn -> residual+LN
  auto h = embed_tokens(tokens, params, cfg);
  const auto& lp = params.layers[0];
  auto mix = mix_forward(h, lp.mix, seg, cfg.mixer_at(0), cfg.mix_path);
  auto h1 = layer_norm(add(h, mix.p), lp.ln1_gain, lp.ln1_bias);
  auto pre = affine(h1, lp.ffn_w1, lp.ffn_b1);
  for (int64_t i = 0; i < pre.size(); ++i) pre[i] = gelu(pre[i]);
  auto f = affine(pre, lp.ffn_w2, lp.ffn_b2);
  auto h2 = layer_norm(add(h1, f), lp.ln2_gain, lp.ln2_bias);
  for (int64_t i = 0; i < out.size(); ++i) CHECK(rel(out[i], h2[i]) < 1e-12);
}

TEST_CASE("zero parameters still produce finite output") {
  auto cfg = toy_cfg();
  cfg.layers = 1;
  auto params = EncoderParams<double>::zeros(cfg);
  // zero gains would zero the output; restore the usual LN initialization
  params.layers[0].ln1_gain.fill(1.0);
  params.layers[0].ln2_gain.fill(1.0);
  auto out = encode({0, 1, 2}, segment_even(3, 1), params, cfg);
  for (int64_t i = 0; i < out.size(); ++i) CHECK(std::isfinite(out[i]));
}

TEST_CASE("residual identity: zero sublayers reduce to repeated layer norm") {
  auto cfg = toy_cfg();
  cfg.layers = 1;
  Rng rng(45);
  auto params = EncoderParams<double>::random(cfg, rng, 0.2);
  // zero every mixer projection and the ffn: both sublayer outputs vanish
  params.layers[0].mix.for_each_param(
      "", [](const std::string&, Tensor<double>& t) { t.fill(0.0); });
  params.layers[0].ffn_w1.fill(0.0);
  params.layers[0].ffn_b1.fill(0.0);
  params.layers[0].ffn_w2.fill(0.0);
  params.layers[0].ffn_b2.fill(0.0);

  std::vector<int64_t> tokens{3, 6, 9};
  auto seg = segment_even(3, 1);
  auto out = encode(tokens, seg, params, cfg);

  auto e = embed_tokens(tokens, params, cfg);
  const auto& lp = params.layers[0];
  auto want = layer_norm(layer_norm(e, lp.ln1_gain, lp.ln1_bias), lp.ln2_gain,
                         lp.ln2_bias);
  for (int64_t i = 0; i < out.size(); ++i) CHECK(rel(out[i], want[i]) < 1e-12);
}

TEST_CASE("layer norm handles zero variance rows") {
  Tensor<double> constant_rows({2, 4});
  constant_rows.fill(3.5);
  Tensor<double> gain({4}), bias({4});
  gain.fill(2.0);
  for (int64_t j = 0; j < 4; ++j) bias[j] = double(j);
  auto y = layer_norm(constant_rows, gain, bias);
  for (int64_t i = 0; i < 2; ++i)
    for (int64_t j = 0; j < 4; ++j) CHECK(y.at(i, j) == bias[j]);
}

TEST_CASE("classify heads") {
  auto cfg = toy_cfg();
  cfg.d = 3;
  cfg.num_classes = 3;
  cfg.mixer.heads = 1;
  Rng rng(46);
  auto params = EncoderParams<double>::random(cfg, rng);
  // identity head: logits mirror the pooled vector
  params.head_w.fill(0.0);
  for (int64_t i = 0; i < 3; ++i) params.head_w.at(i, i) = 1.0;
  params.head_b.fill(0.0);

  auto encoded = Tensor<double>::from({2, 3}, {1, 2, 3, 4, 0, 6});

  cfg.head = HeadKind::cls_token;
  auto cls_logits = classify(encoded, params, cfg);
  CHECK(cls_logits[0] == 1.0);
  CHECK(cls_logits[1] == 2.0);
  CHECK(cls_logits[2] == 3.0);

  cfg.head = HeadKind::max_pool;
  auto max_logits = classify(encoded, params, cfg);
  CHECK(max_logits[0] == 4.0);
  CHECK(max_logits[1] == 2.0);
  CHECK(max_logits[2] == 6.0);

  // constant rows: both heads agree
  auto flat = Tensor<double>::from({3, 3}, {5, 1, 2, 5, 1, 2, 5, 1, 2});
  cfg.head = HeadKind::cls_token;
  auto a = classify(flat, params, cfg);
  cfg.head = HeadKind::max_pool;
  auto b = classify(flat, params, cfg);
  for (int64_t i = 0; i < 3; ++i) CHECK(a[i] == b[i]);

  // random instance against reduce_max + affine oracle
  Rng r2(47);
  auto p2 = EncoderParams<double>::random(cfg, r2);
  auto enc = r2.normal_tensor<double>({5, 3}, 1.0);
  auto logits = classify(enc, p2, cfg);
  auto mx = reduce_max_argmax_rows(enc);
  for (int64_t c = 0; c < 3; ++c) {
    double want = p2.head_b[c];
    for (int64_t j = 0; j < 3; ++j) want += mx.values[j] * p2.head_w.at(j, c);
    CHECK(rel(logits[c], want) < 1e-12);
  }
}

TEST_CASE("pooling norms match the two-step formula oracle") {
  auto cfg = toy_cfg();
  Rng rng(48);
  auto params = EncoderParams<double>::random(cfg, rng, 0.4);
  std::vector<int64_t> tokens{1, 2, 3, 4, 5, 6, 7};
  auto seg = segment_even(7, 3);
  std::vector<MixerDiagnostics<double>> diags;
  encode(tokens, seg, params, cfg, &diags);
  REQUIRE(diags.size() == 2);
  auto rows = pooling_norms(diags, cfg.mixer.heads);
  REQUIRE(rows.size() == 2);

  // independent oracle: mean over (token, head) of sqrt(mean_j x^2)
  auto oracle = [&](const Tensor<double>& branch) {
    const int64_t n = branch.rows(), d = branch.cols();
    const int64_t heads = cfg.mixer.heads, dh = d / heads;
    double acc = 0;
    for (int64_t i = 0; i < n; ++i)
      for (int64_t h = 0; h < heads; ++h) {
        double ss = 0;
        for (int64_t j = 0; j < dh; ++j)
          ss += branch.at(i, h * dh + j) * branch.at(i, h * dh + j);
        acc += std::sqrt(ss / double(dh));
      }
    return acc / double(n * heads);
  };
  for (size_t l = 0; l < 2; ++l) {
    const auto& diag = diags[l];
    Tensor<double> ga_rows({7, cfg.d});
    for (int64_t i = 0; i < 7; ++i)
      for (int64_t j = 0; j < cfg.d; ++j)
        ga_rows.at(i, j) = diag.g_prime[j];
    CHECK(rel(rows[l].ga, oracle(ga_rows)) < 1e-12);
    CHECK(rel(rows[l].smp, oracle(diag.seg_gathered)) < 1e-12);
    CHECK(rel(rows[l].lmp, oracle(diag.local)) < 1e-12);
    CHECK(rel(rows[l].mean, (rows[l].ga + rows[l].smp + rows[l].lmp) / 3) <
          1e-12);
  }
}

TEST_CASE("pooling norm branch edge values") {
  // all-zero branch -> 0; all-one branch -> 1
  Tensor<double> zeros({4, 8});
  CHECK(branch_l2_norm(zeros, 2) == 0.0);
  Tensor<double> ones({4, 8});
  ones.fill(1.0);
  CHECK(rel(branch_l2_norm(ones, 2), 1.0) < 1e-12);
  CHECK(rel(branch_l2_norm(ones, 1), 1.0) < 1e-12);
}

TEST_CASE("pooling_norms requires diagnostics") {
  std::vector<MixerDiagnostics<double>> none;
  CHECK_THROWS_AS(pooling_norms(none, 2), StateError);
}

TEST_CASE("checkpoint round-trips bitwise") {
  auto cfg = toy_cfg();
  Rng rng(49);
  auto params = EncoderParams<double>::random(cfg, rng);
  auto j = checkpoint_to_json(cfg, params);
  auto [cfg2, params2] = checkpoint_from_json(j);
  CHECK(cfg2.d == cfg.d);
  CHECK(cfg2.layers == cfg.layers);
  CHECK(cfg2.mixer.heads == cfg.mixer.heads);

  std::vector<int64_t> tokens{1, 5, 9, 3};
  auto seg = segment_even(4, 2);
  auto a = encode(tokens, seg, params, cfg);
  auto b = encode(tokens, seg, params2, cfg2);
  for (int64_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
}

TEST_CASE("checkpoint file save/load and validation") {
  auto cfg = toy_cfg();
  Rng rng(50);
  auto params = EncoderParams<double>::random(cfg, rng);
  const std::string path = "/tmp/ponet_test_ckpt.json";
  save_checkpoint(path, cfg, params);
  auto [cfg2, params2] = load_checkpoint(path);
  auto a = encode({1, 2, 3}, segment_even(3, 1), params, cfg);
  auto b = encode({1, 2, 3}, segment_even(3, 1), params2, cfg2);
  for (int64_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
  std::remove(path.c_str());

  auto bad = checkpoint_to_json(cfg, params);
  bad["format"] = "other";
  CHECK_THROWS_AS(checkpoint_from_json(bad), InputError);
  auto missing = checkpoint_to_json(cfg, params);
  missing["tensors"].erase("head_w");
  CHECK_THROWS_AS(checkpoint_from_json(missing), InputError);
}
