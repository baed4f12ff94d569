#pragma once

// Token + position embeddings feeding L stacked sublayers; each sublayer is
// the pooling block with residual + layer norm, then a GELU feed-forward with
// residual + layer norm (post-norm ordering). Two classification heads: the
// first-token affine and the sequence max-pool affine.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "ponet/mixer.hpp"
#include "ponet/segmentation.hpp"
#include "ponet/tensor.hpp"

namespace ponet {

enum class HeadKind { cls_token, max_pool };

inline const char* to_string(HeadKind h) {
  return h == HeadKind::cls_token ? "cls_token" : "max_pool";
}

inline HeadKind head_from_string(const std::string& s) {
  if (s == "cls_token") return HeadKind::cls_token;
  if (s == "max_pool") return HeadKind::max_pool;
  throw ConfigError("unknown head kind: " + s);
}

constexpr double kLayerNormEpsilon = 1e-12;

struct EncoderConfig {
  int64_t vocab_size = 64;
  int64_t max_len = 128;
  int64_t d = 32;
  int64_t layers = 2;
  int64_t ffn_hidden = 0;  // 0 selects the 4*d convention
  double dropout_rate = 0.1;
  MixerConfig mixer;  // d is taken from this struct's d; layer_index per layer
  HeadKind head = HeadKind::max_pool;
  int64_t num_classes = 2;
  MixPath mix_path = MixPath::fused;

  int64_t ffn() const { return ffn_hidden > 0 ? ffn_hidden : 4 * d; }

  MixerConfig mixer_at(int64_t layer) const {
    MixerConfig m = mixer;
    m.d = d;
    m.layer_index = layer + 1;
    return m;
  }

  void validate() const {
    if (vocab_size < 1 || max_len < 1 || layers < 1 || num_classes < 1)
      throw ConfigError("encoder config out of range");
    if (dropout_rate < 0.0 || dropout_rate >= 1.0)
      throw ConfigError("dropout_rate must be in [0, 1)");
    mixer_at(0).validate();
  }
};

template <class T>
struct LayerParams {
  ProjectionSet<T> mix;
  Tensor<T> ln1_gain, ln1_bias, ln2_gain, ln2_bias;
  Tensor<T> ffn_w1, ffn_b1, ffn_w2, ffn_b2;

  template <class Fn>
  void for_each_param(const std::string& prefix, Fn&& fn) {
    mix.for_each_param(prefix + "mix.", fn);
    fn(prefix + "ln1_gain", ln1_gain); fn(prefix + "ln1_bias", ln1_bias);
    fn(prefix + "ln2_gain", ln2_gain); fn(prefix + "ln2_bias", ln2_bias);
    fn(prefix + "ffn_w1", ffn_w1); fn(prefix + "ffn_b1", ffn_b1);
    fn(prefix + "ffn_w2", ffn_w2); fn(prefix + "ffn_b2", ffn_b2);
  }
};

template <class T>
struct EncoderParams {
  Tensor<T> tok_embed;  // [vocab x d]
  Tensor<T> pos_embed;  // [max_len x d]
  std::vector<LayerParams<T>> layers;
  Tensor<T> head_w;  // [d x classes]
  Tensor<T> head_b;  // [classes]

  static EncoderParams random(const EncoderConfig& cfg, Rng& rng,
                              double stddev = 0.02) {
    cfg.validate();
    const int64_t d = cfg.d, f = cfg.ffn();
    EncoderParams p;
    p.tok_embed = rng.normal_tensor<T>({cfg.vocab_size, d}, stddev);
    p.pos_embed = rng.normal_tensor<T>({cfg.max_len, d}, stddev);
    p.layers.resize(static_cast<size_t>(cfg.layers));
    for (int64_t l = 0; l < cfg.layers; ++l) {
      LayerParams<T>& lp = p.layers[static_cast<size_t>(l)];
      lp.mix = ProjectionSet<T>::random(cfg.mixer_at(l), rng, stddev);
      lp.ln1_gain = Tensor<T>({d}); lp.ln1_gain.fill(T(1));
      lp.ln1_bias = Tensor<T>({d});
      lp.ln2_gain = Tensor<T>({d}); lp.ln2_gain.fill(T(1));
      lp.ln2_bias = Tensor<T>({d});
      lp.ffn_w1 = rng.normal_tensor<T>({d, f}, stddev);
      lp.ffn_b1 = Tensor<T>({f});
      lp.ffn_w2 = rng.normal_tensor<T>({f, d}, stddev);
      lp.ffn_b2 = Tensor<T>({d});
    }
    p.head_w = rng.normal_tensor<T>({d, cfg.num_classes}, stddev);
    p.head_b = Tensor<T>({cfg.num_classes});
    return p;
  }

  // All-zero tensors of the right shapes (gradient/optimizer accumulators).
  static EncoderParams zeros(const EncoderConfig& cfg) {
    Rng rng(0);
    EncoderParams p = random(cfg, rng, 0.0);
    for (auto& l : p.layers) {
      l.ln1_gain.fill(T(0));
      l.ln2_gain.fill(T(0));
    }
    return p;
  }

  template <class Fn>
  void for_each_param(Fn&& fn) {
    fn("tok_embed", tok_embed);
    fn("pos_embed", pos_embed);
    for (size_t l = 0; l < layers.size(); ++l)
      layers[l].for_each_param("layers." + std::to_string(l) + ".", fn);
    fn("head_w", head_w);
    fn("head_b", head_b);
  }
};

// Per-row layer norm; zero-variance rows yield the bias vector.
template <class T>
struct LayerNormCache {
  Tensor<T> normalized;  // x_hat
  std::vector<T> inv_std;
};

template <class T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain,
                     const Tensor<T>& bias,
                     LayerNormCache<T>* cache = nullptr) {
  const int64_t n = x.rows(), d = x.cols();
  Tensor<T> y({n, d});
  if (cache) {
    cache->normalized = Tensor<T>({n, d});
    cache->inv_std.assign(static_cast<size_t>(n), T(0));
  }
  for (int64_t i = 0; i < n; ++i) {
    T mu = 0;
    for (int64_t j = 0; j < d; ++j) mu += x.at(i, j);
    mu /= static_cast<T>(d);
    T var = 0;
    for (int64_t j = 0; j < d; ++j) {
      const T c = x.at(i, j) - mu;
      var += c * c;
    }
    var /= static_cast<T>(d);
    const T inv = T(1) / std::sqrt(var + static_cast<T>(kLayerNormEpsilon));
    for (int64_t j = 0; j < d; ++j) {
      const T xh = (x.at(i, j) - mu) * inv;
      if (cache) cache->normalized.at(i, j) = xh;
      y.at(i, j) = gain[j] * xh + bias[j];
    }
    if (cache) cache->inv_std[static_cast<size_t>(i)] = inv;
  }
  check_finite(y, "layer_norm output");
  return y;
}

template <class T>
T gelu(T x) {
  return T(0.5) * x * (T(1) + std::erf(x * T(0.7071067811865476)));
}

template <class T>
T gelu_derivative(T x) {
  const T cdf = T(0.5) * (T(1) + std::erf(x * T(0.7071067811865476)));
  const T pdf = std::exp(T(-0.5) * x * x) * T(0.3989422804014327);
  return cdf + x * pdf;
}

// Inverted dropout; the mask carries the 1/(1-rate) scale.
template <class T>
Tensor<T> dropout_mask(int64_t n, int64_t d, double rate, Rng& rng) {
  Tensor<T> mask({n, d});
  const T keep = static_cast<T>(1.0 / (1.0 - rate));
  for (int64_t i = 0; i < mask.size(); ++i)
    mask[i] = rng.uniform() >= rate ? keep : T(0);
  return mask;
}

template <class T>
struct EncoderLayerTape {
  BlockTape<T> mix;
  Tensor<T> mix_dropout_mask;  // empty when dropout is off
  Tensor<T> sum1;              // h + drop(mix)
  LayerNormCache<T> ln1;
  Tensor<T> h_mid;             // layer-norm output feeding the FFN
  Tensor<T> ffn_pre;           // h_mid w1 + b1
  Tensor<T> ffn_act;           // gelu(ffn_pre)
  Tensor<T> ffn_dropout_mask;
  Tensor<T> sum2;
  LayerNormCache<T> ln2;
};

template <class T>
struct EncoderTape {
  std::vector<int64_t> tokens;
  SegmentMap seg;
  std::vector<EncoderLayerTape<T>> layers;
  Tensor<T> encoded;                 // [N x d]
  Tensor<T> pooled;                  // [d] head input
  std::vector<int64_t> pool_argmax;  // winners for the max_pool head
  Tensor<T> logits;
  unsigned long long pool_signature = 0;
};

template <class T>
Tensor<T> embed_tokens(const std::vector<int64_t>& tokens,
                       const EncoderParams<T>& params,
                       const EncoderConfig& cfg) {
  const int64_t n = static_cast<int64_t>(tokens.size());
  if (n < 1) throw InputError("empty token sequence");
  if (n > cfg.max_len)
    throw InputError("sequence length " + std::to_string(n) +
                     " exceeds max_len " + std::to_string(cfg.max_len));
  Tensor<T> h({n, cfg.d});
  for (int64_t i = 0; i < n; ++i) {
    const int64_t id = tokens[static_cast<size_t>(i)];
    if (id < 0 || id >= cfg.vocab_size)
      throw InputError("token id out of range: " + std::to_string(id));
    for (int64_t j = 0; j < cfg.d; ++j)
      h.at(i, j) = params.tok_embed.at(id, j) + params.pos_embed.at(i, j);
  }
  return h;
}

// Training-mode forward; pass a null rng (or rate 0) to disable dropout.
// The eval-mode encode below shares this body so the two agree bitwise.
template <class T>
Tensor<T> encode_train(const std::vector<int64_t>& tokens,
                       const SegmentMap& seg, const EncoderParams<T>& params,
                       const EncoderConfig& cfg, Rng* dropout_rng,
                       EncoderTape<T>* tape,
                       std::vector<MixerDiagnostics<T>>* diag_out = nullptr) {
  cfg.validate();
  Tensor<T> h = embed_tokens(tokens, params, cfg);
  const int64_t n = h.rows(), d = cfg.d;
  const bool use_dropout = dropout_rng != nullptr && cfg.dropout_rate > 0.0;
  if (tape) {
    tape->tokens = tokens;
    tape->seg = seg;
    tape->layers.resize(static_cast<size_t>(cfg.layers));
    tape->pool_signature = 1469598103934665603ull;
  }

  for (int64_t l = 0; l < cfg.layers; ++l) {
    EncoderLayerTape<T>* lt =
        tape ? &tape->layers[static_cast<size_t>(l)] : nullptr;
    const LayerParams<T>& lp = params.layers[static_cast<size_t>(l)];
    const MixerConfig mix_cfg = cfg.mixer_at(l);

    MixerOutput<T> mix =
        mix_forward(h, lp.mix, seg, mix_cfg, cfg.mix_path,
                    diag_out != nullptr, nullptr, lt ? &lt->mix : nullptr);
    if (diag_out) diag_out->push_back(std::move(*mix.diagnostics));
    if (tape) hash_index(tape->pool_signature,
                         static_cast<int64_t>(mix.pool_signature));

    Tensor<T> mixed = std::move(mix.p);
    if (use_dropout) {
      Tensor<T> mask = dropout_mask<T>(n, d, cfg.dropout_rate, *dropout_rng);
      for (int64_t i = 0; i < mixed.size(); ++i) mixed[i] *= mask[i];
      if (lt) lt->mix_dropout_mask = std::move(mask);
    }
    Tensor<T> sum1 = add(h, mixed);
    Tensor<T> h_mid =
        layer_norm(sum1, lp.ln1_gain, lp.ln1_bias, lt ? &lt->ln1 : nullptr);
    if (lt) {
      lt->sum1 = std::move(sum1);
      lt->h_mid = h_mid;
    }

    Tensor<T> pre = affine(h_mid, lp.ffn_w1, lp.ffn_b1);
    Tensor<T> act = pre;
    for (int64_t i = 0; i < act.size(); ++i) act[i] = gelu(act[i]);
    Tensor<T> f = affine(act, lp.ffn_w2, lp.ffn_b2);
    if (lt) {
      lt->ffn_pre = std::move(pre);
      lt->ffn_act = std::move(act);
    }
    if (use_dropout) {
      Tensor<T> mask = dropout_mask<T>(n, d, cfg.dropout_rate, *dropout_rng);
      for (int64_t i = 0; i < f.size(); ++i) f[i] *= mask[i];
      if (lt) lt->ffn_dropout_mask = std::move(mask);
    }
    Tensor<T> sum2 = add(h_mid, f);
    h = layer_norm(sum2, lp.ln2_gain, lp.ln2_bias, lt ? &lt->ln2 : nullptr);
    if (lt) lt->sum2 = std::move(sum2);
  }

  if (tape) tape->encoded = h;
  return h;
}

// Eval-mode forward: deterministic, no dropout.
template <class T>
Tensor<T> encode(const std::vector<int64_t>& tokens, const SegmentMap& seg,
                 const EncoderParams<T>& params, const EncoderConfig& cfg,
                 std::vector<MixerDiagnostics<T>>* diag_out = nullptr) {
  return encode_train<T>(tokens, seg, params, cfg, nullptr, nullptr, diag_out);
}

template <class T>
Tensor<T> classify(const Tensor<T>& encoded, const EncoderParams<T>& params,
                   const EncoderConfig& cfg, EncoderTape<T>* tape = nullptr) {
  if (encoded.rows() < 1) throw InputError("classify on empty encoding");
  const int64_t d = encoded.cols();
  Tensor<T> pooled({d});
  std::vector<int64_t> argmax;
  if (cfg.head == HeadKind::cls_token) {
    for (int64_t j = 0; j < d; ++j) pooled[j] = encoded.at(0, j);
  } else {
    auto r = reduce_max_argmax_rows(encoded);
    pooled = std::move(r.values);
    argmax = std::move(r.indices);
  }
  Tensor<T> logits({cfg.num_classes});
  for (int64_t c = 0; c < cfg.num_classes; ++c) {
    T acc = params.head_b[c];
    for (int64_t j = 0; j < d; ++j) acc += pooled[j] * params.head_w.at(j, c);
    logits[c] = acc;
  }
  check_finite(logits, "logits");
  if (tape) {
    tape->pooled = std::move(pooled);
    tape->pool_argmax = argmax;
    tape->logits = logits;
    for (int64_t idx : argmax) hash_index(tape->pool_signature, idx);
  }
  return logits;
}

// Per-branch activation scale: mean over tokens and heads of the root mean
// square over each head's hidden dims. The GA branch contributes its shared
// fusion value at each position.
struct PoolingNormRow {
  double ga = 0, smp = 0, lmp = 0, mean = 0;
};

template <class T>
double branch_l2_norm(const Tensor<T>& rows, int64_t heads) {
  const int64_t n = rows.rows(), d = rows.cols();
  const int64_t dh = d / heads;
  double total = 0;
  for (int64_t i = 0; i < n; ++i)
    for (int64_t h = 0; h < heads; ++h) {
      double sq = 0;
      for (int64_t j = 0; j < dh; ++j) {
        const double v = static_cast<double>(rows.at(i, h * dh + j));
        sq += v * v;
      }
      total += std::sqrt(sq / static_cast<double>(dh));
    }
  return total / static_cast<double>(n * heads);
}

template <class T>
std::vector<PoolingNormRow> pooling_norms(
    const std::vector<MixerDiagnostics<T>>& diagnostics, int64_t heads) {
  if (diagnostics.empty())
    throw StateError("pooling_norms requires diagnostics from a forward run");
  std::vector<PoolingNormRow> rows;
  for (const auto& diag : diagnostics) {
    const int64_t n = diag.local.rows(), d = diag.local.cols();
    Tensor<T> ga_rows({n, d});
    for (int64_t i = 0; i < n; ++i)
      for (int64_t j = 0; j < d; ++j) ga_rows.at(i, j) = diag.g_prime[j];
    PoolingNormRow row;
    row.ga = branch_l2_norm(ga_rows, heads);
    row.smp = branch_l2_norm(diag.seg_gathered, heads);
    row.lmp = branch_l2_norm(diag.local, heads);
    row.mean = (row.ga + row.smp + row.lmp) / 3.0;
    rows.push_back(row);
  }
  return rows;
}

}  // namespace ponet
