#pragma once

// Backward pass through the full encoder plus the cross-entropy losses the
// trainer and the finite-difference verifier share. Double-only.

#include "ponet/encoder.hpp"
#include "ponet/mixer_grad.hpp"

namespace ponet {

struct Example {
  std::vector<int64_t> tokens;
  SegmentMap seg;
  int64_t label = 0;
};

// Stable log-softmax cross-entropy; fills dlogits with probs - onehot.
inline double cross_entropy(const Tensor<double>& logits, int64_t label,
                            Tensor<double>* dlogits = nullptr) {
  const int64_t c = logits.size();
  if (label < 0 || label >= c) throw InputError("label out of range");
  double mx = logits[0];
  for (int64_t i = 1; i < c; ++i) mx = std::max(mx, logits[i]);
  double z = 0;
  for (int64_t i = 0; i < c; ++i) z += std::exp(logits[i] - mx);
  const double log_z = mx + std::log(z);
  if (dlogits) {
    *dlogits = Tensor<double>({c});
    for (int64_t i = 0; i < c; ++i)
      (*dlogits)[i] = std::exp(logits[i] - log_z);
    (*dlogits)[label] -= 1.0;
  }
  return log_z - logits[label];
}

namespace detail {

inline void layer_norm_backward(const Tensor<double>& dy,
                                const LayerNormCache<double>& cache,
                                const Tensor<double>& gain,
                                Tensor<double>& dgain, Tensor<double>& dbias,
                                Tensor<double>& dx) {
  const int64_t n = dy.rows(), d = dy.cols();
  dx = Tensor<double>({n, d});
  for (int64_t i = 0; i < n; ++i) {
    double m1 = 0, m2 = 0;
    for (int64_t j = 0; j < d; ++j) {
      const double dyij = dy.at(i, j);
      const double xh = cache.normalized.at(i, j);
      dgain[j] += dyij * xh;
      dbias[j] += dyij;
      const double dxh = dyij * gain[j];
      m1 += dxh;
      m2 += dxh * xh;
    }
    m1 /= static_cast<double>(d);
    m2 /= static_cast<double>(d);
    const double inv = cache.inv_std[static_cast<size_t>(i)];
    for (int64_t j = 0; j < d; ++j) {
      const double dxh = dy.at(i, j) * gain[j];
      dx.at(i, j) = inv * (dxh - m1 - cache.normalized.at(i, j) * m2);
    }
  }
}

inline void add_projection_grads(ProjectionSet<double>& acc,
                                 const ProjectionGrads& g) {
  auto add_into = [](Tensor<double>& dst, const Tensor<double>& src) {
    for (int64_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
  };
  add_into(acc.w_qg, g.w_qg); add_into(acc.b_qg, g.b_qg);
  add_into(acc.w_kg, g.w_kg); add_into(acc.b_kg, g.b_kg);
  if (!g.share_kv) { add_into(acc.w_vg, g.w_vg); add_into(acc.b_vg, g.b_vg); }
  add_into(acc.w_s, g.w_s); add_into(acc.b_s, g.b_s);
  add_into(acc.w_l, g.w_l); add_into(acc.b_l, g.b_l);
  add_into(acc.w_o, g.w_o); add_into(acc.b_o, g.b_o);
}

}  // namespace detail

// Accumulates gradients of a scalar loss (already differentiated to dlogits)
// into `grads`, which must be EncoderParams::zeros-shaped.
inline void encoder_backward(const EncoderTape<double>& tape,
                             const EncoderParams<double>& params,
                             const EncoderConfig& cfg,
                             const Tensor<double>& dlogits,
                             EncoderParams<double>& grads) {
  const int64_t n = tape.encoded.rows(), d = cfg.d;

  // Head backward.
  Tensor<double> dpooled({d});
  for (int64_t c = 0; c < cfg.num_classes; ++c) {
    const double dl = dlogits[c];
    grads.head_b[c] += dl;
    for (int64_t j = 0; j < d; ++j) {
      grads.head_w.at(j, c) += tape.pooled[j] * dl;
      dpooled[j] += dl * params.head_w.at(j, c);
    }
  }
  Tensor<double> dh({n, d});
  if (cfg.head == HeadKind::cls_token) {
    for (int64_t j = 0; j < d; ++j) dh.at(0, j) += dpooled[j];
  } else {
    for (int64_t j = 0; j < d; ++j)
      dh.at(tape.pool_argmax[static_cast<size_t>(j)], j) += dpooled[j];
  }

  for (int64_t l = cfg.layers - 1; l >= 0; --l) {
    const EncoderLayerTape<double>& lt = tape.layers[static_cast<size_t>(l)];
    const LayerParams<double>& lp = params.layers[static_cast<size_t>(l)];
    LayerParams<double>& lg = grads.layers[static_cast<size_t>(l)];

    // H_out = LN2(h_mid + drop(FFN(h_mid)))
    Tensor<double> dsum2;
    detail::layer_norm_backward(dh, lt.ln2, lp.ln2_gain, lg.ln2_gain,
                                lg.ln2_bias, dsum2);
    Tensor<double> df = dsum2;
    if (!lt.ffn_dropout_mask.empty())
      for (int64_t i = 0; i < df.size(); ++i) df[i] *= lt.ffn_dropout_mask[i];

    Tensor<double> dh_mid = dsum2;  // residual branch
    {
      Tensor<double> dact = matmul_nt(df, lp.ffn_w2);
      Tensor<double> dw2 = matmul_tn(lt.ffn_act, df);
      for (int64_t i = 0; i < dw2.size(); ++i) lg.ffn_w2[i] += dw2[i];
      Tensor<double> db2 = column_sum(df);
      for (int64_t i = 0; i < db2.size(); ++i) lg.ffn_b2[i] += db2[i];
      Tensor<double> dpre = dact;
      for (int64_t i = 0; i < dpre.size(); ++i)
        dpre[i] *= gelu_derivative(lt.ffn_pre[i]);
      Tensor<double> dw1 = matmul_tn(lt.h_mid, dpre);
      for (int64_t i = 0; i < dw1.size(); ++i) lg.ffn_w1[i] += dw1[i];
      Tensor<double> db1 = column_sum(dpre);
      for (int64_t i = 0; i < db1.size(); ++i) lg.ffn_b1[i] += db1[i];
      Tensor<double> dmid = matmul_nt(dpre, lp.ffn_w1);
      for (int64_t i = 0; i < dh_mid.size(); ++i) dh_mid[i] += dmid[i];
    }

    // h_mid = LN1(h_in + drop(Mix(h_in)))
    Tensor<double> dsum1;
    detail::layer_norm_backward(dh_mid, lt.ln1, lp.ln1_gain, lg.ln1_gain,
                                lg.ln1_bias, dsum1);
    Tensor<double> dmix = dsum1;
    if (!lt.mix_dropout_mask.empty())
      for (int64_t i = 0; i < dmix.size(); ++i)
        dmix[i] *= lt.mix_dropout_mask[i];

    MixerGrads mg = mix_backward(lt.mix, lp.mix, dmix);
    detail::add_projection_grads(lg.mix, mg.params);
    dh = dsum1;  // residual branch
    for (int64_t i = 0; i < dh.size(); ++i) dh[i] += mg.dh[i];
  }

  // Embedding backward.
  for (int64_t i = 0; i < n; ++i) {
    const int64_t id = tape.tokens[static_cast<size_t>(i)];
    for (int64_t j = 0; j < d; ++j) {
      grads.tok_embed.at(id, j) += dh.at(i, j);
      grads.pos_embed.at(i, j) += dh.at(i, j);
    }
  }
}

struct EvalOutcome {
  double loss = 0;
  unsigned long long signature = 0;
  Tensor<double> logits;
};

// Deterministic eval-mode loss; the signature tracks every pooling winner so
// finite differences can detect max switches.
inline EvalOutcome model_loss(const Example& ex,
                              const EncoderParams<double>& params,
                              const EncoderConfig& cfg) {
  EncoderTape<double> tape;
  encode_train<double>(ex.tokens, ex.seg, params, cfg, nullptr, &tape);
  Tensor<double> logits = classify(tape.encoded, params, cfg, &tape);
  EvalOutcome out;
  out.loss = cross_entropy(logits, ex.label);
  out.signature = tape.pool_signature;
  out.logits = std::move(logits);
  return out;
}

// Training-mode loss + gradient accumulation. Returns the loss.
inline double model_loss_backward(const Example& ex,
                                  const EncoderParams<double>& params,
                                  const EncoderConfig& cfg, Rng* dropout_rng,
                                  EncoderParams<double>& grads) {
  EncoderTape<double> tape;
  encode_train<double>(ex.tokens, ex.seg, params, cfg, dropout_rng, &tape);
  classify(tape.encoded, params, cfg, &tape);
  Tensor<double> dlogits;
  const double loss = cross_entropy(tape.logits, ex.label, &dlogits);
  encoder_backward(tape, params, cfg, dlogits, grads);
  return loss;
}

}  // namespace ponet
