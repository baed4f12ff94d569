#pragma once

// Hand-written backward pass for the pooling block. Verification and training
// run at 64-bit, so the gradient machinery is double-only.

#include "ponet/mixer.hpp"

namespace ponet {

struct ProjectionGrads {
  Tensor<double> w_qg, b_qg;
  Tensor<double> w_kg, b_kg;
  Tensor<double> w_vg, b_vg;  // unused under share_kv
  Tensor<double> w_s, b_s;
  Tensor<double> w_l, b_l;
  Tensor<double> w_o, b_o;
  bool share_kv = true;

  static ProjectionGrads zeros(const MixerConfig& cfg) {
    const int64_t d = cfg.d;
    ProjectionGrads z;
    z.share_kv = cfg.share_kv;
    auto w = [&] { return Tensor<double>({d, d}); };
    auto b = [&] { return Tensor<double>({d}); };
    z.w_qg = w(); z.b_qg = b();
    z.w_kg = w(); z.b_kg = b();
    if (!cfg.share_kv) { z.w_vg = w(); z.b_vg = b(); }
    z.w_s = w(); z.b_s = b();
    z.w_l = w(); z.b_l = b();
    z.w_o = w(); z.b_o = b();
    return z;
  }

  template <class Fn>
  void for_each_param(const std::string& prefix, Fn&& fn) {
    fn(prefix + "w_qg", w_qg); fn(prefix + "b_qg", b_qg);
    fn(prefix + "w_kg", w_kg); fn(prefix + "b_kg", b_kg);
    if (!share_kv) { fn(prefix + "w_vg", w_vg); fn(prefix + "b_vg", b_vg); }
    fn(prefix + "w_s", w_s); fn(prefix + "b_s", b_s);
    fn(prefix + "w_l", w_l); fn(prefix + "b_l", b_l);
    fn(prefix + "w_o", w_o); fn(prefix + "b_o", b_o);
  }
};

struct MixerGrads {
  Tensor<double> dh;
  ProjectionGrads params;
};

// Routes max-pool output gradients to the recorded winners; each output
// element sends its whole gradient to exactly one input element, so gradient
// mass is conserved.
inline Tensor<double> pool_route_backward(const std::vector<int64_t>& argmax,
                                          const Tensor<double>& dout,
                                          int64_t input_rows) {
  const int64_t d = dout.cols();
  if (static_cast<int64_t>(argmax.size()) != dout.size())
    throw ShapeError("pool_route_backward argmax/dout mismatch");
  Tensor<double> din({input_rows, d});
  for (int64_t i = 0; i < dout.rows(); ++i)
    for (int64_t j = 0; j < d; ++j)
      din.at(argmax[static_cast<size_t>(i * d + j)], j) += dout.at(i, j);
  return din;
}

namespace detail {

// dW += h^T * dX, db += colsum(dX), dh += dX * w^T for X = h*w + b.
inline void affine_backward(const Tensor<double>& h, const Tensor<double>& w,
                            const Tensor<double>& dx, Tensor<double>& dw,
                            Tensor<double>& db, Tensor<double>& dh) {
  Tensor<double> dw_add = matmul_tn(h, dx);
  for (int64_t i = 0; i < dw.size(); ++i) dw[i] += dw_add[i];
  Tensor<double> db_add = column_sum(dx);
  for (int64_t i = 0; i < db.size(); ++i) db[i] += db_add[i];
  Tensor<double> dh_add = matmul_nt(dx, w);
  for (int64_t i = 0; i < dh.size(); ++i) dh[i] += dh_add[i];
}

}  // namespace detail

// Chain-rule differentiation of the block w.r.t. its input and parameters.
// Max-pool gradients route solely to the recorded winners; the mean routes
// 1/N to each row; attention uses the softmax Jacobian.
inline MixerGrads mix_backward(const BlockTape<double>& tape,
                               const ProjectionSet<double>& params,
                               const Tensor<double>& dp) {
  const MixerConfig& cfg = tape.cfg;
  const int64_t n = tape.h.rows(), d = cfg.d;
  if (!dp.same_shape(tape.p)) throw ShapeError("mix_backward dp shape");

  const MixerVariant v = cfg.variant;
  const bool use_ga = ga_active(v), use_ss = ss_ga_active(v);
  const bool use_smp = smp_active(v), use_lmp = lmp_active(v);

  MixerGrads out;
  out.dh = Tensor<double>({n, d});
  out.params = ProjectionGrads::zeros(cfg);

  // Fusion backward. Both paths compute
  //   P_n = (g_eff + S_{k(n)}) o H_o_n + L_n (+ T_n),
  // so the local derivatives coincide.
  Tensor<double> dg_eff({d});
  Tensor<double> dseg({tape.seg_pool.values.rows(), d});
  Tensor<double> dh_o({n, d});
  for (int64_t i = 0; i < n; ++i) {
    const int64_t k = tape.seg.segment_of(i);
    for (int64_t j = 0; j < d; ++j) {
      const double dpij = dp.at(i, j);
      const double ho = tape.h_o.at(i, j);
      dg_eff[j] += dpij * ho;
      dseg.at(k, j) += dpij * ho;
      dh_o.at(i, j) =
          dpij * (tape.g_eff[j] + tape.seg_pool.values.at(k, j));
    }
  }

  // Local and tree pooling share the same projected input; dL and dT both
  // equal dp and route to their recorded winners.
  if (use_lmp || cfg.tmp_enabled) {
    Tensor<double> dh_l({n, d});
    if (use_lmp) {
      Tensor<double> routed = pool_route_backward(tape.local.argmax, dp, n);
      for (int64_t i = 0; i < dh_l.size(); ++i) dh_l[i] += routed[i];
    }
    if (cfg.tmp_enabled) {
      Tensor<double> routed = pool_route_backward(tape.tree.argmax, dp, n);
      for (int64_t i = 0; i < dh_l.size(); ++i) dh_l[i] += routed[i];
    }
    detail::affine_backward(tape.h, params.w_l, dh_l, out.params.w_l,
                            out.params.b_l, out.dh);
  }

  // Segment max-pooling.
  if (use_smp) {
    Tensor<double> dh_s = pool_route_backward(tape.seg_pool.argmax, dseg, n);
    detail::affine_backward(tape.h, params.w_s, dh_s, out.params.w_s,
                            out.params.b_s, out.dh);
  }

  // Fusion projection.
  detail::affine_backward(tape.h, params.w_o, dh_o, out.params.w_o,
                          out.params.b_o, out.dh);

  // Global aggregation.
  if (use_ga) {
    Tensor<double> dg({d});
    if (use_ss) {
      const int64_t heads = cfg.heads, dh_head = d / heads;
      const double scale = cfg.attention_scale();
      const Tensor<double>& h_vg = params.share_kv ? tape.h_kg : tape.h_vg;
      Tensor<double> dh_kg({n, d});
      Tensor<double> dh_vg({n, d});
      for (int64_t head = 0; head < heads; ++head) {
        const int64_t off = head * dh_head;
        // dw_i = dg'_h . v_i ; dv_i = w_i * dg'_h
        std::vector<double> dw(static_cast<size_t>(n), 0.0);
        for (int64_t i = 0; i < n; ++i) {
          const double wi = tape.attn.at(head, i);
          double acc = 0;
          for (int64_t j = 0; j < dh_head; ++j) {
            const double dgj = dg_eff[off + j];
            acc += dgj * h_vg.at(i, off + j);
            dh_vg.at(i, off + j) += wi * dgj;
          }
          dw[size_t(i)] = acc;
        }
        // softmax Jacobian: ds_i = w_i (dw_i - sum_m w_m dw_m)
        double dot = 0;
        for (int64_t i = 0; i < n; ++i)
          dot += tape.attn.at(head, i) * dw[size_t(i)];
        for (int64_t i = 0; i < n; ++i) {
          const double ds = tape.attn.at(head, i) * (dw[size_t(i)] - dot);
          for (int64_t j = 0; j < dh_head; ++j) {
            dg[off + j] += scale * ds * tape.h_kg.at(i, off + j);
            dh_kg.at(i, off + j) += scale * ds * tape.g[off + j];
          }
        }
      }
      if (params.share_kv) {
        for (int64_t i = 0; i < dh_kg.size(); ++i) dh_kg[i] += dh_vg[i];
        detail::affine_backward(tape.h, params.w_kg, dh_kg, out.params.w_kg,
                                out.params.b_kg, out.dh);
      } else {
        detail::affine_backward(tape.h, params.w_kg, dh_kg, out.params.w_kg,
                                out.params.b_kg, out.dh);
        detail::affine_backward(tape.h, params.w_vg, dh_vg, out.params.w_vg,
                                out.params.b_vg, out.dh);
      }
    } else {
      dg = dg_eff;
    }

    // Query backward. Mean and affine commute, so both paths share
    //   dW_qg = mean(h) (x) dg, db_qg = dg, dh_i += (dg / N) W_qg^T.
    for (int64_t a = 0; a < d; ++a)
      for (int64_t b = 0; b < d; ++b)
        out.params.w_qg.at(a, b) += tape.mean_h[a] * dg[b];
    for (int64_t j = 0; j < d; ++j) out.params.b_qg[j] += dg[j];
    Tensor<double> dmean({d});
    for (int64_t a = 0; a < d; ++a) {
      double acc = 0;
      for (int64_t b = 0; b < d; ++b) acc += dg[b] * params.w_qg.at(a, b);
      dmean[a] = acc;
    }
    const double inv_n = 1.0 / static_cast<double>(n);
    for (int64_t i = 0; i < n; ++i)
      for (int64_t a = 0; a < d; ++a) out.dh.at(i, a) += dmean[a] * inv_n;
  }

  return out;
}

}  // namespace ponet
