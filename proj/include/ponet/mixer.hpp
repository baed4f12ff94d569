#pragma once

// Multi-granularity pooling block: six projections feed a two-stage global
// aggregation, segment max-pooling, and local max-pooling; the branches are
// combined by elementwise fusion. Two execution paths compute the same
// function: the naive path follows the defining equations literally
// (6Nd^2 + 4Nd multiplications), the fused path pools before projecting the
// global query and adds before multiplying in the fusion ((5N+1)d^2 + 3Nd).

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "ponet/common.hpp"
#include "ponet/segmentation.hpp"
#include "ponet/tensor.hpp"

namespace ponet {

enum class MixerVariant { full, no_ss_ga, no_ga, no_smp, no_lmp, ga_only };

enum class MixPath { naive, fused };

inline const char* to_string(MixerVariant v) {
  switch (v) {
    case MixerVariant::full: return "full";
    case MixerVariant::no_ss_ga: return "no_ss_ga";
    case MixerVariant::no_ga: return "no_ga";
    case MixerVariant::no_smp: return "no_smp";
    case MixerVariant::no_lmp: return "no_lmp";
    case MixerVariant::ga_only: return "ga_only";
  }
  return "?";
}

inline MixerVariant variant_from_string(const std::string& s) {
  if (s == "full") return MixerVariant::full;
  if (s == "no_ss_ga") return MixerVariant::no_ss_ga;
  if (s == "no_ga") return MixerVariant::no_ga;
  if (s == "no_smp") return MixerVariant::no_smp;
  if (s == "no_lmp") return MixerVariant::no_lmp;
  if (s == "ga_only") return MixerVariant::ga_only;
  throw ConfigError("unknown mixer variant: " + s);
}

inline bool ga_active(MixerVariant v) { return v != MixerVariant::no_ga; }
inline bool ss_ga_active(MixerVariant v) {
  return v != MixerVariant::no_ga && v != MixerVariant::no_ss_ga;
}
inline bool smp_active(MixerVariant v) {
  return v != MixerVariant::no_smp && v != MixerVariant::ga_only;
}
inline bool lmp_active(MixerVariant v) {
  return v != MixerVariant::no_lmp && v != MixerVariant::ga_only;
}

struct MixerConfig {
  int64_t d = 64;
  int64_t heads = 1;
  int64_t lmp_window = 3;
  int64_t lmp_stride = 1;
  bool share_kv = true;
  MixerVariant variant = MixerVariant::full;
  bool tmp_enabled = false;
  int64_t layer_index = 1;  // 1-based, sets the tree-pooling dilation

  double attention_scale() const {
    return 1.0 / std::sqrt(static_cast<double>(d) / static_cast<double>(heads));
  }

  void validate() const {
    if (d < 1) throw ConfigError("mixer d must be >= 1");
    if (heads < 1 || d % heads != 0)
      throw ConfigError("mixer heads must divide d");
    if (lmp_window < 1 || lmp_window % 2 == 0)
      throw ConfigError("lmp window must be odd and >= 1");
    if (lmp_stride != 1) throw ConfigError("lmp stride must be 1");
    if (layer_index < 1) throw ConfigError("layer_index must be >= 1");
  }
};

// The six projections. Under share_kv the value projection aliases the key
// projection: there is a single stored matrix and both accessors return it,
// so updating one updates the other.
template <class T>
struct ProjectionSet {
  Tensor<T> w_qg, b_qg;
  Tensor<T> w_kg, b_kg;
  Tensor<T> w_vg, b_vg;  // unused storage when share_kv
  Tensor<T> w_s, b_s;
  Tensor<T> w_l, b_l;
  Tensor<T> w_o, b_o;
  bool share_kv = true;

  const Tensor<T>& wv() const { return share_kv ? w_kg : w_vg; }
  const Tensor<T>& bv() const { return share_kv ? b_kg : b_vg; }
  Tensor<T>& wv_mut() { return share_kv ? w_kg : w_vg; }
  Tensor<T>& bv_mut() { return share_kv ? b_kg : b_vg; }

  static ProjectionSet random(const MixerConfig& cfg, Rng& rng,
                              double stddev = 0.02) {
    cfg.validate();
    const int64_t d = cfg.d;
    ProjectionSet p;
    p.share_kv = cfg.share_kv;
    auto w = [&] { return rng.normal_tensor<T>({d, d}, stddev); };
    auto b = [&] { return Tensor<T>({d}); };
    p.w_qg = w(); p.b_qg = b();
    p.w_kg = w(); p.b_kg = b();
    if (!cfg.share_kv) { p.w_vg = w(); p.b_vg = b(); }
    p.w_s = w(); p.b_s = b();
    p.w_l = w(); p.b_l = b();
    p.w_o = w(); p.b_o = b();
    return p;
  }

  static ProjectionSet identity(const MixerConfig& cfg) {
    cfg.validate();
    const int64_t d = cfg.d;
    auto eye = [&] {
      Tensor<T> m({d, d});
      for (int64_t i = 0; i < d; ++i) m.at(i, i) = T(1);
      return m;
    };
    ProjectionSet p;
    p.share_kv = cfg.share_kv;
    p.w_qg = eye(); p.b_qg = Tensor<T>({d});
    p.w_kg = eye(); p.b_kg = Tensor<T>({d});
    if (!cfg.share_kv) { p.w_vg = eye(); p.b_vg = Tensor<T>({d}); }
    p.w_s = eye(); p.b_s = Tensor<T>({d});
    p.w_l = eye(); p.b_l = Tensor<T>({d});
    p.w_o = eye(); p.b_o = Tensor<T>({d});
    return p;
  }

  // Visits each stored parameter tensor once (the shared value projection is
  // not visited separately).
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

// Six projected copies of the input, one per pooling consumer. With share_kv
// the value copy equals the key copy bitwise.
template <class T>
struct Projections {
  Tensor<T> h_qg, h_kg, h_vg, h_s, h_l, h_o;
};

template <class T>
Projections<T> project_all(const Tensor<T>& h, const ProjectionSet<T>& params,
                           OpCounter* counter = nullptr) {
  Projections<T> out;
  out.h_qg = affine(h, params.w_qg, params.b_qg, counter);
  out.h_kg = affine(h, params.w_kg, params.b_kg, counter);
  out.h_vg = params.share_kv ? out.h_kg
                             : affine(h, params.w_vg, params.b_vg, counter);
  out.h_s = affine(h, params.w_s, params.b_s, counter);
  out.h_l = affine(h, params.w_l, params.b_l, counter);
  out.h_o = affine(h, params.w_o, params.b_o, counter);
  return out;
}

// First stage of global aggregation: the sequence mean of the projected query.
template <class T>
Tensor<T> ga_first_stage(const Tensor<T>& h_qg) {
  return reduce_mean_rows(h_qg);
}

// Second stage: the mean acts as a single query in scaled dot-product
// cross-attention over the sequence, per head. O(N) because the query has
// length one.
template <class T>
struct GaSecondStage {
  Tensor<T> g_prime;  // [d]
  Tensor<T> weights;  // [heads x N] softmax rows
};

template <class T>
GaSecondStage<T> ga_second_stage(const Tensor<T>& g, const Tensor<T>& h_kg,
                                 const Tensor<T>& h_vg, const MixerConfig& cfg,
                                 OpCounter* counter = nullptr) {
  cfg.validate();
  const int64_t n = h_kg.rows(), d = cfg.d, heads = cfg.heads;
  const int64_t dh = d / heads;
  if (g.size() != d || h_kg.cols() != d || !h_vg.same_shape(h_kg))
    throw ShapeError("ga_second_stage shape mismatch");
  const T scale = static_cast<T>(cfg.attention_scale());

  Tensor<T> scores({heads, n});
  for (int64_t h = 0; h < heads; ++h) {
    const T* gh = g.data() + h * dh;
    for (int64_t i = 0; i < n; ++i) {
      const T* ki = h_kg.data() + i * d + h * dh;
      T acc = 0;
      for (int64_t j = 0; j < dh; ++j) acc += gh[j] * ki[j];
      scores.at(h, i) = acc * scale;
    }
  }
  if (counter) counter->add(static_cast<unsigned long long>(n * d));
  check_finite(scores, "attention scores");

  GaSecondStage<T> out;
  out.weights = softmax_last(scores);
  out.g_prime = Tensor<T>({d});
  for (int64_t h = 0; h < heads; ++h) {
    T* gp = out.g_prime.data() + h * dh;
    for (int64_t i = 0; i < n; ++i) {
      const T w = out.weights.at(h, i);
      const T* vi = h_vg.data() + i * d + h * dh;
      for (int64_t j = 0; j < dh; ++j) gp[j] += w * vi[j];
    }
  }
  if (counter) counter->add(static_cast<unsigned long long>(n * d));
  return out;
}

// Segment max-pooling: per-segment, per-dimension maximum with the winning
// row recorded (lowest index on ties).
template <class T>
struct SmpResult {
  Tensor<T> values;             // [K x d]
  std::vector<int64_t> argmax;  // [K x d] absolute row index of each winner
};

template <class T>
SmpResult<T> smp(const Tensor<T>& h_s, const SegmentMap& seg) {
  if (seg.tokens() != h_s.rows())
    throw ShapeError("segment map does not cover the sequence");
  const int64_t d = h_s.cols(), k = seg.k;
  SmpResult<T> r;
  r.values = Tensor<T>({k, d});
  r.argmax.assign(static_cast<size_t>(k * d), 0);
  for (int64_t s = 0; s < k; ++s) {
    const int64_t lo = seg.segment_begin(s), hi = seg.segment_end(s);
    for (int64_t j = 0; j < d; ++j) {
      T best = h_s.at(lo, j);
      int64_t best_i = lo;
      for (int64_t i = lo + 1; i < hi; ++i)
        if (h_s.at(i, j) > best) { best = h_s.at(i, j); best_i = i; }
      r.values.at(s, j) = best;
      r.argmax[static_cast<size_t>(s * d + j)] = best_i;
    }
  }
  return r;
}

// Local max-pooling over a centered sliding window; boundary windows are
// truncated so no padding value can win.
template <class T>
struct LmpResult {
  Tensor<T> values;             // [N x d]
  std::vector<int64_t> argmax;  // [N x d] winning row per output element
};

template <class T>
LmpResult<T> lmp(const Tensor<T>& h_l, int64_t window, int64_t stride = 1) {
  if (window < 1 || window % 2 == 0)
    throw ConfigError("lmp window must be odd and >= 1");
  if (stride != 1) throw ConfigError("lmp stride must be 1");
  const int64_t n = h_l.rows(), d = h_l.cols(), half = window / 2;
  LmpResult<T> r;
  r.values = Tensor<T>({n, d});
  r.argmax.assign(static_cast<size_t>(n * d), 0);
  for (int64_t i = 0; i < n; ++i) {
    const int64_t lo = std::max<int64_t>(0, i - half);
    const int64_t hi = std::min<int64_t>(n - 1, i + half);
    for (int64_t j = 0; j < d; ++j) {
      T best = h_l.at(lo, j);
      int64_t best_m = lo;
      for (int64_t m = lo + 1; m <= hi; ++m)
        if (h_l.at(m, j) > best) { best = h_l.at(m, j); best_m = m; }
      r.values.at(i, j) = best;
      r.argmax[static_cast<size_t>(i * d + j)] = best_m;
    }
  }
  return r;
}

// Tree max-pooling: dilated three-point window max, dilation 2^(layer-1).
template <class T>
LmpResult<T> tmp(const Tensor<T>& h, int64_t layer_index) {
  if (layer_index < 1) throw ConfigError("tmp layer_index must be >= 1");
  const int64_t n = h.rows(), d = h.cols();
  const int64_t delta = int64_t(1) << (layer_index - 1);
  LmpResult<T> r;
  r.values = Tensor<T>({n, d});
  r.argmax.assign(static_cast<size_t>(n * d), 0);
  for (int64_t i = 0; i < n; ++i) {
    const int64_t cand[3] = {i - delta, i, i + delta};
    for (int64_t j = 0; j < d; ++j) {
      T best = 0;
      int64_t best_m = -1;
      for (int64_t m : cand) {
        if (m < 0 || m >= n) continue;
        if (best_m < 0 || h.at(m, j) > best) { best = h.at(m, j); best_m = m; }
      }
      r.values.at(i, j) = best;
      r.argmax[static_cast<size_t>(i * d + j)] = best_m;
    }
  }
  return r;
}

// Literal fusion: P_n = g' o H_o_n + S_{k(n)} o H_o_n + L_n (two products).
template <class T>
Tensor<T> fuse_naive(const Tensor<T>& g_prime, const Tensor<T>& seg_values,
                     const Tensor<T>& local, const Tensor<T>& h_o,
                     const SegmentMap& seg, OpCounter* counter = nullptr) {
  const int64_t n = h_o.rows(), d = h_o.cols();
  if (g_prime.size() != d || seg_values.cols() != d || !local.same_shape(h_o) ||
      seg.tokens() != n)
    throw ShapeError("fuse_naive shape mismatch");
  Tensor<T> p({n, d});
  for (int64_t i = 0; i < n; ++i) {
    const T* sk = seg_values.data() + seg.segment_of(i) * d;
    const T* ho = h_o.data() + i * d;
    const T* li = local.data() + i * d;
    T* pi = p.data() + i * d;
    for (int64_t j = 0; j < d; ++j)
      pi[j] = g_prime[j] * ho[j] + sk[j] * ho[j] + li[j];
  }
  if (counter) counter->add(static_cast<unsigned long long>(2 * n * d));
  check_finite(p, "fusion output");
  return p;
}

template <class T>
struct MixerDiagnostics {
  Tensor<T> g;             // [d] first-stage value
  Tensor<T> g_prime;       // [d] value entering fusion for the GA branch
  Tensor<T> seg_values;    // [K x d]
  Tensor<T> seg_gathered;  // [N x d] S_{k(n)} per token
  Tensor<T> local;         // [N x d]
  Tensor<T> ga_term;       // [N x d] G
  Tensor<T> smp_term;      // [N x d] S'
};

template <class T>
struct MixerOutput {
  Tensor<T> p;  // [N x d]
  std::optional<MixerDiagnostics<T>> diagnostics;
  // Hash of every pooling winner index; two evaluations with different
  // signatures crossed a max-switch (non-differentiable point).
  unsigned long long pool_signature = 0;
};

inline void hash_index(unsigned long long& h, int64_t v) {
  h ^= static_cast<unsigned long long>(v) + 0x9e3779b97f4a7c15ull + (h << 6) +
       (h >> 2);
}

inline unsigned long long hash_indices(unsigned long long h,
                                       const std::vector<int64_t>& v) {
  for (int64_t x : v) hash_index(h, x);
  return h;
}

// Everything the analytic backward pass needs from a forward run. Replaying
// the forward from the stored inputs reproduces the stored output bitwise.
template <class T>
struct BlockTape {
  Tensor<T> h;
  SegmentMap seg;
  MixerConfig cfg;
  MixPath path = MixPath::fused;
  Tensor<T> mean_h;      // [d] mean of the raw input (when GA active)
  Tensor<T> g;           // [d] projected first-stage value
  Tensor<T> g_eff;       // [d] value entering fusion
  Tensor<T> attn;        // [heads x N] softmax weights (when SS-GA active)
  Tensor<T> h_kg;        // [N x d] (when SS-GA active)
  Tensor<T> h_vg;        // empty under share_kv (h_kg doubles as values)
  SmpResult<T> seg_pool;
  LmpResult<T> local;
  LmpResult<T> tree;
  Tensor<T> h_o;
  Tensor<T> p;
  unsigned long long pool_signature = 0;
};

// Closed-form multiplication counts for the two paths (unshared key/value
// projections, full variant).
inline unsigned long long count_mults(int64_t n, int64_t d, MixPath path) {
  if (n < 1 || d < 1) throw ConfigError("count_mults requires n, d >= 1");
  const unsigned long long un = static_cast<unsigned long long>(n);
  const unsigned long long ud = static_cast<unsigned long long>(d);
  if (path == MixPath::naive) return 6 * un * ud * ud + 4 * un * ud;
  return (5 * un + 1) * ud * ud + 3 * un * ud;
}

template <class T>
MixerOutput<T> mix_forward(const Tensor<T>& h, const ProjectionSet<T>& params,
                           const SegmentMap& seg, const MixerConfig& cfg,
                           MixPath path = MixPath::fused,
                           bool want_diagnostics = false,
                           OpCounter* counter = nullptr,
                           BlockTape<T>* tape = nullptr) {
  cfg.validate();
  if (h.rank() != 2 || h.cols() != cfg.d)
    throw ShapeError("mixer input must be N x d");
  if (h.rows() < 1) throw ShapeError("mixer input must be non-empty");
  if (seg.tokens() != h.rows())
    throw ShapeError("segment map does not cover the sequence");
  check_finite(h, "mixer input");

  const int64_t n = h.rows(), d = cfg.d;
  const MixerVariant v = cfg.variant;
  const bool use_ga = ga_active(v), use_ss = ss_ga_active(v);
  const bool use_smp = smp_active(v), use_lmp = lmp_active(v);

  // Global branch value entering fusion (zero when the branch is off).
  Tensor<T> g({d}), g_eff({d});
  Tensor<T> mean_h, h_kg, h_vg, attn;
  if (use_ga) {
    if (path == MixPath::naive) {
      g = ga_first_stage(affine(h, params.w_qg, params.b_qg, counter));
      if (tape) mean_h = reduce_mean_rows(h);
    } else {
      // Pool first, then project: one d x d product instead of N of them.
      mean_h = reduce_mean_rows(h);
      Tensor<T> mean2d = Tensor<T>::from(
          {1, d}, std::vector<T>(mean_h.data(), mean_h.data() + d));
      Tensor<T> g2d = affine(mean2d, params.w_qg, params.b_qg, counter);
      for (int64_t j = 0; j < d; ++j) g[j] = g2d[j];
    }
    if (use_ss) {
      h_kg = affine(h, params.w_kg, params.b_kg, counter);
      if (!params.share_kv)
        h_vg = affine(h, params.wv(), params.bv(), counter);
      auto stage2 =
          ga_second_stage(g, h_kg, params.share_kv ? h_kg : h_vg, cfg, counter);
      g_eff = std::move(stage2.g_prime);
      attn = std::move(stage2.weights);
    } else {
      g_eff = g;
    }
  }

  SmpResult<T> seg_pool;
  if (use_smp) {
    seg_pool = smp(affine(h, params.w_s, params.b_s, counter), seg);
  } else {
    seg_pool.values = Tensor<T>({seg.k, d});
  }

  Tensor<T> h_l;
  if (use_lmp || cfg.tmp_enabled)
    h_l = affine(h, params.w_l, params.b_l, counter);

  LmpResult<T> local;
  if (use_lmp) {
    local = lmp(h_l, cfg.lmp_window, cfg.lmp_stride);
  } else {
    local.values = Tensor<T>({n, d});
  }

  LmpResult<T> tree;
  if (cfg.tmp_enabled) tree = tmp(h_l, cfg.layer_index);

  Tensor<T> h_o = affine(h, params.w_o, params.b_o, counter);

  MixerOutput<T> out;
  if (path == MixPath::naive) {
    out.p = fuse_naive(g_eff, seg_pool.values, local.values, h_o, seg, counter);
  } else {
    // Add the global and segment values first, then a single product.
    out.p = Tensor<T>({n, d});
    for (int64_t i = 0; i < n; ++i) {
      const T* sk = seg_pool.values.data() + seg.segment_of(i) * d;
      const T* ho = h_o.data() + i * d;
      const T* li = local.values.data() + i * d;
      T* pi = out.p.data() + i * d;
      for (int64_t j = 0; j < d; ++j)
        pi[j] = (g_eff[j] + sk[j]) * ho[j] + li[j];
    }
    if (counter) counter->add(static_cast<unsigned long long>(n * d));
    check_finite(out.p, "fusion output");
  }
  if (cfg.tmp_enabled)
    for (int64_t i = 0; i < out.p.size(); ++i) out.p[i] += tree.values[i];

  unsigned long long sig = 1469598103934665603ull;
  if (use_smp) sig = hash_indices(sig, seg_pool.argmax);
  if (use_lmp) sig = hash_indices(sig, local.argmax);
  if (cfg.tmp_enabled) sig = hash_indices(sig, tree.argmax);
  out.pool_signature = sig;

  if (want_diagnostics) {
    MixerDiagnostics<T> diag;
    diag.g = g;
    diag.g_prime = g_eff;
    diag.seg_values = seg_pool.values;
    diag.seg_gathered = Tensor<T>({n, d});
    for (int64_t i = 0; i < n; ++i) {
      const T* sk = seg_pool.values.data() + seg.segment_of(i) * d;
      T* gi = diag.seg_gathered.data() + i * d;
      for (int64_t j = 0; j < d; ++j) gi[j] = sk[j];
    }
    diag.local = local.values;
    diag.ga_term = Tensor<T>({n, d});
    diag.smp_term = Tensor<T>({n, d});
    for (int64_t i = 0; i < n; ++i)
      for (int64_t j = 0; j < d; ++j) {
        diag.ga_term.at(i, j) = g_eff[j] * h_o.at(i, j);
        diag.smp_term.at(i, j) = diag.seg_gathered.at(i, j) * h_o.at(i, j);
      }
    out.diagnostics = std::move(diag);
  }

  if (tape) {
    tape->h = h;
    tape->seg = seg;
    tape->cfg = cfg;
    tape->path = path;
    tape->mean_h = std::move(mean_h);
    tape->g = std::move(g);
    tape->g_eff = g_eff;
    tape->attn = std::move(attn);
    tape->h_kg = std::move(h_kg);
    tape->h_vg = std::move(h_vg);
    tape->seg_pool = std::move(seg_pool);
    tape->local = std::move(local);
    tape->tree = std::move(tree);
    tape->h_o = std::move(h_o);
    tape->p = out.p;
    tape->pool_signature = sig;
  }
  return out;
}

}  // namespace ponet
