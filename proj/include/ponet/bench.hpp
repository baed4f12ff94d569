#pragma once

// Desk-scale scaling harness: wall time, analytic peak-memory estimates, and
// multiplication counts for the pooling block (both paths) against a
// reference quadratic self-attention, across sequence lengths.

#include <cstdint>
#include <string>
#include <vector>

#include "ponet/mixer.hpp"

namespace ponet {

enum class BenchMixer { ponet_naive, ponet_fused, self_attention };

inline const char* to_string(BenchMixer m) {
  switch (m) {
    case BenchMixer::ponet_naive: return "ponet_naive";
    case BenchMixer::ponet_fused: return "ponet_fused";
    case BenchMixer::self_attention: return "self_attention";
  }
  return "?";
}

inline BenchMixer bench_mixer_from_string(const std::string& s) {
  if (s == "ponet_naive") return BenchMixer::ponet_naive;
  if (s == "ponet_fused") return BenchMixer::ponet_fused;
  if (s == "self_attention") return BenchMixer::self_attention;
  throw ConfigError("unknown mixer: " + s);
}

unsigned long long default_mem_budget();

struct BenchSpec {
  std::vector<int64_t> lengths{512, 1024, 2048, 4096, 8192, 16384};
  int64_t d = 64;
  int64_t heads = 2;
  int64_t layers = 2;
  int64_t batch = 32;
  int64_t warmup_iters = 1;
  int64_t measured_iters = 3;
  std::vector<BenchMixer> mixers{BenchMixer::ponet_naive,
                                 BenchMixer::ponet_fused,
                                 BenchMixer::self_attention};
  unsigned long long mem_budget_bytes = default_mem_budget();
  uint64_t seed = 12345;

  void validate() const {
    if (lengths.empty()) throw ConfigError("bench needs at least one length");
    for (size_t i = 1; i < lengths.size(); ++i)
      if (lengths[i] <= lengths[i - 1])
        throw ConfigError("bench lengths must be sorted ascending");
    if (measured_iters < 3) throw ConfigError("measured_iters must be >= 3");
    if (warmup_iters < 0 || d < 1 || heads < 1 || layers < 1 || batch < 1)
      throw ConfigError("bench spec out of range");
    if (d % heads != 0) throw ConfigError("heads must divide d");
  }
};

struct BenchRow {
  BenchMixer mixer = BenchMixer::ponet_fused;
  int64_t length = 0;
  int64_t d = 0;
  int64_t heads = 0;
  int64_t batch = 0;
  double median_seconds = 0;
  unsigned long long est_bytes = 0;
  unsigned long long mult_count = 0;

  bool operator==(const BenchRow&) const = default;
};

// Reference quadratic block: standard multi-head self-attention with Q, K,
// V, output projections. Heads are processed one at a time so the score
// matrix peak is a single N x N buffer.
template <class T>
struct AttentionParams {
  Tensor<T> wq, bq, wk, bk, wv, bv, wo, bo;

  static AttentionParams random(int64_t d, Rng& rng, double stddev = 0.02) {
    AttentionParams p;
    p.wq = rng.normal_tensor<T>({d, d}, stddev); p.bq = Tensor<T>({d});
    p.wk = rng.normal_tensor<T>({d, d}, stddev); p.bk = Tensor<T>({d});
    p.wv = rng.normal_tensor<T>({d, d}, stddev); p.bv = Tensor<T>({d});
    p.wo = rng.normal_tensor<T>({d, d}, stddev); p.bo = Tensor<T>({d});
    return p;
  }
};

template <class T>
Tensor<T> self_attention_forward(const Tensor<T>& h,
                                 const AttentionParams<T>& params,
                                 int64_t heads, OpCounter* counter = nullptr) {
  const int64_t n = h.rows(), d = h.cols(), dh = d / heads;
  Tensor<T> q = affine(h, params.wq, params.bq, counter);
  Tensor<T> k = affine(h, params.wk, params.bk, counter);
  Tensor<T> v = affine(h, params.wv, params.bv, counter);
  const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));

  Tensor<T> ctx({n, d});
  Tensor<T> qh({n, dh}), kh({n, dh}), vh({n, dh});
  for (int64_t head = 0; head < heads; ++head) {
    const int64_t off = head * dh;
    for (int64_t i = 0; i < n; ++i)
      for (int64_t j = 0; j < dh; ++j) {
        qh.at(i, j) = q.at(i, off + j);
        kh.at(i, j) = k.at(i, off + j);
        vh.at(i, j) = v.at(i, off + j);
      }
    Tensor<T> scores = matmul_nt(qh, kh);  // the N x N matrix
    if (counter)
      counter->add(static_cast<unsigned long long>(n) * n * dh);
    for (int64_t i = 0; i < scores.size(); ++i) scores[i] *= scale;
    scores = softmax_last(scores);
    Tensor<T> out = matmul(scores, vh, counter);
    for (int64_t i = 0; i < n; ++i)
      for (int64_t j = 0; j < dh; ++j) ctx.at(i, off + j) = out.at(i, j);
  }
  return affine(ctx, params.wo, params.bo, counter);
}

// 4Nd^2 projections + 2N^2d for the score and context products.
inline unsigned long long attention_mult_count(int64_t n, int64_t d) {
  const unsigned long long un = n, ud = d;
  return 4 * un * ud * ud + 2 * un * un * ud;
}

// Analytic peak of simultaneously live tensor bytes for one timed forward
// (f32): batch inputs + batch outputs + the widest per-sequence workspace.
unsigned long long estimate_bytes(BenchMixer mixer, int64_t n, int64_t d,
                                  int64_t heads, int64_t batch);

std::vector<BenchRow> run_bench(const BenchSpec& spec);

std::string emit_csv(const std::vector<BenchRow>& rows);
std::vector<BenchRow> parse_csv(const std::string& text);

struct ScalingRow {
  BenchMixer mixer = BenchMixer::ponet_fused;
  double exponent = 0;  // least-squares slope of log time vs log length
  std::vector<std::pair<int64_t, double>> ratios;  // time(len)/time(prev len)
};

std::vector<ScalingRow> scaling_report(const std::vector<BenchRow>& rows);

}  // namespace ponet
