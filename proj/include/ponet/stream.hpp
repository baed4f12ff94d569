#pragma once

// Streaming causal variant: per-token O(1) updates of the running mean, the
// open segment's running max, and a trailing-window local max. Only the
// variant without second-stage aggregation streams; cross-attention would
// reintroduce O(T) work per step.

#include <limits>
#include <vector>

#include "ponet/encoder.hpp"
#include "ponet/mixer.hpp"

namespace ponet {

struct CausalState {
  int64_t t = 0;
  Tensor<double> running_mean;     // [d] over projected query rows
  Tensor<double> seg_running_max;  // [d] for the open segment, -inf sentinel
  int64_t current_segment = 0;
  std::vector<Tensor<double>> lmp_buffer;  // last window-1 projected rows
};

inline CausalState stream_init(const MixerConfig& cfg) {
  cfg.validate();
  if (cfg.variant != MixerVariant::no_ss_ga)
    throw ConfigError(
        "streaming requires variant no_ss_ga: the second aggregation stage "
        "attends over the whole sequence and cannot update in O(1)");
  CausalState s;
  s.running_mean = Tensor<double>({cfg.d});
  s.seg_running_max = Tensor<double>({cfg.d});
  s.seg_running_max.fill(-std::numeric_limits<double>::infinity());
  return s;
}

namespace detail {

inline Tensor<double> project_row(const Tensor<double>& row,
                                  const Tensor<double>& w,
                                  const Tensor<double>& b,
                                  OpCounter* counter) {
  const int64_t d = row.size();
  Tensor<double> out({d});
  for (int64_t j = 0; j < d; ++j) {
    double acc = b[j];
    for (int64_t i = 0; i < d; ++i) acc += row[i] * w.at(i, j);
    out[j] = acc;
  }
  if (counter) counter->add(static_cast<unsigned long long>(d * d));
  check_finite(out, "stream projection");
  return out;
}

}  // namespace detail

// Consumes one token row. segment_boundary marks the row as the first token
// of a new segment; the very first row always opens segment 0. Cost is
// O(d^2) projections plus O(window d) updates, independent of t.
inline Tensor<double> stream_step(CausalState& state,
                                  const Tensor<double>& row,
                                  bool segment_boundary,
                                  const ProjectionSet<double>& params,
                                  const MixerConfig& cfg,
                                  OpCounter* counter = nullptr) {
  const int64_t d = cfg.d;
  if (row.size() != d) throw ShapeError("stream_step row size mismatch");
  check_finite(row, "stream input row");

  if (segment_boundary && state.t > 0) {
    ++state.current_segment;
    state.seg_running_max.fill(-std::numeric_limits<double>::infinity());
  }

  Tensor<double> q = detail::project_row(row, params.w_qg, params.b_qg,
                                         counter);
  Tensor<double> s = detail::project_row(row, params.w_s, params.b_s, counter);
  Tensor<double> l = detail::project_row(row, params.w_l, params.b_l, counter);
  Tensor<double> o = detail::project_row(row, params.w_o, params.b_o, counter);

  // mean(i<=T+1) = (T*mean(i<=T) + x_{T+1}) / (T+1)
  const double t = static_cast<double>(state.t);
  for (int64_t j = 0; j < d; ++j)
    state.running_mean[j] = (t * state.running_mean[j] + q[j]) / (t + 1.0);

  // max(i<=T+1) = max(x_{T+1}, max(i<=T))
  for (int64_t j = 0; j < d; ++j)
    state.seg_running_max[j] = std::max(state.seg_running_max[j], s[j]);

  // trailing window over the current row and the buffered predecessors
  Tensor<double> local = l;
  for (const Tensor<double>& prev : state.lmp_buffer)
    for (int64_t j = 0; j < d; ++j) local[j] = std::max(local[j], prev[j]);
  if (cfg.lmp_window > 1) {
    state.lmp_buffer.push_back(std::move(l));
    if (static_cast<int64_t>(state.lmp_buffer.size()) > cfg.lmp_window - 1)
      state.lmp_buffer.erase(state.lmp_buffer.begin());
  }

  Tensor<double> p({d});
  for (int64_t j = 0; j < d; ++j)
    p[j] = (state.running_mean[j] + state.seg_running_max[j]) * o[j] + local[j];
  if (counter) counter->add(static_cast<unsigned long long>(d));
  check_finite(p, "stream output");

  ++state.t;
  return p;
}

struct LeakageReport {
  int64_t trials = 0;
  int64_t violations = 0;
};

// Feeds the stream twice, perturbing one future token; emissions up to
// t_check must be unaffected.
inline LeakageReport leakage_probe(const std::vector<Tensor<double>>& rows,
                                   const std::vector<bool>& boundaries,
                                   int64_t t_perturb, int64_t t_check,
                                   const ProjectionSet<double>& params,
                                   const MixerConfig& cfg) {
  const int64_t total = static_cast<int64_t>(rows.size());
  if (!(t_check < t_perturb && t_perturb < total))
    throw InputError("leakage_probe requires t_check < t_perturb < length");

  auto run = [&](bool perturbed) {
    CausalState state = stream_init(cfg);
    std::vector<Tensor<double>> out;
    for (int64_t i = 0; i < total; ++i) {
      Tensor<double> row = rows[static_cast<size_t>(i)];
      if (perturbed && i == t_perturb)
        for (int64_t j = 0; j < row.size(); ++j) row[j] += 1.0;
      out.push_back(stream_step(state, row, boundaries[static_cast<size_t>(i)],
                                params, cfg));
    }
    return out;
  };

  const auto base = run(false);
  const auto bumped = run(true);
  LeakageReport report;
  for (int64_t i = 0; i <= t_check; ++i) {
    ++report.trials;
    for (int64_t j = 0; j < base[size_t(i)].size(); ++j)
      if (base[size_t(i)][j] != bumped[size_t(i)][j]) {
        ++report.violations;
        break;
      }
  }
  return report;
}

// Stacked streaming inference: each layer owns a CausalState; the residual,
// layer-norm, and feed-forward pieces are per-token and stream trivially.
class StreamingEncoder {
 public:
  StreamingEncoder(const EncoderParams<double>& params,
                   const EncoderConfig& cfg)
      : params_(params), cfg_(cfg) {
    cfg_.validate();
    for (int64_t l = 0; l < cfg.layers; ++l)
      states_.push_back(stream_init(cfg_.mixer_at(l)));
  }

  int64_t position() const { return pos_; }

  // Raw feature row entering layer 0 directly.
  Tensor<double> step_row(Tensor<double> x, bool segment_boundary) {
    const int64_t d = cfg_.d;
    for (int64_t l = 0; l < cfg_.layers; ++l) {
      const LayerParams<double>& lp = params_.layers[static_cast<size_t>(l)];
      Tensor<double> p =
          stream_step(states_[static_cast<size_t>(l)], x, segment_boundary,
                      lp.mix, cfg_.mixer_at(l));
      Tensor<double> sum1({1, d});
      for (int64_t j = 0; j < d; ++j) sum1.at(0, j) = x[j] + p[j];
      Tensor<double> mid = layer_norm(sum1, lp.ln1_gain, lp.ln1_bias);

      Tensor<double> pre = affine(mid, lp.ffn_w1, lp.ffn_b1);
      for (int64_t i = 0; i < pre.size(); ++i) pre[i] = gelu(pre[i]);
      Tensor<double> f = affine(pre, lp.ffn_w2, lp.ffn_b2);
      Tensor<double> sum2({1, d});
      for (int64_t j = 0; j < d; ++j) sum2.at(0, j) = mid.at(0, j) + f.at(0, j);
      Tensor<double> out = layer_norm(sum2, lp.ln2_gain, lp.ln2_bias);
      x = Tensor<double>({d});
      for (int64_t j = 0; j < d; ++j) x[j] = out.at(0, j);
    }
    ++pos_;
    return x;
  }

  // Token id through the embedding tables.
  Tensor<double> step_token(int64_t id, bool segment_boundary) {
    if (id < 0 || id >= cfg_.vocab_size)
      throw InputError("token id out of range");
    if (pos_ >= cfg_.max_len) throw InputError("stream exceeds max_len");
    Tensor<double> row({cfg_.d});
    for (int64_t j = 0; j < cfg_.d; ++j)
      row[j] = params_.tok_embed.at(id, j) + params_.pos_embed.at(pos_, j);
    return step_row(std::move(row), segment_boundary);
  }

 private:
  EncoderParams<double> params_;
  EncoderConfig cfg_;
  std::vector<CausalState> states_;
  int64_t pos_ = 0;
};

}  // namespace ponet
