#include "ponet/tasks.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

namespace ponet {

int64_t oracle_label(TaskKind kind, const std::vector<int64_t>& tokens,
                     const SegmentMap& seg) {
  switch (kind) {
    case TaskKind::segment_max_id: {
      // segment of the first occurrence of the maximum token
      size_t best = 0;
      for (size_t i = 1; i < tokens.size(); ++i)
        if (tokens[i] > tokens[best]) best = i;
      return seg.segment_of(static_cast<int64_t>(best));
    }
    case TaskKind::duplicate_detect: {
      std::set<int64_t> seen;
      for (int64_t t : tokens)
        if (!seen.insert(t).second) return 1;
      return 0;
    }
    case TaskKind::parity: {
      int64_t count = 0;
      for (int64_t t : tokens) count += t == kParityMarker;
      return count % 2;
    }
  }
  throw ConfigError("unknown task kind");
}

namespace {

// Draws `count` distinct values from [lo, vocab) without replacement.
std::vector<int64_t> sample_distinct(Rng& rng, int64_t lo, int64_t vocab,
                                     int64_t count) {
  std::vector<int64_t> pool;
  for (int64_t v = lo; v < vocab; ++v) pool.push_back(v);
  if (static_cast<int64_t>(pool.size()) < count)
    throw ConfigError("vocab too small for duplicate-free sampling");
  for (int64_t i = 0; i < count; ++i) {
    const int64_t j = i + rng.below(static_cast<int64_t>(pool.size()) - i);
    std::swap(pool[static_cast<size_t>(i)], pool[static_cast<size_t>(j)]);
  }
  pool.resize(static_cast<size_t>(count));
  return pool;
}

}  // namespace

std::vector<Example> gen_task(const TaskSpec& spec, int64_t count) {
  spec.validate();
  Rng rng(spec.seed);
  const SegmentMap seg = segment_even(spec.length, spec.segments);
  std::vector<Example> examples;
  examples.reserve(static_cast<size_t>(count));

  for (int64_t e = 0; e < count; ++e) {
    Example ex;
    ex.seg = seg;
    switch (spec.kind) {
      case TaskKind::segment_max_id: {
        // unique maximum token placed at a random position
        ex.tokens.resize(static_cast<size_t>(spec.length));
        for (auto& t : ex.tokens) t = rng.below(spec.vocab - 1);
        ex.tokens[static_cast<size_t>(rng.below(spec.length))] =
            spec.vocab - 1;
        break;
      }
      case TaskKind::duplicate_detect: {
        // negatives are duplicate-free draws; positives repeat one token at
        // 2..6 positions so instance difficulty spans a range
        ex.tokens = sample_distinct(rng, 0, spec.vocab, spec.length);
        if (rng.below(2) == 1) {
          const int64_t copies =
              2 + rng.below(std::min<int64_t>(31, spec.length - 2));
          const int64_t src = rng.below(spec.length);
          std::vector<int64_t> positions =
              sample_distinct(rng, 0, spec.length - 1, copies - 1);
          for (int64_t pos : positions) {
            if (pos >= src) ++pos;
            ex.tokens[static_cast<size_t>(pos)] =
                ex.tokens[static_cast<size_t>(src)];
          }
        }
        break;
      }
      case TaskKind::parity: {
        // balanced construction: parity drawn first, marker count follows
        const int64_t parity = rng.below(2);
        const int64_t markers = parity + 2 * rng.below(3);
        if (markers > spec.length)
          throw ConfigError("parity task length too short");
        ex.tokens.resize(static_cast<size_t>(spec.length));
        for (auto& t : ex.tokens) t = 1 + rng.below(spec.vocab - 1);
        for (int64_t pos : sample_distinct(rng, 0, spec.length, markers))
          ex.tokens[static_cast<size_t>(pos)] = kParityMarker;
        break;
      }
    }
    ex.label = oracle_label(spec.kind, ex.tokens, ex.seg);
    examples.push_back(std::move(ex));
  }
  return examples;
}

double evaluate_accuracy(const std::vector<Example>& examples,
                         const EncoderParams<double>& params,
                         const EncoderConfig& cfg) {
  if (examples.empty()) throw InputError("empty evaluation set");
  int64_t hits = 0;
  for (const Example& ex : examples) {
    const Tensor<double> enc = encode(ex.tokens, ex.seg, params, cfg);
    const Tensor<double> logits = classify(enc, params, cfg);
    int64_t best = 0;
    for (int64_t c = 1; c < logits.size(); ++c)
      if (logits[c] > logits[best]) best = c;
    hits += best == ex.label;
  }
  return static_cast<double>(hits) / static_cast<double>(examples.size());
}

namespace {

struct Adam {
  EncoderParams<double> m, v;
  int64_t t = 0;

  explicit Adam(const EncoderConfig& cfg)
      : m(EncoderParams<double>::zeros(cfg)),
        v(EncoderParams<double>::zeros(cfg)) {}
};

}  // namespace

TrainResult train_model(EncoderParams<double>& params,
                        const EncoderConfig& cfg, const TaskSpec& task,
                        const TrainConfig& tcfg) {
  task.validate();
  tcfg.validate();
  cfg.validate();

  TaskSpec train_spec = task;
  TaskSpec eval_spec = task;
  eval_spec.seed = task.seed ^ 0x9e3779b97f4a7c15ull;  // held-out split
  const auto train_set = gen_task(train_spec, tcfg.train_examples);
  const auto eval_set = gen_task(eval_spec, tcfg.eval_examples);

  Rng order_rng(tcfg.seed);
  Rng dropout_rng(tcfg.seed ^ 0xda3e39cb94b95bdbull);
  std::vector<int64_t> order(static_cast<size_t>(train_set.size()));
  for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int64_t>(i);

  Adam adam(cfg);
  EncoderParams<double> grads = EncoderParams<double>::zeros(cfg);
  TrainResult result;
  int64_t cursor = 0;

  auto shuffle = [&] {
    for (size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[static_cast<size_t>(
                                  order_rng.below(static_cast<int64_t>(i)))]);
  };
  shuffle();

  for (int64_t step = 1; step <= tcfg.steps; ++step) {
    grads.for_each_param(
        [](const std::string&, Tensor<double>& t) { t.fill(0.0); });

    double loss_sum = 0;
    for (int64_t b = 0; b < tcfg.batch; ++b) {
      if (cursor >= static_cast<int64_t>(train_set.size())) {
        cursor = 0;
        shuffle();
      }
      const Example& ex = train_set[static_cast<size_t>(order[size_t(cursor)])];
      ++cursor;
      loss_sum += model_loss_backward(ex, params, cfg, &dropout_rng, grads);
    }
    const double loss = loss_sum / static_cast<double>(tcfg.batch);
    if (!std::isfinite(loss))
      throw NumericError("training diverged at step " + std::to_string(step));

    const double inv_batch = 1.0 / static_cast<double>(tcfg.batch);
    double sq_norm = 0;
    grads.for_each_param([&](const std::string&, Tensor<double>& g) {
      for (int64_t i = 0; i < g.size(); ++i) {
        g[i] *= inv_batch;
        sq_norm += g[i] * g[i];
      }
    });
    const double norm = std::sqrt(sq_norm);
    const double clip_scale =
        norm > tcfg.clip_norm ? tcfg.clip_norm / norm : 1.0;

    ++adam.t;
    const double bc1 = 1.0 - std::pow(tcfg.beta1, double(adam.t));
    const double bc2 = 1.0 - std::pow(tcfg.beta2, double(adam.t));
    const double lr =
        tcfg.linear_decay
            ? tcfg.learning_rate *
                  (1.0 - double(step - 1) / double(tcfg.steps))
            : tcfg.learning_rate;

    // walk the three structures in lockstep (identical enumeration order)
    std::vector<Tensor<double>*> gs, ms, vs, ps;
    grads.for_each_param(
        [&](const std::string&, Tensor<double>& t) { gs.push_back(&t); });
    adam.m.for_each_param(
        [&](const std::string&, Tensor<double>& t) { ms.push_back(&t); });
    adam.v.for_each_param(
        [&](const std::string&, Tensor<double>& t) { vs.push_back(&t); });
    params.for_each_param(
        [&](const std::string&, Tensor<double>& t) { ps.push_back(&t); });
    for (size_t k = 0; k < gs.size(); ++k) {
      Tensor<double>& g = *gs[k];
      Tensor<double>& m = *ms[k];
      Tensor<double>& v = *vs[k];
      Tensor<double>& p = *ps[k];
      for (int64_t i = 0; i < g.size(); ++i) {
        const double gi = g[i] * clip_scale;
        m[i] = tcfg.beta1 * m[i] + (1.0 - tcfg.beta1) * gi;
        v[i] = tcfg.beta2 * v[i] + (1.0 - tcfg.beta2) * gi * gi;
        const double mhat = m[i] / bc1;
        const double vhat = v[i] / bc2;
        p[i] -= lr * mhat / (std::sqrt(vhat) + tcfg.epsilon);
      }
    }

    CurvePoint point;
    point.step = step;
    point.loss = loss;
    if (step % tcfg.eval_every == 0 || step == tcfg.steps) {
      point.has_eval = true;
      point.eval_acc = evaluate_accuracy(eval_set, params, cfg);
      result.final_accuracy = point.eval_acc;
    }
    result.curve.push_back(point);
  }
  return result;
}

std::string curve_csv(const TrainResult& result) {
  std::ostringstream out;
  out << "step,loss,eval_acc\n";
  char buf[64];
  for (const CurvePoint& p : result.curve) {
    std::snprintf(buf, sizeof buf, "%.17g", p.loss);
    out << p.step << ',' << buf << ',';
    if (p.has_eval) {
      std::snprintf(buf, sizeof buf, "%.17g", p.eval_acc);
      out << buf;
    }
    out << '\n';
  }
  return out.str();
}

}  // namespace ponet
