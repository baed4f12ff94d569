#pragma once

// Synthetic sequence tasks with oracle-recomputable labels, plus a minimal
// Adam loop proving the encoder trains end to end. Each task leans on one
// pooling branch: segment_max_id needs the segment pool, duplicate_detect
// needs global aggregation, parity needs token counting.

#include <string>
#include <vector>

#include "ponet/encoder_grad.hpp"

namespace ponet {

enum class TaskKind { segment_max_id, duplicate_detect, parity };

inline const char* to_string(TaskKind k) {
  switch (k) {
    case TaskKind::segment_max_id: return "segment_max_id";
    case TaskKind::duplicate_detect: return "duplicate_detect";
    case TaskKind::parity: return "parity";
  }
  return "?";
}

inline TaskKind task_from_string(const std::string& s) {
  if (s == "segment_max_id") return TaskKind::segment_max_id;
  if (s == "duplicate_detect") return TaskKind::duplicate_detect;
  if (s == "parity") return TaskKind::parity;
  throw ConfigError("unknown task kind: " + s);
}

// Token id 0 is the marker the parity task counts.
inline constexpr int64_t kParityMarker = 0;

struct TaskSpec {
  TaskKind kind = TaskKind::duplicate_detect;
  int64_t length = 64;
  int64_t vocab = 128;
  int64_t segments = 4;
  uint64_t seed = 1;

  void validate() const {
    if (length < 2 || vocab < 2) throw ConfigError("task spec out of range");
    if (segments < 1 || segments > length)
      throw ConfigError("segments must be in [1, length]");
    if (kind == TaskKind::duplicate_detect && vocab < length)
      throw ConfigError(
          "duplicate_detect needs vocab >= length for duplicate-free "
          "sampling");
    if (kind == TaskKind::segment_max_id && vocab < 3)
      throw ConfigError("segment_max_id needs vocab >= 3");
  }

  int64_t num_classes() const {
    return kind == TaskKind::segment_max_id ? segments : 2;
  }
};

// The stated labeling rules, applied to raw tokens. Test suites call this as
// the independent relabeling oracle.
int64_t oracle_label(TaskKind kind, const std::vector<int64_t>& tokens,
                     const SegmentMap& seg);

std::vector<Example> gen_task(const TaskSpec& spec, int64_t count);

struct TrainConfig {
  double learning_rate = 2e-3;
  bool linear_decay = true;  // lr falls linearly to zero over the run
  int64_t batch = 16;
  int64_t steps = 500;
  int64_t eval_every = 100;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double clip_norm = 1.0;
  uint64_t seed = 7;
  int64_t train_examples = 2048;
  int64_t eval_examples = 256;

  void validate() const {
    if (learning_rate <= 0) throw ConfigError("learning rate must be > 0");
    if (steps < 1 || batch < 1 || eval_every < 1)
      throw ConfigError("train config out of range");
    if (train_examples < batch || eval_examples < 1)
      throw ConfigError("dataset sizes out of range");
  }
};

struct CurvePoint {
  int64_t step = 0;
  double loss = 0;
  bool has_eval = false;
  double eval_acc = 0;
};

struct TrainResult {
  std::vector<CurvePoint> curve;
  double final_accuracy = 0;
};

double evaluate_accuracy(const std::vector<Example>& examples,
                         const EncoderParams<double>& params,
                         const EncoderConfig& cfg);

// Cross-entropy Adam loop with global-norm clipping; deterministic under
// (task seed, train seed). Throws NumericError naming the step on
// divergence.
TrainResult train_model(EncoderParams<double>& params,
                        const EncoderConfig& cfg, const TaskSpec& task,
                        const TrainConfig& tcfg);

std::string curve_csv(const TrainResult& result);

}  // namespace ponet
