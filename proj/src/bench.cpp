#include "ponet/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <sstream>

#include "ponet/segmentation.hpp"

namespace ponet {

unsigned long long default_mem_budget() {
  if (const char* env = std::getenv("PONET_MEM_BUDGET_BYTES")) {
    char* end = nullptr;
    const unsigned long long v = std::strtoull(env, &end, 10);
    if (end && *end == '\0' && v > 0) return v;
    throw ConfigError("PONET_MEM_BUDGET_BYTES must be a positive integer");
  }
  return 2ull << 30;  // 2 GiB
}

unsigned long long estimate_bytes(BenchMixer mixer, int64_t n, int64_t d,
                                  int64_t heads, int64_t batch) {
  const unsigned long long f32 = 4, idx = 8;
  const unsigned long long nd = static_cast<unsigned long long>(n) * d;
  const unsigned long long io = 2 * static_cast<unsigned long long>(batch) *
                                nd * f32;  // inputs + outputs
  switch (mixer) {
    case BenchMixer::ponet_fused:
    case BenchMixer::ponet_naive: {
      // projections (6 under the unshared accounting the closed forms use;
      // the fused path trades the query copy for a d-vector)
      const unsigned long long projections =
          (mixer == BenchMixer::ponet_naive ? 6 : 5) * nd * f32;
      const unsigned long long k_seg = std::min<int64_t>(64, n);
      const unsigned long long seg_pool =
          k_seg * d * (f32 + idx);  // values + winners
      const unsigned long long local_pool = nd * (f32 + idx);
      const unsigned long long attn = static_cast<unsigned long long>(heads) *
                                      n * f32;
      const unsigned long long fused_out = nd * f32;
      return io + projections + seg_pool + local_pool + attn + fused_out +
             3 * d * f32;
    }
    case BenchMixer::self_attention: {
      const unsigned long long qkv = 3 * nd * f32;
      const unsigned long long scores =
          static_cast<unsigned long long>(n) * n * f32;  // one head at a time
      const unsigned long long head_slices =
          3 * (nd / heads) * f32 + (nd / heads) * f32;
      const unsigned long long ctx = nd * f32;
      return io + qkv + scores + head_slices + ctx + nd * f32;
    }
  }
  throw ConfigError("unknown mixer");
}

namespace {

struct PonetBenchModel {
  MixerConfig cfg;
  std::vector<ProjectionSet<float>> layer_params;
};

struct AttnBenchModel {
  int64_t heads;
  std::vector<AttentionParams<float>> layer_params;
};

double median(std::vector<double> xs) {
  std::sort(xs.begin(), xs.end());
  const size_t n = xs.size();
  return n % 2 == 1 ? xs[n / 2] : 0.5 * (xs[n / 2 - 1] + xs[n / 2]);
}

}  // namespace

std::vector<BenchRow> run_bench(const BenchSpec& spec) {
  spec.validate();
  using clock = std::chrono::steady_clock;
  std::vector<BenchRow> rows;

  for (BenchMixer mixer : spec.mixers) {
    Rng rng(spec.seed);

    // Per-mixer parameters, one set per layer. The pooling configs use
    // unshared key/value projections so instrumented counts line up with the
    // canonical closed forms.
    PonetBenchModel ponet;
    AttnBenchModel attn{spec.heads, {}};
    const bool is_ponet = mixer != BenchMixer::self_attention;
    if (is_ponet) {
      ponet.cfg.d = spec.d;
      ponet.cfg.heads = spec.heads;
      ponet.cfg.share_kv = false;
      for (int64_t l = 0; l < spec.layers; ++l)
        ponet.layer_params.push_back(
            ProjectionSet<float>::random(ponet.cfg, rng, 0.02));
    } else {
      for (int64_t l = 0; l < spec.layers; ++l)
        attn.layer_params.push_back(
            AttentionParams<float>::random(spec.d, rng, 0.02));
    }
    const MixPath path = mixer == BenchMixer::ponet_naive ? MixPath::naive
                                                          : MixPath::fused;

    for (int64_t n : spec.lengths) {
      BenchRow row;
      row.mixer = mixer;
      row.length = n;
      row.d = spec.d;
      row.heads = spec.heads;
      row.batch = spec.batch;
      row.est_bytes = estimate_bytes(mixer, n, spec.d, spec.heads, spec.batch);
      if (row.est_bytes > spec.mem_budget_bytes) {
        std::fprintf(stderr,
                     "bench: refusing %s at length %lld: estimated %llu bytes "
                     "exceeds budget %llu (set PONET_MEM_BUDGET_BYTES to "
                     "raise)\n",
                     to_string(mixer), static_cast<long long>(n),
                     row.est_bytes, spec.mem_budget_bytes);
        continue;
      }

      std::vector<Tensor<float>> inputs, outputs(static_cast<size_t>(spec.batch));
      for (int64_t b = 0; b < spec.batch; ++b)
        inputs.push_back(rng.normal_tensor<float>({n, spec.d}, 1.0));
      const SegmentMap seg = segment_even(n, std::min<int64_t>(64, n));

      auto forward = [&](OpCounter* counter) {
        for (int64_t b = 0; b < spec.batch; ++b) {
          Tensor<float> x = inputs[static_cast<size_t>(b)];
          for (int64_t l = 0; l < spec.layers; ++l) {
            if (is_ponet) {
              x = mix_forward(x, ponet.layer_params[static_cast<size_t>(l)],
                              seg, ponet.cfg, path, false, counter)
                      .p;
            } else {
              x = self_attention_forward(
                  x, attn.layer_params[static_cast<size_t>(l)], attn.heads,
                  counter);
            }
          }
          outputs[static_cast<size_t>(b)] = std::move(x);
        }
      };

      OpCounter counter;
      forward(&counter);  // counted pass doubles as extra warm-up
      row.mult_count = counter.mults;

      for (int64_t i = 0; i < spec.warmup_iters; ++i) forward(nullptr);
      std::vector<double> times;
      for (int64_t i = 0; i < spec.measured_iters; ++i) {
        const auto start = clock::now();
        forward(nullptr);
        times.push_back(
            std::chrono::duration<double>(clock::now() - start).count());
      }
      row.median_seconds = median(times);
      rows.push_back(row);
    }
  }
  return rows;
}

std::string emit_csv(const std::vector<BenchRow>& rows) {
  std::ostringstream out;
  out << "mixer,length,d,heads,batch,median_seconds,est_bytes,mult_count\n";
  char buf[64];
  for (const BenchRow& r : rows) {
    std::snprintf(buf, sizeof buf, "%.17g", r.median_seconds);
    out << to_string(r.mixer) << ',' << r.length << ',' << r.d << ','
        << r.heads << ',' << r.batch << ',' << buf << ',' << r.est_bytes << ','
        << r.mult_count << '\n';
  }
  return out.str();
}

std::vector<BenchRow> parse_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) ||
      line != "mixer,length,d,heads,batch,median_seconds,est_bytes,mult_count")
    throw InputError("bad bench csv header");
  std::vector<BenchRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string field;
    auto next = [&] {
      if (!std::getline(ls, field, ',')) throw InputError("short csv row");
      return field;
    };
    BenchRow r;
    r.mixer = bench_mixer_from_string(next());
    r.length = std::stoll(next());
    r.d = std::stoll(next());
    r.heads = std::stoll(next());
    r.batch = std::stoll(next());
    r.median_seconds = std::stod(next());
    r.est_bytes = std::stoull(next());
    r.mult_count = std::stoull(next());
    rows.push_back(r);
  }
  return rows;
}

std::vector<ScalingRow> scaling_report(const std::vector<BenchRow>& rows) {
  std::vector<ScalingRow> report;
  for (BenchMixer mixer : {BenchMixer::ponet_naive, BenchMixer::ponet_fused,
                           BenchMixer::self_attention}) {
    std::vector<const BenchRow*> mine;
    for (const BenchRow& r : rows)
      if (r.mixer == mixer) mine.push_back(&r);
    if (mine.empty()) continue;
    if (mine.size() < 3)
      throw InputError("scaling_report needs >= 3 lengths per mixer");

    double sx = 0, sy = 0;
    for (const BenchRow* r : mine) {
      sx += std::log(static_cast<double>(r->length));
      sy += std::log(r->median_seconds);
    }
    const double mx = sx / mine.size(), my = sy / mine.size();
    double num = 0, den = 0;
    for (const BenchRow* r : mine) {
      const double dx = std::log(static_cast<double>(r->length)) - mx;
      num += dx * (std::log(r->median_seconds) - my);
      den += dx * dx;
    }
    ScalingRow s;
    s.mixer = mixer;
    s.exponent = num / den;
    for (size_t i = 1; i < mine.size(); ++i)
      s.ratios.emplace_back(mine[i]->length,
                            mine[i]->median_seconds /
                                mine[i - 1]->median_seconds);
    report.push_back(std::move(s));
  }
  return report;
}

}  // namespace ponet
