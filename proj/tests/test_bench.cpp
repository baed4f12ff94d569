#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "ponet/bench.hpp"
#include "ponet/segmentation.hpp"

using namespace ponet;

namespace {

BenchSpec tiny_spec() {
  BenchSpec spec;
  spec.lengths = {32, 64, 128};
  spec.d = 16;
  spec.heads = 2;
  spec.layers = 1;
  spec.batch = 2;
  spec.warmup_iters = 0;
  spec.measured_iters = 3;
  return spec;
}

}  // namespace

TEST_CASE("bench rows carry closed-form op counts") {
  auto spec = tiny_spec();
  auto rows = run_bench(spec);
  REQUIRE(rows.size() == 9);
  for (const auto& r : rows) {
    CHECK(r.median_seconds > 0);
    const unsigned long long per_seq =
        r.mixer == BenchMixer::self_attention
            ? attention_mult_count(r.length, r.d)
            : count_mults(r.length, r.d,
                          r.mixer == BenchMixer::ponet_naive ? MixPath::naive
                                                             : MixPath::fused);
    CHECK(r.mult_count ==
          per_seq * static_cast<unsigned long long>(spec.layers * spec.batch));
  }
}

TEST_CASE("ponet op count at the reference scale") {
  BenchSpec spec;
  spec.lengths = {512};
  spec.d = 64;
  spec.heads = 2;
  spec.layers = 1;
  spec.batch = 1;
  spec.warmup_iters = 0;
  spec.measured_iters = 3;
  spec.mixers = {BenchMixer::ponet_fused};
  auto rows = run_bench(spec);
  REQUIRE(rows.size() == 1);
  CHECK(rows[0].mult_count == 10588160ull);
}

TEST_CASE("memory estimates: attention carries the square matrix") {
  const int64_t n = 4096, d = 64, heads = 2, batch = 4;
  const auto attn = estimate_bytes(BenchMixer::self_attention, n, d, heads,
                                   batch);
  const auto fused = estimate_bytes(BenchMixer::ponet_fused, n, d, heads,
                                    batch);
  const auto naive = estimate_bytes(BenchMixer::ponet_naive, n, d, heads,
                                    batch);
  CHECK(attn > static_cast<unsigned long long>(n) * n * 4);  // score matrix
  CHECK(fused < attn);
  CHECK(naive < attn);

  // no quadratic term on the pooling side: the estimate stays linear in n
  const auto fused2x =
      estimate_bytes(BenchMixer::ponet_fused, 2 * n, d, heads, batch);
  CHECK(fused2x < 2 * fused + (1 << 20));

  // doubling n roughly quadruples the attention score term
  const auto attn2x =
      estimate_bytes(BenchMixer::self_attention, 2 * n, d, heads, batch);
  const auto score = static_cast<unsigned long long>(n) * n * 4;
  CHECK(attn2x - (attn - score) >= 4 * score);
}

TEST_CASE("doubling length doubles the pooling op count minus constant") {
  const int64_t d = 64;
  const auto c1 = count_mults(1024, d, MixPath::fused);
  const auto c2 = count_mults(2048, d, MixPath::fused);
  const auto c4 = count_mults(4096, d, MixPath::fused);
  const unsigned long long constant = static_cast<unsigned long long>(d) * d;
  CHECK(c2 - constant == 2 * (c1 - constant));
  CHECK(c4 - constant == 4 * (c1 - constant));

  const auto a1 = attention_mult_count(1024, d);
  const auto a2 = attention_mult_count(2048, d);
  // the quadratic term quadruples
  const auto quad1 = 2ull * 1024 * 1024 * d;
  const auto quad2 = 2ull * 2048 * 2048 * d;
  CHECK(quad2 == 4 * quad1);
  CHECK(a2 - 2 * (a1 - quad1) == quad2);
}

TEST_CASE("budget refusal drops rows with a message") {
  auto spec = tiny_spec();
  spec.mixers = {BenchMixer::self_attention};
  spec.mem_budget_bytes = 1;  // everything refused
  auto rows = run_bench(spec);
  CHECK(rows.empty());
}

TEST_CASE("csv round-trips") {
  auto spec = tiny_spec();
  spec.mixers = {BenchMixer::ponet_fused, BenchMixer::self_attention};
  auto rows = run_bench(spec);
  auto parsed = parse_csv(emit_csv(rows));
  REQUIRE(parsed.size() == rows.size());
  for (size_t i = 0; i < rows.size(); ++i) CHECK(parsed[i] == rows[i]);

  CHECK_THROWS_AS(parse_csv("bogus header\n"), InputError);
}

TEST_CASE("scaling_report recovers synthetic exponents") {
  std::vector<BenchRow> rows;
  for (int64_t n : {512, 1024, 2048, 4096}) {
    BenchRow linear;
    linear.mixer = BenchMixer::ponet_fused;
    linear.length = n;
    linear.median_seconds = 3.5e-6 * static_cast<double>(n);
    rows.push_back(linear);
    BenchRow quad;
    quad.mixer = BenchMixer::self_attention;
    quad.length = n;
    quad.median_seconds = 1e-9 * static_cast<double>(n) * n;
    rows.push_back(quad);
  }
  auto report = scaling_report(rows);
  REQUIRE(report.size() == 2);
  for (const auto& s : report) {
    if (s.mixer == BenchMixer::ponet_fused)
      CHECK(std::fabs(s.exponent - 1.0) < 1e-9);
    if (s.mixer == BenchMixer::self_attention) {
      CHECK(std::fabs(s.exponent - 2.0) < 1e-9);
      REQUIRE(s.ratios.size() == 3);
      CHECK(std::fabs(s.ratios[0].second - 4.0) < 1e-9);
    }
  }
}

TEST_CASE("scaling_report rejects short series") {
  std::vector<BenchRow> rows(2);
  rows[0].mixer = rows[1].mixer = BenchMixer::ponet_fused;
  rows[0].length = 512;
  rows[1].length = 1024;
  rows[0].median_seconds = rows[1].median_seconds = 1.0;
  CHECK_THROWS_AS(scaling_report(rows), InputError);
}

TEST_CASE("self-attention forward sanity") {
  Rng rng(71);
  auto params = AttentionParams<double>::random(8, rng, 0.3);
  auto h = rng.normal_tensor<double>({5, 8}, 1.0);
  OpCounter counter;
  auto out = self_attention_forward(h, params, 2, &counter);
  CHECK(out.rows() == 5);
  CHECK(out.cols() == 8);
  CHECK(counter.mults == attention_mult_count(5, 8));

  // single position: softmax collapses, output = (v row) W_o + b_o
  auto h1 = rng.normal_tensor<double>({1, 8}, 1.0);
  auto v = affine(h1, params.wv, params.bv);
  auto want = affine(v, params.wo, params.bo);
  auto got = self_attention_forward(h1, params, 2);
  for (int64_t i = 0; i < got.size(); ++i)
    CHECK(std::fabs(got[i] - want[i]) < 1e-12);
}
