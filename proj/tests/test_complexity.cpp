#include <doctest.h>

#include <cmath>

#include "evgraph/complexity.hpp"
#include "evgraph/errors.hpp"
#include "evgraph/pooling.hpp"
#include "support/oracles.hpp"

using namespace evg;
using namespace evg::complexity;

namespace {

// Counting oracles: tally the multiply/add operations one term at a time.
std::uint64_t count_conv2d(std::uint64_t h, std::uint64_t w, std::uint64_t cin, std::uint64_t k, std::uint64_t cout) {
  std::uint64_t per_output = 0;
  for (std::uint64_t i = 0; i < cin * k * k; ++i) per_output += 2;  // multiply + add
  per_output += 2;                                                  // bias
  std::uint64_t total = 0;
  for (std::uint64_t o = 0; o < h * w * cout; ++o) total += per_output;
  return total;
}

std::uint64_t count_graph_conv(std::uint64_t edges, std::uint64_t nodes, std::uint64_t m, std::uint64_t d,
                               std::uint64_t cin, std::uint64_t cout) {
  const auto basis = static_cast<std::uint64_t>(std::llround(std::pow(double(m + 1), double(d))));
  std::uint64_t total = 0;
  for (std::uint64_t e = 0; e < edges; ++e) {
    for (std::uint64_t b = 0; b < basis; ++b) total += 3 * cin * cout + 7 * d;
    total += cout;
  }
  return total + nodes * cout;
}

std::uint64_t rand_in(Rng& rng, std::uint64_t lo, std::uint64_t hi) { return lo + uniform_index(rng, hi - lo + 1); }

}  // namespace

TEST_CASE("worked values") {
  CHECK(conv2d_flops(4, 4, 1, 3, 2) == 640);
  CHECK(conv2d_flops(4, 4, 1, 3, 0) == 0);
  CHECK(conv2d_flops(224, 224, 3, 3, 64) == 179'830'784);
  CHECK(graph_conv_flops({4, 10}, 1, 2, 1, 32) == 4848);
  CHECK(graph_conv_flops({4, 0}, 1, 2, 1, 32) == 4 * 32);
  CHECK(fc_flops(128, 10) == 2550);
  CHECK(conv_params(1, 9, 2) == 20);
  CHECK(fc_params(128, 10) == 1290);
}

TEST_CASE("formulas agree with operation counting") {
  Rng rng(1);
  for (int i = 0; i < 50; ++i) {
    auto h = rand_in(rng, 1, 40), w = rand_in(rng, 1, 40), cin = rand_in(rng, 1, 16), k = rand_in(rng, 1, 7),
         cout = rand_in(rng, 1, 16);
    CHECK(conv2d_flops(h, w, cin, k, cout) == count_conv2d(h, w, cin, k, cout));
  }
  for (int i = 0; i < 50; ++i) {
    auto e = rand_in(rng, 0, 300), n = rand_in(rng, 1, 100), m = rand_in(rng, 0, 3), d = rand_in(rng, 1, 3),
         cin = rand_in(rng, 1, 32), cout = rand_in(rng, 1, 32);
    CHECK(graph_conv_flops({n, e}, m, d, cin, cout) == count_graph_conv(e, n, m, d, cin, cout));
    // linear in the edge count
    const auto f0 = graph_conv_flops({n, 0}, m, d, cin, cout);
    const auto f1 = graph_conv_flops({n, e}, m, d, cin, cout);
    const auto f2 = graph_conv_flops({n, 2 * e}, m, d, cin, cout);
    CHECK(f2 - f1 == f1 - f0);
  }
  for (int i = 0; i < 50; ++i) {
    auto in = rand_in(rng, 1, 5000), out = rand_in(rng, 1, 200);
    std::uint64_t counted = 0;
    for (std::uint64_t o = 0; o < out; ++o) counted += in + (in - 1);  // products + sums
    CHECK(fc_flops(in, out) == counted);
    std::uint64_t weights = 0;
    for (std::uint64_t o = 0; o < out; ++o) weights += in + 1;
    CHECK(fc_params(in, out) == weights);
    auto keff = rand_in(rng, 1, 49);
    CHECK(conv_params(in, keff, out) == (in * keff + 1) * out);
  }
}

TEST_CASE("model report totals and structure") {
  auto spec = build_model("rgcnn_small", 10, 34, 34);
  std::vector<GraphStats> stats{{500, 8000}, {200, 1500}, {25, 120}};
  auto r = model_report(spec, stats);
  std::uint64_t flops = 0, params = 0;
  for (const auto& l : r.layers) flops += l.flops, params += l.params;
  CHECK(r.total_flops == flops);
  CHECK(r.total_params == params);
  REQUIRE(r.layers.size() == 5);
  CHECK(r.layers[0].flops == count_graph_conv(8000, 500, 1, 2, 1, 32));
  CHECK(r.layers[0].params == 26 * 32);
  CHECK(r.layers[1].flops == count_graph_conv(1500, 200, 1, 2, 32, 64) + count_graph_conv(1500, 200, 0, 2, 32, 64));
  CHECK(r.layers[1].params == (32 * 25 + 1) * 64 + 33 * 64);
  CHECK(r.layers[3].flops == 255 * 128);
  CHECK(r.layers[4].params == 129 * 10);

  auto g = model_report(build_model("gcnn_small", 10, 34, 34), stats);
  CHECK(r.total_flops >= g.total_flops);
  CHECK(r.total_params >= g.total_params);
  CHECK(r.total_params - g.total_params == 33 * 64 + 65 * 128);

  ModelSpec empty;
  auto z = model_report(empty, {});
  CHECK(z.total_flops == 0);
  CHECK(z.total_params == 0);
  CHECK(z.layers.empty());

  std::vector<GraphStats> short_stats{{500, 8000}};
  CHECK_THROWS_AS(model_report(spec, short_stats), DataError);
}

TEST_CASE("reference sizes of the large presets") {
  std::vector<GraphStats> stats(4, GraphStats{1000, 10000});
  auto g = model_report(build_model("gcnn_large", 101, 240, 180), stats);
  auto r = model_report(build_model("rgcnn_large", 101, 240, 180), stats);
  CHECK(g.total_params == 4'932'197);
  CHECK(r.total_params == 5'105'125);
  CHECK(std::round(g.megabytes() * 100) / 100 == doctest::Approx(18.81));
  CHECK(std::round(r.megabytes() * 100) / 100 == doctest::Approx(19.47));
  CHECK(std::fabs(g.megabytes() - 18.81) / 18.81 < 0.10);
  CHECK(std::fabs(r.megabytes() - 19.46) / 19.46 < 0.10);
}

TEST_CASE("measured statistics follow the pooling chain") {
  Rng rng(2);
  auto spec = build_model("gcnn_small", 3, 34, 34);
  std::vector<EventGraph> graphs;
  for (int i = 0; i < 3; ++i) graphs.push_back(build_radius_graph(oracle::random_stream(rng, 34, 34, 400, 20000), {}));
  auto stats = measure_graph_stats(spec, graphs);
  REQUIRE(stats.size() == 3);
  double n0 = 0, e0 = 0, n1 = 0, e1 = 0;
  for (const auto& g : graphs) {
    n0 += g.num_nodes();
    e0 += g.num_edges();
    auto p = oracle::pool(g, 2, 2, 34, 34, true);
    n1 += p.pos.size();
    e1 += p.edges.size();
  }
  CHECK(stats[0].nodes == std::uint64_t(std::llround(n0 / 3)));
  CHECK(stats[0].edges == std::uint64_t(std::llround(e0 / 3)));
  CHECK(stats[1].nodes == std::uint64_t(std::llround(n1 / 3)));
  CHECK(stats[1].edges == std::uint64_t(std::llround(e1 / 3)));
  CHECK(stats[2].nodes <= 25);
}
