#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <limits>
#include <random>
#include <set>

#include "marvin/dse.hpp"
#include "marvin/error.hpp"
#include "marvin/fileio.hpp"

using namespace marvin;
using namespace marvin::dse;
using isa::PrecisionConfig;

namespace {

ErrorCode code_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an error");
  return ErrorCode::InvalidConfig;
}

// Cycles grow with both widths and shrink with pruning; layer k costs (k+1) units.
LatencyTable synthetic_table(std::size_t layers, std::vector<double> rates) {
  LatencyTable t;
  t.rates = rates;
  for (std::size_t k = 0; k < layers; ++k) {
    t.weighted.push_back(static_cast<int>(k));
    t.layer_has_weights.push_back(true);
    std::vector<std::array<LatencyTable::Entry, 9>> per_rate(rates.size());
    for (std::size_t r = 0; r < rates.size(); ++r)
      for (std::size_t c = 0; c < 9; ++c) {
        const auto& cfg = isa::all_configs()[c];
        const double base = 100.0 * (k + 1) * (cfg.weight_bits + 0.5 * cfg.activation_bits);
        per_rate[r][c].cycles = static_cast<std::uint64_t>(base * (1.0 - rates[r]) + 10);
        per_rate[r][c].loads = per_rate[r][c].cycles / 10;
      }
    t.weighted_entries.push_back(per_rate);
  }
  return t;
}

double penalty(int bits) { return bits == 8 ? 0.0 : bits == 4 ? 0.004 : 0.03; }

// Deterministic accuracy surface: narrow widths and pruning cost accuracy.
AccuracyFn synthetic_accuracy(std::size_t* calls = nullptr) {
  return [calls](std::span<const LayerQuantConfig> c) {
    if (calls) ++*calls;
    double a = 0.95;
    for (std::size_t k = 0; k < c.size(); ++k) {
      a -= penalty(c[k].cfg.weight_bits) * (k + 1) + penalty(c[k].cfg.activation_bits) * 0.5;
      a -= c[k].pruning_rate * 0.01;
    }
    return a;
  };
}

bool at_most(const PrecisionConfig& a, const PrecisionConfig& b) {
  return a.weight_bits <= b.weight_bits && a.activation_bits <= b.activation_bits;
}

ParetoPoint pt(double acc, std::uint64_t cycles) {
  ParetoPoint p;
  p.accuracy = acc;
  p.total_cycles = cycles;
  return p;
}

bool dominates(const ParetoPoint& a, const ParetoPoint& b) {
  return a.accuracy >= b.accuracy && a.total_cycles <= b.total_cycles &&
         (a.accuracy > b.accuracy || a.total_cycles < b.total_cycles);
}

struct NetFixture {
  net::DatasetSplit split;
  net::Dataset calib;
  net::FloatNetwork mlp;
};

const NetFixture& net_fixture() {
  static const NetFixture f = [] {
    NetFixture x;
    const auto d = net::read_dataset(std::filesystem::path(MARVIN_SOURCE_DIR) / "data" / "digits.mrvd");
    x.split = net::split_dataset(d, 42);
    std::vector<std::size_t> idx(x.split.train.size() / 10);
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    x.calib = x.split.train.subset(idx);
    x.mlp = net::make_mlp();
    net::init_weights(x.mlp, 42);
    net::TrainOptions opt;
    opt.epochs = 4;
    net::train(x.mlp, x.split.train, opt);
    return x;
  }();
  return f;
}

}  // namespace

TEST_CASE("dse parameters validate and produce the pruning grid") {
  DseParams p;
  CHECK(p.rates() == std::vector<double>{0.0, 0.25, 0.5});
  p.granularity = 0.1;
  p.p_max = 0.3;
  CHECK(p.rates().size() == 4);
  CHECK(p.rates().back() == doctest::Approx(0.3));
  p.p_max = 0.0;
  CHECK(p.rates() == std::vector<double>{0.0});
  DseParams bad;
  bad.granularity = 0.0;
  CHECK(code_of([&] { bad.validate(); }) == ErrorCode::InvalidConfig);
  bad = {};
  bad.granularity = 0.75;
  CHECK(code_of([&] { bad.validate(); }) == ErrorCode::InvalidConfig);
  bad = {};
  bad.threshold = -1;
  CHECK(code_of([&] { bad.validate(); }) == ErrorCode::InvalidConfig);
  bad = {};
  bad.iterations = 0;
  CHECK(code_of([&] { bad.validate(); }) == ErrorCode::InvalidConfig);
  CHECK(config_index({8, 8}) == 0);
  CHECK(config_index({2, 2}) == 8);
  CHECK(code_of([] { config_index({3, 8}); }) == ErrorCode::InvalidConfig);
}

TEST_CASE("latency table entries order by width and pruning and sum to a full-network run") {
  const auto& f = net_fixture();
  const std::vector<double> rates = {0.0, 0.5};
  const auto table = layer_latency_table(f.mlp, rates, f.calib);
  REQUIRE(table.weighted.size() == 3);
  for (std::size_t k = 0; k < 3; ++k) {
    const auto& e = table.weighted_entries[k];
    CHECK(e[0][static_cast<std::size_t>(config_index({8, 8}))].cycles >
          e[0][static_cast<std::size_t>(config_index({2, 2}))].cycles);
    if (k + 1 < 3) {
      // Half the output channels, about half the work.
      for (std::size_t c = 0; c < 9; ++c) {
        const double ratio = static_cast<double>(e[1][c].cycles) / static_cast<double>(e[0][c].cycles);
        CHECK(ratio < 0.7);
        CHECK(ratio > 0.4);
      }
    }
  }
  CHECK(table.max_cycles() >= table.network(quant::uniform_configs(f.mlp, {8, 8})).cycles);

  std::mt19937 rng(3);
  for (int trial = 0; trial < 6; ++trial) {
    std::vector<LayerQuantConfig> cfgs(3);
    for (std::size_t k = 0; k < 3; ++k) {
      cfgs[k].cfg = isa::all_configs()[rng() % 9];
      cfgs[k].pruning_rate = k + 1 < 3 ? rates[rng() % 2] : 0.0;
    }
    const auto qn = quant::quantize_network(f.mlp, cfgs, f.calib);
    const auto np = quant::build_network_program(qn, kernels::Variant::Packed);
    const auto run = quant::run_network(np, quant::quantize_input(qn, f.split.val.image(trial)));
    const double est = static_cast<double>(table.network(cfgs).cycles);
    const double real = static_cast<double>(run.report.total_cycles);
    CHECK(std::fabs(est - real) / real < 0.05);
  }
  CHECK(code_of([&] { table.rate_index(0.3); }) == ErrorCode::ConfigError);
}

TEST_CASE("latency table covers pooling layers by input width") {
  const auto& f = net_fixture();
  auto cnn = net::make_cnn();
  net::init_weights(cnn, 1);
  const std::vector<double> rates = {0.0};
  const auto table = layer_latency_table(cnn, rates, f.calib);
  CHECK(table.other == std::vector<int>{1, 3});
  for (const auto& row : table.other_entries) CHECK(row[2].cycles >= row[0].cycles);
  auto cyc = [&](std::size_t k, PrecisionConfig c) {
    return table.weighted_entries[k][0][static_cast<std::size_t>(config_index(c))].cycles;
  };
  // Layer 0 reads one input channel in row lanes: three taps fit any width,
  // so its cost is flat. The 16-channel conv orders strictly.
  CHECK(cyc(0, {8, 8}) == cyc(0, {2, 2}));
  for (std::size_t k : {1u}) {
    CHECK(cyc(k, {8, 8}) > cyc(k, {4, 4}));
    CHECK(cyc(k, {4, 4}) > cyc(k, {2, 2}));
    CHECK(cyc(k, {8, 8}) > cyc(k, {4, 8}));
    CHECK(cyc(k, {4, 8}) > cyc(k, {2, 8}));
  }
  std::vector<LayerQuantConfig> cfgs(3);
  cfgs[0].cfg = {8, 8};
  cfgs[1].cfg = {4, 2};
  cfgs[2].cfg = {8, 4};
  const auto qn = quant::quantize_network(cnn, cfgs, f.calib);
  const auto np = quant::build_network_program(qn, kernels::Variant::Packed);
  const auto run = quant::run_network(np, quant::quantize_input(qn, f.split.val.image(0)));
  const double est = static_cast<double>(table.network(cfgs).cycles);
  CHECK(std::fabs(est - static_cast<double>(run.report.total_cycles)) / run.report.total_cycles < 0.05);
}

TEST_CASE("evaluator matches direct quantized accuracy and caches preparation") {
  const auto& f = net_fixture();
  Evaluator ev(f.mlp, f.calib, f.split.val);
  auto cfgs = quant::uniform_configs(f.mlp, {4, 8});
  cfgs[0].pruning_rate = 0.25;
  const double a = ev(cfgs);
  CHECK(a == quant::quantized_accuracy(quant::quantize_network(f.mlp, cfgs, f.calib), f.split.val));
  CHECK(ev(cfgs) == a);
  CHECK(ev.evaluations() == 2);
  CHECK(ev.float_accuracy() == net::float_accuracy(f.mlp, f.split.val));
}

TEST_CASE("pareto front of hand-made point sets") {
  CHECK(pareto_front(std::vector<ParetoPoint>{}).empty());
  const std::vector<ParetoPoint> one = {pt(0.5, 10)};
  CHECK(pareto_front(one).size() == 1);
  const std::vector<ParetoPoint> two = {pt(0.90, 100), pt(0.80, 200)};
  const auto f2 = pareto_front(two);
  REQUIRE(f2.size() == 1);
  CHECK(f2[0].total_cycles == 100);
  const std::vector<ParetoPoint> trade = {pt(0.80, 50), pt(0.90, 100), pt(0.90, 100), pt(0.85, 100)};
  const auto f3 = pareto_front(trade);
  REQUIRE(f3.size() == 2);
  CHECK(f3[0].accuracy == 0.80);
  CHECK(f3[1].accuracy == 0.90);
}

TEST_CASE("pareto front agrees with a quadratic dominance filter, is idempotent and order-free") {
  std::mt19937 rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<ParetoPoint> pts;
    const int n = 1 + static_cast<int>(rng() % 40);
    for (int i = 0; i < n; ++i) pts.push_back(pt((rng() % 20) / 20.0, rng() % 30));
    std::set<std::pair<double, std::uint64_t>> expect;
    for (const auto& p : pts) {
      bool dom = false;
      for (const auto& q : pts) dom = dom || dominates(q, p);
      if (!dom) expect.insert({p.accuracy, p.total_cycles});
    }
    const auto front = pareto_front(pts);
    std::set<std::pair<double, std::uint64_t>> got;
    for (const auto& p : front) got.insert({p.accuracy, p.total_cycles});
    CHECK(got == expect);
    CHECK(got.size() == front.size());
    for (std::size_t i = 1; i < front.size(); ++i) CHECK(front[i - 1].total_cycles < front[i].total_cycles);
    const auto again = pareto_front(front);
    REQUIRE(again.size() == front.size());
    for (std::size_t i = 0; i < front.size(); ++i) CHECK(again[i].accuracy == front[i].accuracy);
    auto shuffled = pts;
    std::shuffle(shuffled.begin(), shuffled.end(), rng);
    const auto f2 = pareto_front(shuffled);
    REQUIRE(f2.size() == front.size());
    for (std::size_t i = 0; i < front.size(); ++i) {
      CHECK(f2[i].accuracy == front[i].accuracy);
      CHECK(f2[i].total_cycles == front[i].total_cycles);
    }
  }
}

TEST_CASE("hypervolume of simple fronts") {
  CHECK(hypervolume(std::vector<ParetoPoint>{}, 0.0, 100.0) == 0.0);
  const std::vector<ParetoPoint> one = {pt(1.0, 0)};
  CHECK(hypervolume(one, 0.0, 250.0) == doctest::Approx(250.0));
  const std::vector<ParetoPoint> two = {pt(0.5, 10), pt(0.75, 20)};
  // 0.5 * (20 - 10) + 0.75 * (40 - 20)
  CHECK(hypervolume(two, 0.0, 40.0) == doctest::Approx(20.0));
  CHECK(code_of([&] { hypervolume(two, 0.6, 40.0); }) == ErrorCode::InvalidReference);
  CHECK(code_of([&] { hypervolume(two, 0.0, 15.0); }) == ErrorCode::InvalidReference);
}

TEST_CASE("hypervolume agrees with Monte-Carlo sampling of the dominated region") {
  std::mt19937 rng(5);
  for (int trial = 0; trial < 5; ++trial) {
    std::vector<ParetoPoint> pts;
    for (int i = 0; i < 8; ++i) pts.push_back(pt(0.5 + (rng() % 500) / 1000.0, 100 + rng() % 900));
    const double ref_a = 0.5, ref_c = 1000.0;
    const double hv = hypervolume(pts, ref_a, ref_c);
    std::uniform_real_distribution<double> ua(ref_a, 1.0), uc(0.0, ref_c);
    const int samples = 200000;
    int hit = 0;
    for (int s = 0; s < samples; ++s) {
      const double a = ua(rng), c = uc(rng);
      for (const auto& p : pts)
        if (p.accuracy >= a && static_cast<double>(p.total_cycles) <= c) {
          ++hit;
          break;
        }
    }
    const double mc = (1.0 - ref_a) * ref_c * hit / samples;
    CHECK(std::fabs(mc - hv) / hv < 0.01);
  }
}

TEST_CASE("exhaustive search visits the whole grid and honours its budget") {
  const auto table2 = synthetic_table(2, {0.0});
  DseParams p;
  p.p_max = 0.0;
  const auto r = exhaustive_dse(table2, p, 0.95, synthetic_accuracy());
  CHECK(r.evaluations == 81);
  CHECK(r.evaluated.size() == 81);

  const auto table3 = synthetic_table(3, {0.0, 0.25, 0.5});
  std::size_t calls = 0;
  const auto r3 = exhaustive_dse(table3, DseParams{}, 0.95, synthetic_accuracy(&calls));
  CHECK(r3.evaluations == 19683);
  CHECK(calls == 19683);
  std::set<std::string> keys;
  for (const auto& q : r3.evaluated) keys.insert(config_string(q.configs));
  CHECK(keys.size() == 19683);
  for (const auto& q : r3.front) CHECK(q.acceptable);

  CHECK(code_of([&] { exhaustive_dse(table3, DseParams{}, 0.95, synthetic_accuracy(), 1000); }) ==
        ErrorCode::BudgetExceeded);
  const auto table5 = synthetic_table(5, {0.0});
  CHECK(code_of([&] { exhaustive_dse(table5, p, 0.95, synthetic_accuracy()); }) == ErrorCode::BudgetExceeded);
}

TEST_CASE("with an unbounded threshold the start point is accepted and exploration stays below it") {
  const auto table = synthetic_table(3, {0.0});
  DseParams p;
  p.p_max = 0.0;
  p.threshold = std::numeric_limits<double>::infinity();
  p.iterations = 1000;
  const auto r = greedy_dse(table, p, 0.95, synthetic_accuracy());
  REQUIRE(!r.evaluated.empty());
  const auto start = r.evaluated[0].configs;
  for (const auto& c : start) CHECK(c.cfg == PrecisionConfig{4, 4});  // median of the nine by cycles
  for (const auto& q : r.evaluated) {
    CHECK(q.acceptable);
    for (std::size_t k = 0; k < 3; ++k) CHECK(at_most(q.configs[k].cfg, start[k].cfg));
  }
  // Every vector of {w,a} <= 4 per layer: 4^3.
  CHECK(r.evaluations == 64);
  // The first step down is the cheapest one-step neighbour of the start.
  REQUIRE(r.evaluated.size() > 1);
  std::uint64_t cheapest = ~0ull;
  for (std::size_t k = 0; k < 3; ++k)
    for (const PrecisionConfig c : {PrecisionConfig{2, 4}, PrecisionConfig{4, 2}}) {
      auto v = start;
      v[k].cfg = c;
      cheapest = std::min(cheapest, table.network(v).cycles);
    }
  CHECK(r.evaluated[1].total_cycles == cheapest);
}

TEST_CASE("greedy search keeps to its budget and reports only acceptable points on the front") {
  const auto table = synthetic_table(3, {0.0, 0.25, 0.5});
  for (int budget : {1, 5, 30, 200}) {
    DseParams p;
    p.iterations = budget;
    p.threshold = 1.0;
    std::size_t calls = 0;
    const auto r = greedy_dse(table, p, 0.95, synthetic_accuracy(&calls));
    CHECK(r.evaluations <= static_cast<std::size_t>(budget) + (r.infeasible ? 1 : 0));
    CHECK(calls == r.evaluations);
    for (const auto& q : r.front) {
      CHECK((q.acceptable || r.infeasible));
      CHECK(q.configs.back().pruning_rate == 0.0);
    }
    for (const auto& q : r.evaluated)
      CHECK(q.acceptable == (q.accuracy >= 0.95 - 0.01 - 1e-12));
  }
}

TEST_CASE("greedy upgrades the cheapest layer, weights before activations") {
  const auto table = synthetic_table(2, {0.0});
  DseParams p;
  p.p_max = 0.0;
  p.threshold = 0.0;
  p.iterations = 3;
  const auto r = greedy_dse(table, p, 0.95, synthetic_accuracy());
  REQUIRE(r.evaluated.size() >= 3);
  // Layer 0 is cheaper at equal widths, so it moves first: w4a4 -> w8a4 -> w8a8.
  CHECK(r.evaluated[1].configs[0].cfg == PrecisionConfig{8, 4});
  CHECK(r.evaluated[1].configs[1].cfg == PrecisionConfig{4, 4});
  CHECK(r.evaluated[2].configs[0].cfg == PrecisionConfig{8, 8});
}

TEST_CASE("greedy points are a subset of the exhaustive space and its front dominates") {
  const auto table = synthetic_table(3, {0.0, 0.25, 0.5});
  DseParams p;
  p.iterations = 300;
  const auto g = greedy_dse(table, p, 0.95, synthetic_accuracy());
  const auto e = exhaustive_dse(table, p, 0.95, synthetic_accuracy());
  std::set<std::string> all_ok;
  for (const auto& q : e.acceptable()) all_ok.insert(config_string(q.configs));
  for (const auto& q : g.acceptable()) CHECK(all_ok.count(config_string(q.configs)) == 1);
  for (const auto& q : g.front) {
    bool covered = false;
    for (const auto& x : e.front)
      covered = covered || dominates(x, q) || (x.accuracy == q.accuracy && x.total_cycles == q.total_cycles);
    CHECK(covered);
  }
  const double ref_a = 0.95 - 0.01;
  const double ref_c = static_cast<double>(table.max_cycles());
  CHECK(hypervolume(e.front, ref_a, ref_c) >= hypervolume(g.front, ref_a, ref_c));
}

TEST_CASE("single-layer greedy finds every acceptable config below its accepted start") {
  const auto table = synthetic_table(1, {0.0});
  std::mt19937 rng(21);
  for (int trial = 0; trial < 20; ++trial) {
    std::array<double, 9> acc{};
    for (auto& a : acc) a = 0.9 + (rng() % 100) / 1000.0;
    acc[0] = 0.99;  // w8a8 is always acceptable
    AccuracyFn fn = [&](std::span<const LayerQuantConfig> c) {
      return acc[static_cast<std::size_t>(config_index(c[0].cfg))];
    };
    DseParams p;
    p.p_max = 0.0;
    p.threshold = 4.0;
    p.iterations = 100;
    const auto g = greedy_dse(table, p, 0.99, fn);
    const auto b = exhaustive_dse(table, p, 0.99, fn);
    // The last upgrade-chain point that was evaluated is the accepted start.
    PrecisionConfig accepted{8, 8};
    for (const auto& q : g.evaluated)
      if (q.acceptable) {
        accepted = q.configs[0].cfg;
        break;
      }
    std::set<int> want, got;
    for (const auto& q : b.acceptable())
      if (at_most(q.configs[0].cfg, accepted)) want.insert(config_index(q.configs[0].cfg));
    for (const auto& q : g.acceptable()) got.insert(config_index(q.configs[0].cfg));
    CHECK(got == want);
    std::uint64_t best_g = ~0ull, best_b = ~0ull;
    for (const auto& q : g.acceptable()) best_g = std::min(best_g, q.total_cycles);
    for (const auto& q : b.acceptable())
      if (at_most(q.configs[0].cfg, accepted)) best_b = std::min(best_b, q.total_cycles);
    CHECK(best_g == best_b);
  }
}

TEST_CASE("an unreachable threshold flags the result infeasible") {
  const auto table = synthetic_table(2, {0.0, 0.25});
  DseParams p;
  p.threshold = 0.0;
  p.granularity = 0.25;
  p.p_max = 0.25;
  const auto r = greedy_dse(table, p, 1.0, [](std::span<const LayerQuantConfig>) { return 0.5; });
  CHECK(r.infeasible);
  REQUIRE(r.front.size() == 1);
  for (const auto& c : r.front[0].configs) {
    CHECK(c.cfg == PrecisionConfig{8, 8});
    CHECK(c.pruning_rate == 0.0);
  }
}

TEST_CASE("per-layer pruning pass raises single rates within the budget") {
  const auto table = synthetic_table(3, {0.0, 0.25, 0.5});
  DseParams p;
  p.iterations = 400;
  p.per_layer_pruning = true;
  const auto r = greedy_dse(table, p, 0.95, synthetic_accuracy());
  CHECK(r.evaluations <= 400);
  bool mixed = false;
  for (const auto& q : r.evaluated)
    if (q.source == "per-layer") {
      mixed = mixed || q.configs[0].pruning_rate != q.configs[1].pruning_rate;
      CHECK(q.configs.back().pruning_rate == 0.0);
    }
  CHECK(mixed);
}

TEST_CASE("points csv lists every point") {
  const auto dir = std::filesystem::temp_directory_path() / "marvin_test_dse_csv";
  std::filesystem::create_directories(dir);
  std::vector<ParetoPoint> pts = {pt(0.9, 100), pt(0.8, 50)};
  pts[0].configs = {LayerQuantConfig{{4, 8}, 0, 0, 0.25}};
  pts[0].source = "greedy";
  write_points_csv(dir / "p.csv", pts);
  const std::string s = read_file(dir / "p.csv");
  CHECK(s.find("index,source,accuracy") == 0);
  CHECK(s.find("w4a8@0.25") != std::string::npos);
  CHECK(std::count(s.begin(), s.end(), '\n') == 3);
}
