#include "marvin/dse.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <queue>
#include <tuple>
#include <set>
#include <sstream>

#include "marvin/error.hpp"
#include "marvin/fileio.hpp"

namespace marvin::dse {

using kernels::LayerKind;
using kernels::Variant;

namespace {

[[noreturn]] void invalid(const std::string& m) { throw Error(ErrorCode::InvalidConfig, m); }

int width_index(int bits) { return bits == 2 ? 0 : bits == 4 ? 1 : 2; }

std::vector<std::int32_t> pattern(std::size_t n, int bits, unsigned salt) {
  std::vector<std::int32_t> v(n);
  const unsigned mask = (1u << bits) - 1u;
  for (std::size_t i = 0; i < n; ++i) v[i] = static_cast<std::int32_t>((i * 37u + salt * 11u + 5u) & mask);
  return v;
}

LatencyTable::Entry measure(const kernels::LayerSpec& spec, const kernels::LayerParams& params,
                            const PrecisionConfig& cfg, const kernels::Epilogue& epi, const sim::CycleModel& model) {
  const auto in = pattern(spec.input_size(), cfg.activation_bits, 1);
  const auto rhs = spec.kind == LayerKind::ResidualAdd ? pattern(spec.input_size(), cfg.activation_bits, 2)
                                                       : std::vector<std::int32_t>{};
  const auto lp = kernels::build_layer_program(spec, params, Variant::Packed, cfg, epi, in, rhs);
  auto st = sim::initial_state(lp.program);
  const auto r = sim::run(lp.program, st, model);
  return {r.total_cycles, r.load_count};
}

PrecisionConfig higher(const PrecisionConfig& c) {
  if (c.weight_bits < 8) return {c.weight_bits * 2, c.activation_bits};
  return {c.weight_bits, c.activation_bits * 2};
}

bool maxed(const PrecisionConfig& c) { return c.weight_bits == 8 && c.activation_bits == 8; }

}  // namespace

void DseParams::validate() const {
  if (!(threshold >= 0.0)) invalid("threshold must be non-negative");
  if (!(granularity > 0.0)) invalid("granularity must be positive");
  if (!(p_max >= 0.0 && p_max <= 1.0)) invalid("p_max must lie in [0, 1]");
  if (p_max > 0.0 && granularity > p_max + 1e-12) invalid("granularity exceeds p_max");
  if (iterations < 1) invalid("iteration budget must be at least 1");
}

std::vector<double> DseParams::rates() const {
  validate();
  std::vector<double> r;
  const int n = static_cast<int>(std::floor(p_max / granularity + 1e-9));
  for (int i = 0; i <= n; ++i) r.push_back(std::round(i * granularity * 1e12) / 1e12);
  return r;
}

int config_index(const PrecisionConfig& cfg) {
  const auto& all = isa::all_configs();
  for (std::size_t i = 0; i < all.size(); ++i)
    if (all[i] == cfg) return static_cast<int>(i);
  throw Error(ErrorCode::InvalidConfig, "invalid precision config " + cfg.name());
}

// Latency table

std::size_t LatencyTable::rate_index(double rate) const {
  for (std::size_t i = 0; i < rates.size(); ++i)
    if (std::fabs(rates[i] - rate) < 1e-9) return i;
  throw Error(ErrorCode::ConfigError, "pruning rate " + std::to_string(rate) + " is not on the latency grid");
}

const LatencyTable::Entry& LatencyTable::entry(std::size_t k, const LayerQuantConfig& c) const {
  return weighted_entries.at(k)[rate_index(c.pruning_rate)][static_cast<std::size_t>(config_index(c.cfg))];
}

LatencyTable::Entry LatencyTable::network(std::span<const LayerQuantConfig> configs) const {
  if (configs.size() != weighted.size()) throw Error(ErrorCode::ConfigError, "need one config per weighted layer");
  Entry total;
  for (std::size_t k = 0; k < configs.size(); ++k) {
    const Entry& e = entry(k, configs[k]);
    total.cycles += e.cycles;
    total.loads += e.loads;
  }
  if (other.empty()) return total;
  // Input width of every layer: weighted layers read their own activation
  // width, other layers pass through their consumer's.
  const int n = static_cast<int>(layer_has_weights.size());
  std::vector<int> in_bits(static_cast<std::size_t>(n), 8);
  std::size_t k = configs.size();
  for (int i = n - 1; i >= 0; --i) {
    if (layer_has_weights[static_cast<std::size_t>(i)])
      in_bits[static_cast<std::size_t>(i)] = configs[--k].cfg.activation_bits;
    else if (i + 1 < n)
      in_bits[static_cast<std::size_t>(i)] = in_bits[static_cast<std::size_t>(i + 1)];
  }
  for (std::size_t j = 0; j < other.size(); ++j) {
    const Entry& e = other_entries[j][static_cast<std::size_t>(width_index(in_bits[static_cast<std::size_t>(other[j])]))];
    total.cycles += e.cycles;
    total.loads += e.loads;
  }
  return total;
}

std::uint64_t LatencyTable::max_cycles() const {
  std::uint64_t total = 0;
  for (const auto& layer : weighted_entries) {
    std::uint64_t m = 0;
    for (const auto& row : layer)
      for (const auto& e : row) m = std::max(m, e.cycles);
    total += m;
  }
  for (const auto& row : other_entries) {
    std::uint64_t m = 0;
    for (const auto& e : row) m = std::max(m, e.cycles);
    total += m;
  }
  return total;
}

LatencyTable layer_latency_table(const net::FloatNetwork& net, std::span<const double> rates,
                                 const net::Dataset& calibration, const sim::CycleModel& model) {
  net.validate();
  if (rates.empty()) throw Error(ErrorCode::ConfigError, "latency table needs at least one pruning rate");
  LatencyTable t;
  t.rates.assign(rates.begin(), rates.end());
  t.weighted = net.weighted_layers();
  for (const auto& L : net.layers) t.layer_has_weights.push_back(L.spec.has_weights());
  t.weighted_entries.assign(t.weighted.size(), std::vector<std::array<LatencyTable::Entry, 9>>(rates.size()));

  for (std::size_t ri = 0; ri < rates.size(); ++ri) {
    const std::vector<double> rv(t.weighted.size(), rates[ri]);
    const auto prep = quant::prepare(net, rv, calibration);
    for (std::size_t ci = 0; ci < 9; ++ci) {
      const PrecisionConfig cfg = isa::all_configs()[ci];
      const std::vector<PrecisionConfig> cfgs(t.weighted.size(), cfg);
      const auto qn = quant::quantize_network(prep, cfgs);
      for (std::size_t k = 0; k < t.weighted.size(); ++k) {
        const auto& Q = qn.layers[static_cast<std::size_t>(t.weighted[k])];
        const kernels::Epilogue epi{Q.raw(), cfg.activation_bits};
        t.weighted_entries[k][ri][ci] = measure(Q.spec, Q.params, cfg, epi, model);
      }
    }
  }

  const std::vector<double> zero(t.weighted.size(), 0.0);
  const auto prep = quant::prepare(net, zero, calibration);
  const auto qn = quant::quantize_network(prep, std::vector<PrecisionConfig>(t.weighted.size(), {8, 8}));
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    if (net.layers[i].spec.has_weights()) continue;
    t.other.push_back(static_cast<int>(i));
    std::array<LatencyTable::Entry, 3> row{};
    for (int bits : {2, 4, 8}) {
      const PrecisionConfig cfg{8, bits};
      row[static_cast<std::size_t>(width_index(bits))] =
          measure(qn.layers[i].spec, qn.layers[i].params, cfg, {false, bits}, model);
    }
    t.other_entries.push_back(row);
  }
  return t;
}

// Evaluator

Evaluator::Evaluator(net::FloatNetwork net, net::Dataset calibration, net::Dataset eval, bool refine_shifts)
    : net_(std::move(net)), calibration_(std::move(calibration)), eval_(std::move(eval)), refine_(refine_shifts) {
  net_.validate();
}

const quant::PreparedNetwork& Evaluator::prepared(std::span<const LayerQuantConfig> configs) {
  std::vector<double> rates;
  for (const auto& c : configs) rates.push_back(c.pruning_rate);
  auto it = cache_.find(rates);
  if (it == cache_.end()) it = cache_.emplace(rates, quant::prepare(net_, rates, calibration_)).first;
  return it->second;
}

quant::QuantizedNetwork Evaluator::quantize(std::span<const LayerQuantConfig> configs) {
  std::vector<PrecisionConfig> cfgs;
  for (const auto& c : configs) cfgs.push_back(c.cfg);
  const auto& prep = prepared(configs);
  if (!refine_) return quant::quantize_network(prep, cfgs);
  auto tuned = prep;
  quant::refine_shifts(tuned, cfgs, calibration_);
  return quant::quantize_network(tuned, cfgs);
}

double Evaluator::operator()(std::span<const LayerQuantConfig> configs) {
  ++evaluations_;
  return quant::quantized_accuracy(quantize(configs), eval_);
}

double Evaluator::float_accuracy() const { return net::float_accuracy(net_, eval_); }

// Search

std::vector<ParetoPoint> DseResult::acceptable() const {
  std::vector<ParetoPoint> out;
  for (const auto& p : evaluated)
    if (p.acceptable) out.push_back(p);
  return out;
}

namespace {

class Search {
 public:
  Search(const LatencyTable& table, const DseParams& params, double baseline, const AccuracyFn& acc)
      : table_(table), floor_(baseline - params.threshold / 100.0 - 1e-12), acc_(acc) {
    result_.baseline_accuracy = baseline;
  }

  std::size_t used() const { return result_.evaluations; }

  /// Evaluates unless already seen; returns the point index.
  std::size_t eval(const std::vector<LayerQuantConfig>& cfgs, const char* source) {
    const std::string key = config_string(cfgs);
    if (auto it = seen_.find(key); it != seen_.end()) return it->second;
    ParetoPoint p;
    p.configs = cfgs;
    p.accuracy = acc_(cfgs);
    const auto e = table_.network(cfgs);
    p.total_cycles = e.cycles;
    p.loads = e.loads;
    p.source = source;
    p.acceptable = p.accuracy >= floor_;
    ++result_.evaluations;
    result_.evaluated.push_back(std::move(p));
    seen_.emplace(key, result_.evaluated.size() - 1);
    return result_.evaluated.size() - 1;
  }

  bool seen(const std::vector<LayerQuantConfig>& cfgs) const { return seen_.count(config_string(cfgs)) != 0; }
  const ParetoPoint& point(std::size_t i) const { return result_.evaluated[i]; }

  DseResult finish(bool flag_infeasible, const std::vector<LayerQuantConfig>& full) {
    auto ok = result_.acceptable();
    if (ok.empty() && flag_infeasible) {
      result_.infeasible = true;
      result_.front = {point(eval(full, "greedy"))};
      return std::move(result_);
    }
    result_.front = pareto_front(ok);
    return std::move(result_);
  }

 private:
  const LatencyTable& table_;
  double floor_;
  const AccuracyFn& acc_;
  DseResult result_;
  std::map<std::string, std::size_t> seen_;
};

bool precision_at_most(const PrecisionConfig& c, const PrecisionConfig& cap) {
  return c.weight_bits <= cap.weight_bits && c.activation_bits <= cap.activation_bits;
}

// One layer one width step narrower.
std::vector<std::vector<LayerQuantConfig>> lower_neighbours(const std::vector<LayerQuantConfig>& v) {
  std::vector<std::vector<LayerQuantConfig>> out;
  for (std::size_t k = 0; k < v.size(); ++k) {
    if (v[k].cfg.weight_bits > 2) {
      auto w = v;
      w[k].cfg.weight_bits /= 2;
      out.push_back(std::move(w));
    }
    if (v[k].cfg.activation_bits > 2) {
      auto w = v;
      w[k].cfg.activation_bits /= 2;
      out.push_back(std::move(w));
    }
  }
  return out;
}

// Best-first walk: evaluates the cheapest pending neighbour of any acceptable
// point until nothing is pending or `limit` evaluations are used.
template <class Next>
void descend(Search& s, const LatencyTable& table, const std::vector<std::vector<LayerQuantConfig>>& seeds,
             std::uint64_t limit, Next next, const char* source) {
  using Item = std::tuple<std::uint64_t, std::uint64_t, std::vector<LayerQuantConfig>>;
  auto later = [](const Item& a, const Item& b) {
    return std::tie(std::get<0>(a), std::get<1>(a)) > std::tie(std::get<0>(b), std::get<1>(b));
  };
  std::priority_queue<Item, std::vector<Item>, decltype(later)> pending(later);
  std::uint64_t order = 0;
  auto expand = [&](const std::vector<LayerQuantConfig>& v) {
    for (auto& w : next(v))
      if (!s.seen(w)) pending.emplace(table.network(w).cycles, order++, std::move(w));
  };
  for (const auto& v : seeds) expand(v);
  while (!pending.empty() && s.used() < limit) {
    auto v = std::get<2>(pending.top());
    pending.pop();
    if (s.seen(v)) continue;
    if (s.point(s.eval(v, source)).acceptable) expand(v);
  }
}

}  // namespace

DseResult greedy_dse(const LatencyTable& table, const DseParams& params, double baseline_accuracy,
                     const AccuracyFn& accuracy) {
  params.validate();
  const std::size_t L = table.weighted.size();
  if (L == 0) throw Error(ErrorCode::ConfigError, "network has no weighted layers");
  const std::uint64_t budget = static_cast<std::uint64_t>(params.iterations);
  Search s(table, params, baseline_accuracy, accuracy);

  // Distinct per-layer rate vectors, one per sweep value.
  std::vector<std::vector<double>> sweeps;
  for (double p : params.rates()) {
    std::vector<double> rv(L, p);
    if (!params.prune_classifier) rv.back() = 0.0;
    if (std::find(sweeps.begin(), sweeps.end(), rv) == sweeps.end()) sweeps.push_back(rv);
  }

  // The per-layer pass, when on, gets a share like one more sweep.
  const std::size_t stages = sweeps.size() + (params.per_layer_pruning ? 1 : 0);
  for (std::size_t si = 0; si < sweeps.size(); ++si) {
    const auto& rv = sweeps[si];
    const std::uint64_t share = (budget - std::min<std::uint64_t>(budget, s.used())) / (stages - si);
    const std::uint64_t limit = s.used() + std::max<std::uint64_t>(share, 1);
    if (s.used() >= budget) break;

    std::vector<LayerQuantConfig> cur(L);
    for (std::size_t k = 0; k < L; ++k) {
      cur[k].pruning_rate = rv[k];
      std::vector<PrecisionConfig> order(isa::all_configs().begin(), isa::all_configs().end());
      std::stable_sort(order.begin(), order.end(), [&](const PrecisionConfig& a, const PrecisionConfig& b) {
        const auto ca = table.entry(k, {a, 0, 0, rv[k]}).cycles, cb = table.entry(k, {b, 0, 0, rv[k]}).cycles;
        if (ca != cb) return ca < cb;
        if (a.weight_bits != b.weight_bits) return a.weight_bits < b.weight_bits;
        return a.activation_bits < b.activation_bits;
      });
      cur[k].cfg = order[order.size() / 2];
    }

    bool ok = s.point(s.eval(cur, "greedy")).acceptable;
    while (!ok && s.used() < limit) {
      std::size_t best = L;
      for (std::size_t k = 0; k < L; ++k) {
        if (maxed(cur[k].cfg)) continue;
        if (best == L || table.entry(k, cur[k]).cycles < table.entry(best, cur[best]).cycles) best = k;
      }
      if (best == L) break;
      cur[best].cfg = higher(cur[best].cfg);
      ok = s.point(s.eval(cur, "greedy")).acceptable;
    }
    if (!ok) continue;

    // Restricted exploration below the accepted configuration: descend
    // from acceptable points first, then sweep what is left by cycles.
    descend(s, table, {cur}, limit, [](const std::vector<LayerQuantConfig>& v) { return lower_neighbours(v); },
            "greedy");
    std::vector<std::vector<PrecisionConfig>> options(L);
    for (std::size_t k = 0; k < L; ++k)
      for (const auto& c : isa::all_configs())
        if (precision_at_most(c, cur[k].cfg)) options[k].push_back(c);
    std::vector<std::pair<std::uint64_t, std::vector<LayerQuantConfig>>> cands;
    std::vector<std::size_t> idx(L, 0);
    for (;;) {
      std::vector<LayerQuantConfig> v = cur;
      for (std::size_t k = 0; k < L; ++k) v[k].cfg = options[k][idx[k]];
      if (!s.seen(v)) cands.emplace_back(table.network(v).cycles, std::move(v));
      std::size_t k = 0;
      while (k < L && ++idx[k] == options[k].size()) idx[k++] = 0;
      if (k == L) break;
    }
    std::stable_sort(cands.begin(), cands.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
    for (const auto& c : cands) {
      if (s.used() >= limit) break;
      s.eval(c.second, "greedy");
    }
  }

  if (params.per_layer_pruning) {
    // Single-layer rate steps (and precision steps) from every accepted point.
    const auto rates = params.rates();
    std::vector<std::vector<LayerQuantConfig>> seeds;
    for (std::size_t i = 0; i < s.used(); ++i)
      if (s.point(i).acceptable) seeds.push_back(s.point(i).configs);
    const std::size_t prunable = params.prune_classifier ? L : L - 1;
    descend(s, table, seeds, budget,
            [&](const std::vector<LayerQuantConfig>& v) {
              auto out = lower_neighbours(v);
              for (std::size_t k = 0; k < prunable; ++k) {
                const std::size_t ri = table.rate_index(v[k].pruning_rate);
                if (ri + 1 >= rates.size()) continue;
                auto w = v;
                w[k].pruning_rate = rates[ri + 1];
                out.push_back(std::move(w));
              }
              return out;
            },
            "per-layer");
  }

  std::vector<LayerQuantConfig> full(L);
  return s.finish(true, full);
}

DseResult exhaustive_dse(const LatencyTable& table, const DseParams& params, double baseline_accuracy,
                         const AccuracyFn& accuracy, std::uint64_t max_evaluations) {
  params.validate();
  const std::size_t L = table.weighted.size();
  if (L == 0) throw Error(ErrorCode::ConfigError, "network has no weighted layers");
  if (L > 4) throw Error(ErrorCode::BudgetExceeded, "exhaustive search is limited to four weighted layers");
  const auto rates = params.rates();
  const std::uint64_t per_layer = 9 * rates.size();
  std::uint64_t total = 1;
  for (std::size_t k = 0; k < L; ++k) {
    total *= per_layer;
    if (total > max_evaluations)
      throw Error(ErrorCode::BudgetExceeded, "exhaustive search needs more than " +
                                                 std::to_string(max_evaluations) + " evaluations");
  }
  Search s(table, params, baseline_accuracy, accuracy);
  std::vector<std::size_t> idx(L, 0);
  std::vector<LayerQuantConfig> v(L);
  for (;;) {
    for (std::size_t k = 0; k < L; ++k) {
      v[k].cfg = isa::all_configs()[idx[k] % 9];
      v[k].pruning_rate = rates[idx[k] / 9];
    }
    s.eval(v, "exhaustive");
    std::size_t k = 0;
    while (k < L && ++idx[k] == per_layer) idx[k++] = 0;
    if (k == L) break;
  }
  return s.finish(false, v);
}

std::vector<ParetoPoint> pareto_front(std::span<const ParetoPoint> points) {
  std::vector<std::size_t> order(points.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (points[a].total_cycles != points[b].total_cycles) return points[a].total_cycles < points[b].total_cycles;
    return points[a].accuracy > points[b].accuracy;
  });
  std::vector<ParetoPoint> front;
  for (std::size_t i : order)
    if (front.empty() || points[i].accuracy > front.back().accuracy) front.push_back(points[i]);
  return front;
}

double hypervolume(std::span<const ParetoPoint> front, double ref_accuracy, double ref_cycles) {
  for (const auto& p : front)
    if (p.accuracy < ref_accuracy || static_cast<double>(p.total_cycles) > ref_cycles)
      throw Error(ErrorCode::InvalidReference, "reference point is not dominated by every front point");
  const auto f = pareto_front(front);
  double area = 0.0;
  for (std::size_t i = 0; i < f.size(); ++i) {
    const double next = i + 1 < f.size() ? static_cast<double>(f[i + 1].total_cycles) : ref_cycles;
    area += (f[i].accuracy - ref_accuracy) * (next - static_cast<double>(f[i].total_cycles));
  }
  return area;
}

std::string config_string(std::span<const LayerQuantConfig> configs) {
  std::ostringstream os;
  for (std::size_t k = 0; k < configs.size(); ++k) {
    if (k) os << ';';
    os << configs[k].cfg.name() << '@' << configs[k].pruning_rate;
  }
  return os.str();
}

void write_points_csv(const std::filesystem::path& path, std::span<const ParetoPoint> points) {
  std::ostringstream os;
  os << "index,source,accuracy,total_cycles,loads,acceptable,configs\n";
  os.precision(6);
  for (std::size_t i = 0; i < points.size(); ++i) {
    const auto& p = points[i];
    os << i << ',' << p.source << ',' << std::fixed << p.accuracy << ',' << p.total_cycles << ',' << p.loads << ','
       << (p.acceptable ? 1 : 0) << ',' << config_string(p.configs) << '\n';
  }
  write_file_atomic(path, os.str());
}

}  // namespace marvin::dse
