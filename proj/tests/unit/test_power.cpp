#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "marvin/error.hpp"
#include "marvin/fileio.hpp"
#include "marvin/kernels.hpp"
#include "marvin/power.hpp"

using namespace marvin;
using namespace marvin::power;

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

sim::ExecutionReport report(std::uint64_t macs, std::uint64_t cycles) {
  sim::ExecutionReport r;
  r.mac_count = macs;
  r.total_cycles = cycles;
  return r;
}

sim::ExecutionReport conv_run(const isa::PrecisionConfig& cfg) {
  const auto spec = kernels::conv2d(16, 16, 8, 8, 3, 1, 1, kernels::Activation::ReLU);
  kernels::LayerParams params;
  // Weights in [-1, 1] fit every width.
  for (std::size_t i = 0; i < spec.weight_count(); ++i) params.weights.push_back(static_cast<int>(i % 3) - 1);
  params.bias.assign(16, 3);
  params.shift = 4;
  std::vector<std::int32_t> in(spec.input_size());
  for (std::size_t i = 0; i < in.size(); ++i) in[i] = static_cast<std::int32_t>(i % (1u << cfg.activation_bits));
  const auto lp = kernels::build_layer_program(spec, params, kernels::Variant::Packed, cfg,
                                               {false, cfg.activation_bits}, in);
  auto st = sim::initial_state(lp.program);
  return sim::run(lp.program, st);
}

}  // namespace

TEST_CASE("dynamic power is exactly quadratic in voltage") {
  const auto p = default_power_params();
  CHECK(dynamic_power(p, 0.7) / dynamic_power(p, 1.0) == doctest::Approx(0.49).epsilon(1e-12));
  for (double a = 0.6; a <= 1.0; a += 0.05)
    for (double b = 0.6; b <= 1.0; b += 0.05)
      CHECK(dynamic_power(p, a) / dynamic_power(p, b) == doctest::Approx((a / b) * (a / b)).epsilon(1e-12));
}

TEST_CASE("default parameters reproduce the calibration targets") {
  const auto p = default_power_params();
  const double ratio = total_power(p, 0.7) / total_power(p, 1.0);
  CHECK(ratio == doctest::Approx(0.42).epsilon(1e-9));
  CHECK(static_power(p, 1.0) / total_power(p, 1.0) == doctest::Approx(0.20));
  CHECK(total_power(p, 0.8) == doctest::Approx(2.03));
  CHECK(p.static_exponent == doctest::Approx(std::log(0.14) / std::log(0.7)));
  CHECK(code_of([] { calibrate_static_exponent(0.2, 0.7, 0.3); }) == ErrorCode::InvalidConfig);
}

TEST_CASE("total power rises with voltage, frequency, activity and capacitance") {
  const auto p = default_power_params();
  for (double v = 0.6; v < 1.0; v += 0.01) CHECK(total_power(p, v + 0.01) > total_power(p, v));
  auto f2 = p;
  f2.frequency_hz *= 2;
  CHECK(dynamic_power(f2, 0.8) == doctest::Approx(2 * dynamic_power(p, 0.8)));
  CHECK(static_power(f2, 0.8) == static_power(p, 0.8));
  auto a2 = p;
  a2.activity *= 1.1;
  CHECK(total_power(a2, 0.8) > total_power(p, 0.8));
  auto c2 = p;
  c2.capacitance_f *= 1.1;
  CHECK(total_power(c2, 0.8) > total_power(p, 0.8));
  CHECK(code_of([&] { total_power(p, 0.59); }) == ErrorCode::VoltageOutOfRange);
  CHECK(code_of([&] { total_power(p, 1.01); }) == ErrorCode::VoltageOutOfRange);
}

TEST_CASE("minimum valid voltage from slack samples") {
  CHECK(min_valid_voltage(default_slack_table()) == 0.62);
  // Endpoints alone interpolate to 0.641 V.
  const SlackTable ends{{{0.60, -121.0}, {1.00, 1048.0}}};
  CHECK(min_valid_voltage(ends) == 0.65);
  const SlackTable positive{{{0.60, 10.0}, {1.00, 1048.0}}};
  CHECK(code_of([&] { min_valid_voltage(positive); }) == ErrorCode::NoSignChange);
  const SlackTable negative{{{0.60, -10.0}, {1.00, -1.0}}};
  CHECK(code_of([&] { min_valid_voltage(negative); }) == ErrorCode::NoSignChange);
  const SlackTable falling{{{0.60, 10.0}, {1.00, -1.0}}};
  CHECK(code_of([&] { min_valid_voltage(falling); }) == ErrorCode::InvalidConfig);
}

TEST_CASE("minimum valid voltage is monotone in a uniform slack offset") {
  double prev = 0.0;
  for (double offset = 100.0; offset >= -900.0; offset -= 25.0) {
    auto t = default_slack_table();
    for (auto& pt : t.points) pt.second += offset;
    if (t.points.front().second >= 0.0 || t.points.back().second < 0.0) continue;
    const double v = min_valid_voltage(t);
    CHECK(v >= prev);
    prev = v;
  }
}

TEST_CASE("efficiency counts a MAC as two operations") {
  const auto p = default_power_params();
  const auto r = report(1'000'000, 250'000);  // 1 ms at 250 MHz
  const auto e = efficiency(r, p, 1.0);
  CHECK(e.gops == doctest::Approx(2.0));
  CHECK(e.gops_per_watt == doctest::Approx(2.0 / (total_power(p, 1.0) / 1000.0)));
  const auto half = efficiency(report(1'000'000, 125'000), p, 1.0);
  CHECK(half.gops_per_watt == doctest::Approx(2 * e.gops_per_watt));
  const double gain = efficiency(r, p, 0.7).gops_per_watt / e.gops_per_watt;
  CHECK(gain == doctest::Approx(1.0 / 0.42));
  CHECK(std::fabs(gain - 2.38) <= 0.1);
  CHECK(efficiency(r, p, 0.7).gops == e.gops);
  CHECK(code_of([&] { efficiency(r, p, 0.61); }) == ErrorCode::InvalidVoltage);
}

TEST_CASE("narrow packed convs are more efficient at equal voltage") {
  const auto p = default_power_params();
  const auto w8 = efficiency(conv_run({8, 8}), p, 0.8);
  const auto w2 = efficiency(conv_run({2, 2}), p, 0.8);
  CHECK(w2.gops_per_watt > w8.gops_per_watt);
  CHECK(w2.gops_per_watt / w8.gops_per_watt > 2.0);
}

TEST_CASE("voltage sweep samples nine points and flags the invalid one") {
  const auto p = default_power_params();
  const auto sweep = voltage_sweep(report(1000, 1000), p, default_slack_table());
  REQUIRE(sweep.size() == 9);
  CHECK(sweep.front().voltage == doctest::Approx(0.60));
  CHECK(sweep.back().voltage == doctest::Approx(1.00));
  CHECK_FALSE(sweep.front().valid);
  for (std::size_t i = 1; i < sweep.size(); ++i) {
    CHECK(sweep[i].valid);
    CHECK(sweep[i].gops == sweep[0].gops);
    CHECK(sweep[i].p_total_mw == doctest::Approx(sweep[i].p_static_mw + sweep[i].p_dynamic_mw));
    if (i > 1) CHECK(sweep[i].gops_per_watt < sweep[i - 1].gops_per_watt);
  }
  const auto fine = voltage_sweep(report(1, 1), p, default_slack_table(), 0.01);
  CHECK(fine.size() == 41);
  CHECK(fine[2].min_valid);
  const auto marked = voltage_sweep(report(1000, 1000), p, default_slack_table(), 0.05, true);
  REQUIRE(marked.size() == 10);
  CHECK(marked[1].voltage == doctest::Approx(0.62));
  CHECK(marked[1].min_valid);
  // Peak efficiency among valid samples sits at the minimum valid voltage.
  for (const auto& s : marked)
    if (s.valid && !s.min_valid) CHECK(s.gops_per_watt < marked[1].gops_per_watt);
}

TEST_CASE("power config files parse with line-numbered errors") {
  const auto cfg = parse_power_config("# comment\nactivity = 0.3\nfrequency_hz 1e8\n\nslack 0.6 -5\nslack 1.0 5\n");
  CHECK(cfg.params.activity == 0.3);
  CHECK(cfg.params.frequency_hz == 1e8);
  CHECK(cfg.slack.points.size() == 2);
  CHECK(min_valid_voltage(cfg.slack) == 0.80);
  const auto dflt = parse_power_config("");
  CHECK(min_valid_voltage(dflt.slack) == 0.62);
  CHECK(dflt.params.static_exponent == default_power_params().static_exponent);

  auto message = [](const std::string& text) {
    try {
      parse_power_config(text);
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::ParseError);
      return std::string(e.what());
    }
    FAIL("expected an error");
    return std::string();
  };
  CHECK(message("activity = 0.3\nvoltage = 2\n").find("line 2") != std::string::npos);
  CHECK(message("\n\nactivity = abc\n").find("line 3") != std::string::npos);
  CHECK(message("activity = -1\n").find("line 1") != std::string::npos);
  CHECK(message("slack 0.6\n").find("line 1") != std::string::npos);
  CHECK(message("slack 0.6 5\nslack 0.7 1\n").find("slack") != std::string::npos);
}

TEST_CASE("sweep csv has one row per voltage") {
  const auto dir = std::filesystem::temp_directory_path() / "marvin_test_power";
  std::filesystem::create_directories(dir);
  const auto sweep = voltage_sweep(report(1000, 1000), default_power_params(), default_slack_table());
  write_sweep_csv(dir / "sweep.csv", sweep);
  const std::string s = read_file(dir / "sweep.csv");
  CHECK(s.rfind("voltage,p_static_mw", 0) == 0);
  CHECK(s.find(",valid,min_valid\n") != std::string::npos);
  CHECK(std::count(s.begin(), s.end(), '\n') == 10);
  CHECK(s.find("\n0.60,") != std::string::npos);
  CHECK(s.find(",0,0\n") != std::string::npos);
}
