#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "ledpose/inference.hpp"
#include "ledpose/rng.hpp"

using namespace ledpose;

namespace {

// Stack with explicit fields; presence drawn positive and normalized jointly.
MultiScaleStack make_stack(int h, int w, const std::vector<double>& scales, int K,
                           std::uint64_t seed) {
  MultiScaleStack st;
  st.h = h;
  st.w = w;
  st.K = K;
  st.scales = scales;
  std::size_t S = scales.size();
  std::size_t n = static_cast<std::size_t>(h) * w;
  Rng rng = Rng::derive(seed, "stack");

  st.presence_logits.assign(S, std::vector<double>(n, 0.0));
  st.p_ms_norm.assign(S, std::vector<double>(n, 0.0));
  st.bearing_u.assign(S, std::vector<double>(n, 1.0));
  st.bearing_v.assign(S, std::vector<double>(n, 0.0));
  st.bearing_c.assign(S, std::vector<double>(n, 1.0));
  st.bearing_s.assign(S, std::vector<double>(n, 0.0));
  st.led_logits.assign(S, std::vector<std::vector<double>>(static_cast<std::size_t>(K),
                                                           std::vector<double>(n, 0.0)));

  double total = 0.0;
  for (auto& m : st.p_ms_norm)
    for (double& v : m) {
      v = rng.u01() + 1e-6;
      total += v;
    }
  for (auto& m : st.p_ms_norm)
    for (double& v : m) v /= total;

  for (std::size_t s = 0; s < S; ++s)
    for (std::size_t i = 0; i < n; ++i) {
      double psi = rng.uniform(-kPi, kPi);
      st.bearing_c[s][i] = std::cos(psi);
      st.bearing_s[s][i] = std::sin(psi);
      st.bearing_u[s][i] = 2.0 * st.bearing_c[s][i];
      st.bearing_v[s][i] = 2.0 * st.bearing_s[s][i];
      for (int k = 0; k < K; ++k)
        st.led_logits[s][static_cast<std::size_t>(k)][i] = rng.normal();
    }
  return st;
}

CameraIntrinsics intr_for(int width, int height) {
  return {100.0, 100.0, width / 2.0, height / 2.0, width, height};
}

void clear_presence(MultiScaleStack& st) {
  for (auto& m : st.p_ms_norm)
    for (double& v : m) v = 0.0;
}

std::pair<int, int> argmax_cell(const MultiScaleStack& st) {
  double best = -1.0;
  int row = -1, col = -1;
  for (int y = 0; y < st.h; ++y)
    for (int x = 0; x < st.w; ++x) {
      double total = 0.0;
      for (int s = 0; s < st.S(); ++s)
        total += st.p_ms_norm[static_cast<std::size_t>(s)][static_cast<std::size_t>(y) * st.w + x];
      if (total > best) {
        best = total;
        row = y;
        col = x;
      }
    }
  return {row, col};
}

struct OracleReadouts {
  double u = 0.0, v = 0.0, psi = 0.0, d = 0.0, raw_max = 0.0;
  std::vector<double> leds;
};

OracleReadouts oracle(const MultiScaleStack& st, const CameraIntrinsics& intr,
                      const Calibration& cal) {
  OracleReadouts out;
  out.leds.assign(static_cast<std::size_t>(st.K), 0.0);
  double rc = 0.0, rs = 0.0;
  for (int k = 0; k < st.K; ++k)
    for (int s = 0; s < st.S(); ++s)
      for (int i = 0; i < st.h; ++i)
        for (int j = 0; j < st.w; ++j) {
          std::size_t ss = static_cast<std::size_t>(s);
          std::size_t x = static_cast<std::size_t>(i) * st.w + j;
          double p = st.p_ms_norm[ss][x];
          double z = st.led_logits[ss][static_cast<std::size_t>(k)][x];
          out.leds[static_cast<std::size_t>(k)] += p / (1.0 + std::exp(-z));
          if (k == 0) {
            out.u += p * (j + 0.5) * intr.width / st.w;
            out.v += p * (i + 0.5) * intr.height / st.h;
            rc += p * st.bearing_c[ss][x];
            rs += p * st.bearing_s[ss][x];
            out.d += cal.d_c * cal.f[ss] * p;
            out.raw_max = std::max(out.raw_max, p);
          }
        }
  out.psi = std::hypot(rc, rs) < 1e-8 ? 0.0 : wrap_angle(std::atan2(rs, rc));
  return out;
}

}  // namespace

TEST_CASE("localize one-hot example on an 80x45 grid") {
  MultiScaleStack st = make_stack(45, 80, {1.0}, 1, 1);
  clear_presence(st);
  st.p_ms_norm[0][2 * 80 + 5] = 1.0;
  auto [u, v] = localize(st, intr_for(640, 360));
  CHECK(u == doctest::Approx(44.0).epsilon(1e-12));
  CHECK(v == doctest::Approx(20.0).epsilon(1e-12));
}

TEST_CASE("localize uniform presence gives the image center") {
  MultiScaleStack st = make_stack(6, 8, {1.0, 0.5}, 1, 2);
  double val = 1.0 / (2 * 6 * 8);
  for (auto& m : st.p_ms_norm)
    for (double& v : m) v = val;
  auto [u, v] = localize(st, intr_for(320, 176));
  CHECK(u == doctest::Approx(160.0).epsilon(1e-9));
  CHECK(v == doctest::Approx(88.0).epsilon(1e-9));
}

TEST_CASE("localize mass split between two cells lands at the midpoint") {
  MultiScaleStack st = make_stack(4, 10, {1.0}, 1, 3);
  clear_presence(st);
  st.p_ms_norm[0][1 * 10 + 2] = 0.5;
  st.p_ms_norm[0][3 * 10 + 8] = 0.5;
  auto [u, v] = localize(st, intr_for(100, 40));
  CHECK(u == doctest::Approx(0.5 * (2.5 + 8.5) * 10.0).epsilon(1e-12));
  CHECK(v == doctest::Approx(0.5 * (1.5 + 3.5) * 10.0).epsilon(1e-12));
}

TEST_CASE("bearing readout: constant field, one-hot, wraparound") {
  MultiScaleStack st = make_stack(3, 3, {1.0}, 1, 4);
  for (int i = 0; i < 9; ++i) {
    st.bearing_c[0][i] = std::cos(kPi / 3.0);
    st.bearing_s[0][i] = std::sin(kPi / 3.0);
  }
  CHECK(estimate_bearing(st) == doctest::Approx(kPi / 3.0).epsilon(1e-12));

  clear_presence(st);
  st.p_ms_norm[0][4] = 1.0;
  st.bearing_c[0][4] = std::cos(-2.1);
  st.bearing_s[0][4] = std::sin(-2.1);
  CHECK(estimate_bearing(st) == doctest::Approx(-2.1).epsilon(1e-12));

  clear_presence(st);
  st.p_ms_norm[0][0] = 0.5;
  st.p_ms_norm[0][1] = 0.5;
  st.bearing_c[0][0] = std::cos(kPi - 0.1);
  st.bearing_s[0][0] = std::sin(kPi - 0.1);
  st.bearing_c[0][1] = std::cos(-kPi + 0.1);
  st.bearing_s[0][1] = std::sin(-kPi + 0.1);
  CHECK(circular_error(estimate_bearing(st), kPi) < 1e-9);
}

TEST_CASE("bearing flags a vanishing resultant") {
  MultiScaleStack st = make_stack(2, 2, {1.0}, 1, 5);
  clear_presence(st);
  st.p_ms_norm[0][0] = 0.5;
  st.p_ms_norm[0][1] = 0.5;
  st.bearing_c[0][0] = 1.0;
  st.bearing_s[0][0] = 0.0;
  st.bearing_c[0][1] = -1.0;
  st.bearing_s[0][1] = 0.0;
  bool low = false;
  CHECK(estimate_bearing(st, &low) == 0.0);
  CHECK(low);
}

TEST_CASE("distance examples from the calibration convention") {
  Calibration cal;
  cal.f = {1.0, 0.5, 0.25};

  MultiScaleStack st = make_stack(4, 4, {1.0, 0.5, 0.25}, 1, 6);
  clear_presence(st);

  cal.d_c = 1.0;
  st.p_ms_norm[1][5] = 1.0;
  CHECK(estimate_distance(st, cal) == doctest::Approx(0.5).epsilon(1e-12));

  clear_presence(st);
  cal.d_c = 2.0;
  st.p_ms_norm[0][3] = 1.0;
  CHECK(estimate_distance(st, cal) == doctest::Approx(2.0).epsilon(1e-12));

  clear_presence(st);
  cal.d_c = 1.0;
  st.p_ms_norm[0][0] = 0.25;
  st.p_ms_norm[0][7] = 0.25;
  st.p_ms_norm[1][2] = 0.5;
  CHECK(estimate_distance(st, cal) == doctest::Approx(0.75).epsilon(1e-12));
}

TEST_CASE("distance readout is monotone in the scale shift") {
  Calibration cal;
  cal.f = {1.0, 0.5};
  cal.d_c = 3.0;
  MultiScaleStack st = make_stack(3, 3, {1.0, 0.5}, 1, 7);
  double before = estimate_distance(st, cal);

  double delta = st.p_ms_norm[0][4] * 0.5;
  st.p_ms_norm[0][4] -= delta;
  st.p_ms_norm[1][4] += delta;
  CHECK(estimate_distance(st, cal) < before);
}

TEST_CASE("estimate_distance validates the calibration") {
  MultiScaleStack st = make_stack(2, 2, {1.0, 0.5}, 1, 8);
  Calibration missing;
  CHECK_THROWS_AS(estimate_distance(st, missing), std::invalid_argument);
  Calibration short_f;
  short_f.d_c = 1.0;
  short_f.f = {1.0};
  CHECK_THROWS_AS(estimate_distance(st, short_f), std::invalid_argument);
}

TEST_CASE("LED readout: constant and one-hot cases") {
  MultiScaleStack st = make_stack(3, 4, {1.0, 0.5}, 3, 9);
  for (auto& s : st.led_logits)
    for (auto& m : s)
      for (double& v : m) v = 0.0;
  std::vector<double> probs = read_led_states(st);
  for (double p : probs) CHECK(p == doctest::Approx(0.5).epsilon(1e-12));

  clear_presence(st);
  st.p_ms_norm[1][6] = 1.0;
  st.led_logits[1][0][6] = 2.0;
  st.led_logits[1][1][6] = -1.0;
  st.led_logits[1][2][6] = 0.25;
  probs = read_led_states(st);
  CHECK(probs[0] == doctest::Approx(1.0 / (1.0 + std::exp(-2.0))).epsilon(1e-12));
  CHECK(probs[1] == doctest::Approx(1.0 / (1.0 + std::exp(1.0))).epsilon(1e-12));
  CHECK(probs[2] == doctest::Approx(1.0 / (1.0 + std::exp(-0.25))).epsilon(1e-12));
}

TEST_CASE("presence max raw values: uniform, one-hot, two peaks") {
  MultiScaleStack st = make_stack(4, 5, {1.0, 0.5}, 1, 10);
  int n = 2 * 4 * 5;
  for (auto& m : st.p_ms_norm)
    for (double& v : m) v = 1.0 / n;
  PresenceScore ps = detect_presence_max(st);
  CHECK(ps.raw == doctest::Approx(1.0 / n).epsilon(1e-12));
  CHECK(ps.score == doctest::Approx(0.0).scale(1.0).epsilon(1e-12));

  clear_presence(st);
  st.p_ms_norm[0][7] = 1.0;
  ps = detect_presence_max(st);
  CHECK(ps.raw == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(ps.score == doctest::Approx(1.0).epsilon(1e-12));

  clear_presence(st);
  st.p_ms_norm[0][2] = 0.5;
  st.p_ms_norm[1][9] = 0.5;
  CHECK(detect_presence_max(st).raw == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("entropy confidence examples and symmetry") {
  CHECK(detect_presence_entropy({0.5, 0.5, 0.5, 0.5}) ==
        doctest::Approx(0.0).scale(1.0).epsilon(1e-12));
  CHECK(detect_presence_entropy({0.0, 1.0, 0.0, 1.0}) == doctest::Approx(1.0).epsilon(1e-9));

  double h075 = -(0.75 * std::log2(0.75) + 0.25 * std::log2(0.25));
  CHECK(detect_presence_entropy({0.75, 0.75, 0.75, 0.75}) ==
        doctest::Approx(1.0 - h075).epsilon(1e-12));
  CHECK(1.0 - h075 == doctest::Approx(0.1887).epsilon(1e-3));

  Rng rng = Rng::derive(11, "sym");
  for (int t = 0; t < 32; ++t) {
    std::vector<double> p(4), q(4);
    for (int k = 0; k < 4; ++k) {
      p[static_cast<std::size_t>(k)] = rng.u01();
      q[static_cast<std::size_t>(k)] = 1.0 - p[static_cast<std::size_t>(k)];
    }
    CHECK(detect_presence_entropy(p) == doctest::Approx(detect_presence_entropy(q)).epsilon(1e-9));
  }
}

TEST_CASE("readouts match quadruple-loop oracles on random instances") {
  Rng rng = Rng::derive(12, "instances");
  for (int trial = 0; trial < 120; ++trial) {
    int h = 2 + static_cast<int>(rng.uniform_int(7));
    int w = 2 + static_cast<int>(rng.uniform_int(9));
    int K = 1 + static_cast<int>(rng.uniform_int(6));
    MultiScaleStack st = make_stack(h, w, {1.0, 0.5, 0.25}, K, 1000 + trial);
    CameraIntrinsics intr = intr_for(16 * w, 16 * h);
    Calibration cal;
    cal.f = {1.0, 0.5, 0.25};
    cal.d_c = 0.5 + rng.u01() * 4.0;

    OracleReadouts ref = oracle(st, intr, cal);

    auto [u, v] = localize(st, intr);
    CHECK(std::abs(u - ref.u) < 1e-10);
    CHECK(std::abs(v - ref.v) < 1e-10);
    CHECK(std::abs(estimate_bearing(st) - ref.psi) < 1e-10);
    CHECK(std::abs(estimate_distance(st, cal) - ref.d) < 1e-10);
    CHECK(std::abs(detect_presence_max(st).raw - ref.raw_max) < 1e-10);
    std::vector<double> leds = read_led_states(st);
    for (int k = 0; k < K; ++k)
      CHECK(std::abs(leds[static_cast<std::size_t>(k)] -
                     ref.leds[static_cast<std::size_t>(k)]) < 1e-10);
  }
}

TEST_CASE("localize is invariant to a constant logit shift") {
  Rng rng = Rng::derive(13, "shift");
  std::vector<OutputMaps> native;
  int hh = 6, ww = 8;
  double sc = 1.0;
  for (int s = 0; s < 3; ++s) {
    RawMaps raw;
    raw.h = hh;
    raw.w = ww;
    raw.scale = sc;
    std::size_t n = static_cast<std::size_t>(hh) * ww;
    raw.presence.resize(n);
    raw.bearing_a.assign(n, 1.0);
    raw.bearing_b.assign(n, 0.2);
    raw.led_logits.assign(2, std::vector<double>(n, 0.0));
    for (auto& vv : raw.presence) vv = rng.normal();
    native.push_back(normalize_maps(raw));
    hh /= 2;
    ww /= 2;
    sc *= 0.5;
  }
  MultiScaleStack a = build_stack(native);
  for (auto& om : native)
    for (double& vv : om.presence) vv += 7.25;
  MultiScaleStack b = build_stack(native);

  CameraIntrinsics intr = intr_for(64, 48);
  auto [ua, va] = localize(a, intr);
  auto [ub, vb] = localize(b, intr);
  CHECK(ua == doctest::Approx(ub).epsilon(1e-6));
  CHECK(va == doctest::Approx(vb).epsilon(1e-6));
}

TEST_CASE("extract_robots finds isolated peaks and suppresses neighbors") {
  MultiScaleStack st = make_stack(20, 20, {1.0}, 2, 14);
  for (double& v : st.presence_logits[0]) v = 0.0;
  st.presence_logits[0][5 * 20 + 5] = 10.0;
  st.presence_logits[0][5 * 20 + 16] = 9.0;
  st.presence_logits[0][6 * 20 + 6] = 8.0;  // within the first peak's radius

  ExtractParams params;
  std::vector<MultiScaleStack> robots = extract_robots(st, params);
  REQUIRE(robots.size() == 2);

  CHECK(argmax_cell(robots[0]) == std::pair<int, int>{5, 5});
  CHECK(argmax_cell(robots[1]) == std::pair<int, int>{5, 16});

  for (std::size_t r = 0; r < robots.size(); ++r) {
    double total = 0.0;
    auto [pr, pc] = argmax_cell(robots[r]);
    for (const auto& m : robots[r].p_ms_norm)
      for (int y = 0; y < 20; ++y)
        for (int x = 0; x < 20; ++x) {
          double v = m[static_cast<std::size_t>(y) * 20 + x];
          total += v;
          bool outside =
              std::abs(y - pr) > params.nms_radius || std::abs(x - pc) > params.nms_radius;
          if (outside) CHECK(v == 0.0);
        }
    CHECK(total == doctest::Approx(1.0).epsilon(1e-9));
  }
}

TEST_CASE("extract_robots returns one robot for a single peak") {
  MultiScaleStack st = make_stack(16, 16, {1.0, 0.5}, 1, 15);
  for (auto& m : st.presence_logits)
    for (double& v : m) v = -2.0;
  st.presence_logits[0][8 * 16 + 3] = 6.0;
  std::vector<MultiScaleStack> robots = extract_robots(st);
  REQUIRE(robots.size() == 1);
  CHECK(argmax_cell(robots[0]) == std::pair<int, int>{8, 3});
}

TEST_CASE("extract_robots yields nothing on a constant map") {
  MultiScaleStack st = make_stack(8, 8, {1.0, 0.5}, 1, 16);
  for (auto& m : st.presence_logits)
    for (double& v : m) v = 1.75;
  CHECK(extract_robots(st).empty());
}

TEST_CASE("extract_robots respects max_robots ordering by peak mass") {
  MultiScaleStack st = make_stack(24, 24, {1.0}, 1, 17);
  for (double& v : st.presence_logits[0]) v = 0.0;
  st.presence_logits[0][2 * 24 + 2] = 8.0;
  st.presence_logits[0][2 * 24 + 20] = 10.0;
  st.presence_logits[0][20 * 24 + 2] = 9.0;
  st.presence_logits[0][20 * 24 + 20] = 7.0;

  ExtractParams params;
  params.max_robots = 2;
  std::vector<MultiScaleStack> robots = extract_robots(st, params);
  REQUIRE(robots.size() == 2);
  CHECK(argmax_cell(robots[0]) == std::pair<int, int>{2, 20});
  CHECK(argmax_cell(robots[1]) == std::pair<int, int>{20, 2});
}
