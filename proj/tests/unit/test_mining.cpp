#include <doctest.h>

#include <set>

#include "../oracles/oracles.hpp"
#include "helpers.hpp"
#include "rivlpr/mining.hpp"
#include "rivlpr/synthetic.hpp"

using namespace rivlpr;

namespace {

SyntheticSpec small_world() {
  SyntheticSpec spec;
  spec.sensor.width = 448;
  spec.sensor.height = 42;
  spec.sensor.max_range = 80;
  spec.scans_per_session = 12;
  spec.sessions = 2;
  return spec;
}

const std::vector<SyntheticSession>& sessions() {
  static const auto s = make_sessions(small_world());
  return s;
}

}  // namespace

TEST_CASE("overlap ratio threshold") {
  RivConfig cfg;
  cfg.width = 14;
  cfg.height = 14;
  RivImage a(14, 14), b(14, 14);
  Reprojection r;
  r.source_width = 14;
  r.source_pixel.assign(196, -1);
  int filled = 0;
  for (int v = 0; v < 14; ++v)
    for (int u = 0; u < 14; ++u) {
      const std::size_t pix = static_cast<std::size_t>(v) * 14 + u;
      a.valid[pix] = 1;
      a.at(v, u, 1) = 0.5f;
      if (filled < 90) {
        b.valid[pix] = 1;
        b.at(v, u, 1) = 0.5f;
        r.source_pixel[pix] = static_cast<int>(pix);
        ++filled;
      }
    }
  r.image = b;
  MiningConfig mc;
  CHECK(mine_positives(a, r, {1, 1}, mc).empty());
  mc.rho_valid = 0.45;
  auto got = mine_positives(a, r, {1, 1}, mc);
  REQUIRE(got.size() == 1);
  CHECK(got[0].overlap == 90);
  CHECK(got[0].mean_abs_residual == 0.0);
}

TEST_CASE("median absolute deviation test") {
  // d = r_a - r_b in range-channel units; build residuals 1, 2, 3 (scaled by 1/80)
  RivImage a(14, 14), b(14, 14);
  Reprojection r;
  r.source_width = 14;
  r.source_pixel.assign(196, 0);
  for (int v = 0; v < 14; ++v)
    for (int u = 0; u < 14; ++u) {
      const std::size_t pix = static_cast<std::size_t>(v) * 14 + u;
      a.valid[pix] = b.valid[pix] = 1;
      a.at(v, u, 1) = 0.75f;
      b.at(v, u, 1) = 0.75f - static_cast<float>((pix % 3) + 1) / 64.0f;
    }
  r.image = b;
  auto got = mine_positives(a, r, {1, 1}, MiningConfig{});
  REQUIRE(got.size() == 1);
  // median of d is 2/64, MAD 1/64 -> tau = 5/64; mean |d| close to 2/64
  CHECK(got[0].threshold == doctest::Approx(5.0 / 64).epsilon(1e-6));
  CHECK(got[0].mean_abs_residual == doctest::Approx(2.0 / 64).epsilon(1e-2));
}

TEST_CASE("negative admissibility") {
  MiningConfig mc;
  GridShape g{9, 73};
  CHECK(cyclic_column_distance(71, 1, 73) == 3);
  CHECK_FALSE(admissible_negative(0 * 73 + 1, 0 * 73 + 71, g, mc));
  CHECK(admissible_negative(3 * 73 + 5, 0 * 73 + 5, g, mc));
  CHECK_FALSE(admissible_negative(2 * 73 + 5, 0 * 73 + 5, g, mc));
  CHECK(admissible_negative(0 * 73 + 25, 0 * 73 + 5, g, mc));
  auto none = mine_negatives({0}, {1, 1}, mc, 1);
  CHECK(none.per_positive[0].empty());
  CHECK_FALSE(none.all_found);
}

TEST_CASE("negatives respect the floor and the cap") {
  MiningConfig mc;
  mc.max_negatives = 20;
  GridShape g{9, 73};
  std::vector<int> pos = {0, 72, 300, 500, 656};
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    auto s = mine_negatives(pos, g, mc, seed);
    for (std::size_t k = 0; k < pos.size(); ++k) {
      CHECK(s.per_positive[k].size() == 20);
      std::set<int> uniq(s.per_positive[k].begin(), s.per_positive[k].end());
      CHECK(uniq.size() == 20);
      for (int n : s.per_positive[k]) {
        const int dr = std::abs(n / 73 - pos[k] / 73);
        const int dc = std::abs(n % 73 - pos[k] % 73);
        CHECK((dr >= 3 || std::min(dc, 73 - dc) >= 20));
      }
    }
    CHECK(mine_negatives(pos, g, mc, seed).per_positive == s.per_positive);
  }
}

TEST_CASE("identity reprojection and self pair") {
  const auto& ss = sessions();
  const RivConfig& cfg = small_world().sensor;
  const Scan& a = ss[0].scans[0];
  auto img = project_scan(a, cfg);
  CHECK(reproject(a, RigidTransform::identity(), cfg).image == img);

  MiningConfig mc;
  mc.v_dist = 2;
  mc.h_dist = 8;
  auto res = mine_pair(a, a, ss[0].true_poses[0], ss[0].true_poses[0], cfg, mc, 3);
  REQUIRE(res.status == MiningStatus::kOk);
  const GridShape g = patch_grid(img);
  int full = 0;
  for (int p = 0; p < g.count(); ++p) {
    bool all = true;
    for (int v = (p / g.cols) * 14; v < (p / g.cols + 1) * 14; ++v)
      for (int u = (p % g.cols) * 14; u < (p % g.cols + 1) * 14; ++u) all &= img.is_valid(v, u);
    full += all;
  }
  int fully_valid_found = 0;
  for (const auto& pp : res.pairs.positives) {
    CHECK(pp.a == pp.b);
    fully_valid_found += 1;
  }
  CHECK(fully_valid_found >= std::min(full, mc.max_positives));
}

TEST_CASE("transform out of view gives an empty reprojection") {
  const auto& ss = sessions();
  auto r = reproject(ss[0].scans[0], RigidTransform::from_yaw(0, {500, 0, 0}), small_world().sensor);
  CHECK(r.image.valid_count() == 0);
}

TEST_CASE("mined positives equal the exhaustive oracle") {
  const auto& ss = sessions();
  const RivConfig& cfg = small_world().sensor;
  MiningConfig mc;
  int checked = 0;
  for (int i = 0; i + 1 < static_cast<int>(ss[0].scans.size()); i += 3) {
    const Scan& a = ss[0].scans[i];
    const Scan& b = ss[1].scans[i];
    const auto rel = ss[0].true_poses[i].transform().inverse() * ss[1].true_poses[i].transform();
    auto reproj = reproject(b, rel, cfg);
    auto got = mine_positives(project_scan(a, cfg), reproj, patch_grid(reproj.image), mc);
    std::set<std::pair<int, int>> lib;
    for (const auto& c : got) lib.insert({c.pair.a, c.pair.b});
    auto want = oracle::positives(a, b, rel, cfg, mc);
    CHECK(lib == want);
    CHECK(!want.empty());
    ++checked;
  }
  CHECK(checked == 4);
}

TEST_CASE("scans too far apart are refused") {
  const auto& ss = sessions();
  Pose far = ss[0].true_poses[0];
  far.translation.x() += 50;
  CHECK_THROWS_AS(mine_pair(ss[0].scans[0], ss[0].scans[1], ss[0].true_poses[0], far, small_world().sensor, MiningConfig{}, 1),
                  Error);
}

TEST_CASE("mining is deterministic and symmetric in roles") {
  const auto& ss = sessions();
  const RivConfig& cfg = small_world().sensor;
  MiningConfig mc;
  mc.v_dist = 2;
  mc.h_dist = 8;
  auto x = mine_pair(ss[0].scans[2], ss[0].scans[3], ss[0].poses[2], ss[0].poses[3], cfg, mc, 9);
  auto y = mine_pair(ss[0].scans[2], ss[0].scans[3], ss[0].poses[2], ss[0].poses[3], cfg, mc, 9);
  CHECK(x.pairs == y.pairs);
  REQUIRE(!x.pairs.positives.empty());
  for (std::size_t k = 0; k < x.pairs.positives.size(); ++k) {
    for (int n : x.pairs.negatives_a[k]) CHECK(admissible_negative(n, x.pairs.positives[k].a, x.pairs.grid_a, mc));
    for (int n : x.pairs.negatives_b[k]) CHECK(admissible_negative(n, x.pairs.positives[k].b, x.pairs.grid_b, mc));
  }
}

TEST_CASE("pair file round trip") {
  PatchPairSet s;
  s.source_a = "a";
  s.source_b = "b b";
  s.grid_a = s.grid_b = {3, 32};
  s.positives = {{1, 2}, {40, 41}};
  s.negatives_a = {{5, 70}, {}};
  s.negatives_b = {{90}, {3, 4, 5}};
  s.seed = 12345678901234ull;
  s.config.mad_k = 2.5;
  const std::string text = encode_pairs(s);
  CHECK(decode_pairs(text) == s);
  CHECK(encode_pairs(decode_pairs(text)) == text);
  CHECK_THROWS_AS(decode_pairs("POS 1 2\n"), Error);
  CHECK_THROWS_AS(decode_pairs(text + "NEGA 9 1\n"), Error);
}
