#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include <json.hpp>

#include "../oracles/oracles.hpp"
#include "helpers.hpp"
#include "rivlpr/evaluate.hpp"

using namespace rivlpr;

namespace {

Descriptor unit(Rng& rng, int dim) {
  Vec v(dim);
  for (int i = 0; i < dim; ++i) v(i) = rng.normal();
  return {v.normalized(), true};
}

DescriptorMeta meta_at(const std::string& id, double t, double x, double y = 0) {
  DescriptorMeta m;
  m.id = id;
  m.timestamp = t;
  m.pose.translation = {x, y, 0};
  return m;
}

std::vector<std::vector<float>> rows_of(const DescriptorSet& s) {
  std::vector<std::vector<float>> out(s.count());
  for (std::size_t i = 0; i < s.count(); ++i) out[i].assign(s.rows.begin() + i * s.dim, s.rows.begin() + (i + 1) * s.dim);
  return out;
}

}  // namespace

TEST_CASE("top1 basics") {
  Rng rng(1);
  DescriptorDB db;
  auto d = unit(rng, 8);
  db.add(d, meta_at("a", 0, 0));
  auto hit = retrieve_top1(db, db.row(0));
  REQUIRE(hit);
  CHECK(hit->index == 0);
  CHECK(hit->distance == 0.0);
  CHECK_FALSE(retrieve_top1(db, db.row(0), -1.0).has_value());

  db.add(d, meta_at("b", 1, 0));
  CHECK(retrieve_top1(db, db.row(1))->index == 0);
}

TEST_CASE("top1 equals a linear scan") {
  Rng rng(2);
  for (int t = 0; t < 20; ++t) {
    DescriptorDB db;
    std::vector<double> times;
    for (int i = 0; i < 100; ++i) {
      db.add(unit(rng, 16), meta_at(std::to_string(i), i, 0));
      times.push_back(i);
    }
    auto rows = rows_of(db);
    for (int q = 0; q < 10; ++q) {
      auto d = unit(rng, 16);
      std::vector<float> qf(16);
      for (int k = 0; k < 16; ++k) qf[k] = static_cast<float>(d.values(k));
      Vec qv(16);
      for (int k = 0; k < 16; ++k) qv(k) = qf[k];
      const std::optional<double> cutoff = q % 2 ? std::optional<double>(rng.uniform(0, 100)) : std::nullopt;
      auto got = retrieve_top1(db, qv, cutoff);
      auto want = oracle::top1(rows, times, qf, cutoff);
      REQUIRE(got.has_value() == want.has_value());
      if (got) {
        CHECK(got->index == want->first);
        CHECK(got->distance == want->second);
      }
    }
  }
}

TEST_CASE("recall at one") {
  std::vector<MatchPoses> r = {{{0, 0, 0}, {1, 0, 0}}, {{0, 0, 0}, {20, 0, 0}}, {{5, 5, 0}, {5, 9, 0}}};
  CHECK(recall_at_1(r, 10) == doctest::Approx(2.0 / 3.0));
  r.erase(r.begin() + 1);
  CHECK(recall_at_1(r, 10) == 1.0);
}

TEST_CASE("max f1 sweep") {
  std::vector<ScoredMatch> s = {{0.1, true}, {0.2, false}, {0.3, true}};
  auto f = max_f1(s);
  CHECK(f.f1 == doctest::Approx(0.8));
  CHECK(f.threshold == 0.3);
  REQUIRE(f.curve.size() == 3);
  CHECK(f.curve[0].f1 == doctest::Approx(2.0 / 3.0));
  CHECK(f.curve[1].f1 == doctest::Approx(0.5));

  std::vector<ScoredMatch> one = {{0.7, true}};
  CHECK(max_f1(one).f1 == 1.0);
  std::vector<ScoredMatch> none = {{0.7, false}, {0.8, false}};
  auto z = max_f1(none);
  CHECK(z.f1 == 0.0);
  CHECK_FALSE(z.has_true_match);
}

TEST_CASE("max f1 equals a brute force sweep and survives monotone maps") {
  Rng rng(3);
  for (int t = 0; t < 50; ++t) {
    std::vector<ScoredMatch> s;
    std::vector<double> dist;
    std::vector<bool> ok;
    for (int i = 0; i < 100; ++i) {
      const double d = std::round(rng.uniform(0, 2) * 50) / 50;  // ties on purpose
      const bool c = rng.uniform() < std::exp(-d);
      s.push_back({d, c});
      dist.push_back(d);
      ok.push_back(c);
    }
    auto f = max_f1(s);
    auto o = oracle::max_f1(dist, ok);
    CHECK(f.f1 == o.first);
    CHECK(f.threshold == o.second);

    auto mapped = s;
    for (auto& m : mapped) m.distance = std::exp(3 * m.distance) - 7;
    CHECK(max_f1(mapped).f1 == f.f1);
    std::vector<ScoredMatch> shuffled = s;
    for (int i = 99; i > 0; --i) std::swap(shuffled[i], shuffled[rng.integer(0, i)]);
    CHECK(max_f1(shuffled).f1 == f.f1);
  }
}

TEST_CASE("inter protocol with perfect descriptors") {
  Rng rng(4);
  DescriptorDB db;
  for (int i = 0; i < 30; ++i) db.add(unit(rng, 12), meta_at(std::to_string(i), i, i * 5.0));
  EvalProtocol p;
  auto r = run_protocol(db, db, p);
  CHECK(r.queries == 30);
  CHECK(r.recall_at_1 == 1.0);
  CHECK(r.max_f1 == 1.0);
}

TEST_CASE("intra protocol warmup and exclusion") {
  Rng rng(5);
  DescriptorDB shortseq;
  for (int i = 0; i < 20; ++i) shortseq.add(unit(rng, 4), meta_at(std::to_string(i), i * 2.0, i));
  EvalProtocol p;
  p.mode = ProtocolMode::kIntra;
  auto r = run_protocol(shortseq, DescriptorDB{}, p);
  CHECK(r.queries == 0);
  CHECK(r.status != "ok");

  // a loop: positions repeat after 100 s; descriptors equal for equal places
  DescriptorDB loop;
  std::vector<Descriptor> place;
  for (int k = 0; k < 50; ++k) place.push_back(unit(rng, 8));
  for (int i = 0; i < 100; ++i) loop.add(place[i % 50], meta_at(std::to_string(i), i * 2.0, (i % 50) * 4.0));
  auto lr = run_protocol(loop, DescriptorDB{}, p);
  for (const auto& o : lr.outcomes) {
    const double tq = loop.meta[o.query].timestamp;
    CHECK(tq >= 90.0);
    CHECK(loop.meta[o.retrieved].timestamp <= tq - 60.0);
  }
  CHECK(lr.revisits == 50);
  CHECK(lr.recall_at_1 == 1.0);
}

TEST_CASE("report outputs") {
  Rng rng(6);
  DescriptorDB db;
  for (int i = 0; i < 10; ++i) db.add(unit(rng, 4), meta_at(std::to_string(i), i, i * 3.0));
  auto r = run_protocol(db, db, EvalProtocol{});
  auto j = nlohmann::json::parse(report_json(r));
  CHECK(j["queries"] == 10);
  CHECK(j["mode"] == "inter");
  CHECK(report_csv(r).rfind("threshold,precision,recall,f1\n", 0) == 0);
  CHECK(report_svg(r).find("<polyline") != std::string::npos);
  auto dir = testing_util::temp_dir("report");
  save_report(dir / "r", r);
  CHECK(std::filesystem::exists(dir / "r.json"));
  CHECK(std::filesystem::exists(dir / "r.csv"));
  CHECK(std::filesystem::exists(dir / "r.svg"));
}
