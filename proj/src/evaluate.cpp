#include "rivlpr/evaluate.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <fmt/format.h>
#include <json.hpp>

namespace rivlpr {

void EvalProtocol::validate() const {
  require(positive_radius > 0.0, "eval: positive_radius must be positive");
  require(temporal_exclusion >= 0.0 && warmup >= 0.0, "eval: time windows must be >= 0");
}

namespace {

double row_distance(const DescriptorDB& db, std::size_t i, const Vec& q) {
  const float* r = db.rows.data() + i * static_cast<std::size_t>(db.dim);
  double s = 0.0;
  for (int k = 0; k < db.dim; ++k) {
    const double d = static_cast<double>(r[k]) - q[k];
    s += d * d;
  }
  return std::sqrt(s);
}

}  // namespace

std::optional<Retrieval> retrieve_top1(const DescriptorDB& db, const Vec& query, std::optional<double> cutoff) {
  require(query.size() == db.dim, "retrieve_top1: query dimension " + std::to_string(query.size()) +
                                      " does not match database dimension " + std::to_string(db.dim));
  std::optional<Retrieval> best;
  for (std::size_t i = 0; i < db.count(); ++i) {
    if (cutoff && db.meta[i].timestamp > *cutoff) continue;
    const double d = row_distance(db, i, query);
    if (!best || d < best->distance) best = Retrieval{static_cast<int>(i), d};
  }
  return best;
}

double recall_at_1(std::span<const MatchPoses> results, double radius) {
  require(!results.empty(), "recall_at_1: no queries");
  int hits = 0;
  for (const MatchPoses& r : results) hits += (r.query - r.retrieved).norm() <= radius ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(results.size());
}

F1Result max_f1(std::span<const ScoredMatch> results) {
  require(!results.empty(), "max_f1: no queries");
  std::vector<ScoredMatch> sorted(results.begin(), results.end());
  std::stable_sort(sorted.begin(), sorted.end(),
                   [](const ScoredMatch& a, const ScoredMatch& b) { return a.distance < b.distance; });
  long positives = 0;
  for (const ScoredMatch& r : sorted) positives += r.correct ? 1 : 0;

  F1Result out;
  out.has_true_match = positives > 0;
  long tp = 0, fp = 0;
  bool have_best = false;
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    (sorted[i].correct ? tp : fp) += 1;
    if (i + 1 < sorted.size() && sorted[i + 1].distance == sorted[i].distance) continue;
    const long fn = positives - tp;
    PrSample s;
    s.threshold = sorted[i].distance;
    s.precision = tp + fp > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
    s.recall = positives > 0 ? static_cast<double>(tp) / static_cast<double>(positives) : 0.0;
    s.f1 = tp > 0 ? 2.0 * tp / static_cast<double>(2 * tp + fp + fn) : 0.0;
    out.curve.push_back(s);
    if (!have_best || s.f1 > out.f1) {
      out.f1 = s.f1;
      out.threshold = s.threshold;
      have_best = true;
    }
  }
  return out;
}

EvalReport run_protocol(const DescriptorDB& db, const DescriptorDB& queries, const EvalProtocol& proto) {
  proto.validate();
  const bool intra = proto.mode == ProtocolMode::kIntra;
  const DescriptorDB& qset = intra ? db : queries;
  require(qset.dim == db.dim || qset.count() == 0 || db.count() == 0,
          "run_protocol: query and database descriptor dimensions differ");

  EvalReport report;
  report.mode = proto.mode;
  if (db.count() == 0 || qset.count() == 0) {
    report.status = "empty database or query set";
    return report;
  }
  double t0 = db.meta.front().timestamp;
  for (const DescriptorMeta& m : db.meta) t0 = std::min(t0, m.timestamp);

  std::vector<MatchPoses> revisit_matches;
  std::vector<ScoredMatch> scored;
  for (std::size_t qi = 0; qi < qset.count(); ++qi) {
    const DescriptorMeta& qm = qset.meta[qi];
    std::optional<double> cutoff;
    if (intra) {
      if (qm.timestamp < t0 + proto.warmup) continue;
      cutoff = qm.timestamp - proto.temporal_exclusion;
    }
    const auto hit = retrieve_top1(db, qset.row(qi), cutoff);
    if (!hit) continue;

    QueryOutcome o;
    o.query = static_cast<int>(qi);
    o.retrieved = hit->index;
    o.distance = hit->distance;
    o.pose_error = (qm.pose.translation - db.meta[hit->index].pose.translation).norm();
    o.correct = o.pose_error <= proto.positive_radius;
    for (std::size_t j = 0; j < db.count() && !o.has_revisit; ++j) {
      if (cutoff && db.meta[j].timestamp > *cutoff) continue;
      o.has_revisit = (qm.pose.translation - db.meta[j].pose.translation).norm() <= proto.positive_radius;
    }
    if (o.has_revisit) revisit_matches.push_back({qm.pose.translation, db.meta[hit->index].pose.translation});
    scored.push_back({o.distance, o.correct});
    report.outcomes.push_back(o);
  }

  report.queries = static_cast<int>(report.outcomes.size());
  report.revisits = static_cast<int>(revisit_matches.size());
  if (report.queries == 0) {
    report.status = "no queries after warmup and temporal exclusion";
    return report;
  }
  if (!revisit_matches.empty()) {
    report.recall_at_1 = recall_at_1(revisit_matches, proto.positive_radius);
  } else {
    report.status = "no query has a revisit";
  }
  const F1Result f1 = max_f1(scored);
  report.max_f1 = f1.f1;
  report.f1_threshold = f1.threshold;
  report.curve = f1.curve;
  if (!f1.has_true_match) report.status = "no true matches";
  return report;
}

std::string report_json(const EvalReport& r) {
  nlohmann::ordered_json j;
  j["mode"] = r.mode == ProtocolMode::kIntra ? "intra" : "inter";
  j["queries"] = r.queries;
  j["revisits"] = r.revisits;
  j["recall_at_1"] = r.recall_at_1;
  j["max_f1"] = r.max_f1;
  j["f1_threshold"] = r.f1_threshold;
  j["status"] = r.status;
  return j.dump(2) + "\n";
}

std::string report_csv(const EvalReport& r) {
  std::string out = "threshold,precision,recall,f1\n";
  for (const PrSample& s : r.curve) out += fmt::format("{:.17g},{:.17g},{:.17g},{:.17g}\n", s.threshold, s.precision, s.recall, s.f1);
  return out;
}

std::string report_svg(const EvalReport& r) {
  constexpr double kSize = 400.0, kPad = 50.0;
  auto px = [&](double recall) { return kPad + recall * kSize; };
  auto py = [&](double precision) { return kPad + (1.0 - precision) * kSize; };
  std::string out = fmt::format(
      "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{0}\" height=\"{0}\" font-family=\"sans-serif\" font-size=\"12\">\n",
      kSize + 2 * kPad);
  out += fmt::format("<rect x=\"{0}\" y=\"{0}\" width=\"{1}\" height=\"{1}\" fill=\"none\" stroke=\"#444\"/>\n", kPad, kSize);
  for (int t = 0; t <= 4; ++t) {
    const double v = t / 4.0;
    out += fmt::format("<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{:.2f}</text>\n", px(v), kPad + kSize + 16, v);
    out += fmt::format("<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{:.2f}</text>\n", kPad - 6, py(v) + 4, v);
  }
  out += fmt::format("<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">Recall</text>\n", kPad + kSize / 2, kPad + kSize + 36);
  out += fmt::format("<text x=\"14\" y=\"{}\" transform=\"rotate(-90 14 {})\" text-anchor=\"middle\">Precision</text>\n",
                     kPad + kSize / 2, kPad + kSize / 2);
  out += fmt::format("<text x=\"{}\" y=\"30\" text-anchor=\"middle\">R@1 {:.3f}  max F1 {:.3f}</text>\n", kPad + kSize / 2,
                     r.recall_at_1, r.max_f1);
  if (!r.curve.empty()) {
    out += "<polyline fill=\"none\" stroke=\"#c0392b\" stroke-width=\"2\" points=\"";
    for (const PrSample& s : r.curve) out += fmt::format("{:.2f},{:.2f} ", px(s.recall), py(s.precision));
    out += "\"/>\n";
  }
  out += "</svg>\n";
  return out;
}

void save_report(const std::filesystem::path& stem, const EvalReport& report) {
  auto write = [](const std::filesystem::path& p, const std::string& text) {
    std::ofstream f(p, std::ios::binary);
    if (!f) fail(ErrorCode::kIo, "cannot write " + p.string());
    f << text;
  };
  write(std::filesystem::path(stem.string() + ".json"), report_json(report));
  write(std::filesystem::path(stem.string() + ".csv"), report_csv(report));
  write(std::filesystem::path(stem.string() + ".svg"), report_svg(report));
}

}  // namespace rivlpr
