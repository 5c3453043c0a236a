#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "rivlpr/aggregate.hpp"

namespace rivlpr {

/// Rows are unit-norm descriptors; meta carries id, timestamp and pose.
using DescriptorDB = DescriptorSet;

enum class ProtocolMode { kIntra, kInter };

struct EvalProtocol {
  ProtocolMode mode = ProtocolMode::kInter;
  double positive_radius = 10.0;     // meters
  double temporal_exclusion = 60.0;  // seconds
  double warmup = 90.0;              // seconds

  void validate() const;
};

struct Retrieval {
  int index = -1;
  double distance = 0.0;
};

/// Nearest row by Euclidean distance; ties go to the lowest index. With a cutoff
/// only rows with timestamp <= cutoff are admissible. Empty admissible set: nullopt.
std::optional<Retrieval> retrieve_top1(const DescriptorDB& db, const Vec& query,
                                       std::optional<double> timestamp_cutoff = std::nullopt);

struct MatchPoses {
  Eigen::Vector3d query;
  Eigen::Vector3d retrieved;
};

double recall_at_1(std::span<const MatchPoses> results, double radius);

struct ScoredMatch {
  double distance = 0.0;  // top-1 descriptor distance
  bool correct = false;   // top-1 lies within the positive radius
};

struct PrSample {
  double threshold = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

struct F1Result {
  double f1 = 0.0;
  double threshold = 0.0;
  bool has_true_match = false;
  std::vector<PrSample> curve;  // one sample per distinct observed distance, ascending
};

/// Accept a query iff its top-1 distance <= threshold. TP: accepted and correct,
/// FP: accepted and wrong, FN: rejected but correct.
F1Result max_f1(std::span<const ScoredMatch> results);

struct QueryOutcome {
  int query = 0;
  int retrieved = -1;
  double distance = 0.0;
  double pose_error = 0.0;  // meters between query and retrieved poses
  bool has_revisit = false;
  bool correct = false;
};

struct EvalReport {
  ProtocolMode mode = ProtocolMode::kInter;
  int queries = 0;    // evaluated queries
  int revisits = 0;   // queries with a true match among admissible rows
  double recall_at_1 = 0.0;
  double max_f1 = 0.0;
  double f1_threshold = 0.0;
  std::string status = "ok";
  std::vector<PrSample> curve;
  std::vector<QueryOutcome> outcomes;
};

/// Intra: `queries` is ignored and the db is searched against itself, skipping
/// the first `warmup` seconds and rows newer than t_q - temporal_exclusion.
/// Inter: every query row against every db row. Recall@1 counts queries that have a revisit.
EvalReport run_protocol(const DescriptorDB& db, const DescriptorDB& queries, const EvalProtocol& proto);

std::string report_json(const EvalReport& report);
std::string report_csv(const EvalReport& report);
std::string report_svg(const EvalReport& report);
/// Writes <stem>.json, <stem>.csv and <stem>.svg.
void save_report(const std::filesystem::path& stem, const EvalReport& report);

}  // namespace rivlpr
