// rivlpr command-line front end. Talks to the library only through rivlpr.h.

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "rivlpr/rivlpr.h"

namespace fs = std::filesystem;

namespace {

enum Exit { kOk = 0, kUsage = 1, kNoInput = 2, kAlignment = 3, kProtocol = 4, kShape = 5 };

int exit_code(rivlpr_status s) {
  switch (s) {
    case RIVLPR_OK:
      return kOk;
    case RIVLPR_E_IO:
    case RIVLPR_E_FORMAT:
    case RIVLPR_E_NO_CANDIDATE:
      return kNoInput;
    case RIVLPR_E_ALIGNMENT:
      return kAlignment;
    case RIVLPR_E_PROTOCOL:
      return kProtocol;
    case RIVLPR_E_SHAPE:
      return kShape;
    default:
      return kUsage;
  }
}

struct Failure {
  int code;
};

void check(rivlpr_status s, const std::string& what) {
  if (s == RIVLPR_OK) return;
  spdlog::error("{}: {}", what, rivlpr_last_error());
  throw Failure{exit_code(s)};
}

[[noreturn]] void die(int code, const std::string& msg) {
  spdlog::error("{}", msg);
  throw Failure{code};
}

template <class T, void (*Free)(T*)>
struct Deleter {
  void operator()(T* p) const { Free(p); }
};
using Config = std::unique_ptr<rivlpr_config, Deleter<rivlpr_config, rivlpr_config_free>>;
using ScanPtr = std::unique_ptr<rivlpr_scan, Deleter<rivlpr_scan, rivlpr_scan_free>>;
using Poses = std::unique_ptr<rivlpr_poses, Deleter<rivlpr_poses, rivlpr_poses_free>>;
using Image = std::unique_ptr<rivlpr_image, Deleter<rivlpr_image, rivlpr_image_free>>;
using Pairs = std::unique_ptr<rivlpr_pairs, Deleter<rivlpr_pairs, rivlpr_pairs_free>>;
using ModelPtr = std::unique_ptr<rivlpr_model, Deleter<rivlpr_model, rivlpr_model_free>>;
using Db = std::unique_ptr<rivlpr_db, Deleter<rivlpr_db, rivlpr_db_free>>;

struct Globals {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  unsigned threads = 1;
  std::vector<std::string> overrides;
};

Config make_config(const Globals& g) {
  rivlpr_config* raw = nullptr;
  if (g.config_path.empty()) {
    check(rivlpr_config_default(&raw), "default config");
  } else {
    check(rivlpr_config_load(g.config_path.c_str(), &raw), "config " + g.config_path);
  }
  Config cfg(raw);
  if (g.seed) {
    const std::string s = std::to_string(*g.seed);
    check(rivlpr_config_set(cfg.get(), "train.seed", s.c_str()), "--seed");
    check(rivlpr_config_set(cfg.get(), "synthetic.seed", s.c_str()), "--seed");
  }
  for (const std::string& o : g.overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos) die(kUsage, "--set expects section.key=value, got '" + o + "'");
    check(rivlpr_config_set(cfg.get(), o.substr(0, eq).c_str(), o.substr(eq + 1).c_str()), "--set " + o);
  }
  return cfg;
}

std::vector<fs::path> list_files(const fs::path& dir, std::initializer_list<const char*> extensions) {
  std::vector<fs::path> out;
  std::error_code ec;
  if (!fs::is_directory(dir, ec)) die(kNoInput, "not a directory: " + dir.string());
  for (const auto& e : fs::directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    const std::string ext = e.path().extension().string();
    if (std::find(extensions.begin(), extensions.end(), ext) != extensions.end()) out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

template <class Fn>
void parallel_for(std::size_t n, unsigned threads, Fn&& fn) {
  threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(std::max<std::size_t>(n, 1))));
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < n; i = next++) fn(i);
  };
  std::vector<std::thread> pool;
  for (unsigned t = 1; t < threads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
}

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

ScanPtr load_scan(const fs::path& p) {
  rivlpr_scan* raw = nullptr;
  check(rivlpr_scan_load(p.string().c_str(), &raw), "scan " + p.string());
  return ScanPtr(raw);
}

Poses load_poses(const fs::path& p) {
  rivlpr_poses* raw = nullptr;
  check(rivlpr_poses_load(p.string().c_str(), &raw), "poses " + p.string());
  return Poses(raw);
}

// ---- commands ---------------------------------------------------------------

int cmd_project(const Globals& g, const std::string& scan_dir, const std::string& poses_path, const std::string& out) {
  Config cfg = make_config(g);
  const auto files = list_files(scan_dir, {".bin", ".csv"});
  if (files.empty()) die(kNoInput, "no scans in " + scan_dir);
  Poses poses;
  if (!poses_path.empty()) poses = load_poses(poses_path);
  fs::create_directories(out);

  struct Row {
    bool ok = false;
    std::string id, file;
    double timestamp = 0.0;
    double pose[7] = {0, 0, 0, 0, 0, 0, 1};
    bool has_pose = false;
  };
  std::vector<Row> rows(files.size());
  parallel_for(files.size(), g.threads, [&](std::size_t i) {
    rivlpr_scan* scan = nullptr;
    if (rivlpr_scan_load(files[i].string().c_str(), &scan) != RIVLPR_OK) {
      spdlog::warn("skipping {}: {}", files[i].string(), rivlpr_last_error());
      return;
    }
    ScanPtr s(scan);
    rivlpr_image* img = nullptr;
    if (rivlpr_project(cfg.get(), s.get(), &img) != RIVLPR_OK) {
      spdlog::warn("skipping {}: {}", files[i].string(), rivlpr_last_error());
      return;
    }
    Image im(img);
    Row& r = rows[i];
    r.id = rivlpr_scan_id(s.get());
    r.file = r.id + ".riv";
    r.timestamp = rivlpr_scan_timestamp(s.get());
    if (rivlpr_image_save(im.get(), (fs::path(out) / r.file).string().c_str()) != RIVLPR_OK) {
      spdlog::warn("cannot write {}: {}", r.file, rivlpr_last_error());
      return;
    }
    if (poses) r.has_pose = rivlpr_poses_find(poses.get(), r.timestamp, r.pose) == RIVLPR_OK;
    if (poses && !r.has_pose) spdlog::warn("no pose for scan {}", r.id);
    r.ok = true;
  });

  std::ostringstream manifest;
  manifest << "id,file,timestamp,tx,ty,tz,qx,qy,qz,qw\n";
  std::size_t written = 0;
  for (const Row& r : rows) {
    if (!r.ok) continue;
    ++written;
    manifest << r.id << ',' << r.file << ',' << fmt_double(r.timestamp);
    for (double v : r.pose) manifest << ',' << (r.has_pose ? fmt_double(v) : std::string());
    manifest << '\n';
  }
  if (written == 0) die(kNoInput, "no scan could be projected");
  std::ofstream(fs::path(out) / "manifest.csv", std::ios::binary) << manifest.str();
  spdlog::info("projected {} of {} scans into {}", written, files.size(), out);
  return kOk;
}

int cmd_mine(const Globals& g, const std::string& a, const std::string& b, const std::string& poses_path,
             const std::string& out) {
  Config cfg = make_config(g);
  ScanPtr sa = load_scan(a), sb = load_scan(b);
  Poses poses = load_poses(poses_path);
  rivlpr_pairs* raw = nullptr;
  const rivlpr_status s = rivlpr_mine(cfg.get(), sa.get(), sb.get(), poses.get(), g.seed.value_or(0), &raw);
  if (s == RIVLPR_E_PROTOCOL) die(kProtocol, std::string("not a positive pair: ") + rivlpr_last_error());
  check(s, "mining");
  Pairs pairs(raw);
  check(rivlpr_pairs_save(pairs.get(), out.c_str()), "write " + out);
  spdlog::info("{} positive patch pairs written to {}", rivlpr_pairs_positive_count(pairs.get()), out);
  return kOk;
}

struct ManifestRow {
  std::string id;
  fs::path file;
  double timestamp = 0.0;
  double pose[7] = {0, 0, 0, 0, 0, 0, 1};
};

std::vector<ManifestRow> read_manifest(const fs::path& dir) {
  std::vector<ManifestRow> rows;
  const fs::path path = dir / "manifest.csv";
  std::ifstream in(path);
  if (!in) {
    for (const fs::path& f : list_files(dir, {".riv"})) {
      ManifestRow r;
      r.id = f.stem().string();
      r.file = f;
      char* end = nullptr;
      const double t = std::strtod(r.id.c_str(), &end);
      if (end != r.id.c_str() && *end == '\0') r.timestamp = t;
      rows.push_back(r);
    }
    return rows;
  }
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cols;
    std::stringstream ss(line);
    for (std::string c; std::getline(ss, c, ',');) cols.push_back(c);
    while (cols.size() < 10) cols.emplace_back();
    ManifestRow r;
    r.id = cols[0];
    r.file = dir / cols[1];
    r.timestamp = std::strtod(cols[2].c_str(), nullptr);
    if (!cols[3].empty()) {
      for (int k = 0; k < 7; ++k) r.pose[k] = std::strtod(cols[3 + k].c_str(), nullptr);
    }
    rows.push_back(r);
  }
  return rows;
}

int cmd_describe(const Globals& g, const std::string& riv_dir, const std::string& ckp, const std::string& out) {
  const auto rows = read_manifest(riv_dir);
  if (rows.empty()) die(kNoInput, "no range images in " + riv_dir);
  rivlpr_model* raw = nullptr;
  check(rivlpr_model_load(ckp.c_str(), &raw), "checkpoint " + ckp);
  ModelPtr model(raw);
  const std::size_t dim = rivlpr_model_descriptor_dim(model.get());

  std::vector<std::vector<float>> desc(rows.size(), std::vector<float>(dim));
  std::vector<rivlpr_status> status(rows.size(), RIVLPR_OK);
  std::vector<std::string> errors(rows.size());
  parallel_for(rows.size(), g.threads, [&](std::size_t i) {
    rivlpr_image* img = nullptr;
    status[i] = rivlpr_image_load(rows[i].file.string().c_str(), &img);
    if (status[i] == RIVLPR_OK) {
      Image im(img);
      int valid = 0;
      status[i] = rivlpr_describe(model.get(), im.get(), desc[i].data(), dim, &valid);
      if (status[i] == RIVLPR_OK && !valid) spdlog::warn("degenerate descriptor for {}", rows[i].id);
    }
    if (status[i] != RIVLPR_OK) errors[i] = rivlpr_last_error();
  });
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (status[i] != RIVLPR_OK) {
      spdlog::error("{}: {}", rows[i].file.string(), errors[i]);
      throw Failure{exit_code(status[i])};
    }
  }
  rivlpr_db* dbraw = nullptr;
  check(rivlpr_db_create(&dbraw), "database");
  Db db(dbraw);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    check(rivlpr_db_add(db.get(), desc[i].data(), dim, rows[i].id.c_str(), rows[i].timestamp, rows[i].pose),
          "add " + rows[i].id);
  }
  check(rivlpr_db_save(db.get(), out.c_str()), "write " + out);
  spdlog::info("{} descriptors of dimension {} written to {}", rows.size(), dim, out);
  return kOk;
}

int cmd_train(const Globals& g, const std::vector<std::string>& scan_dirs, std::vector<std::string> pose_files,
              const std::string& resume, const std::string& out, const std::string& trace) {
  Config cfg = make_config(g);
  if (pose_files.empty()) {
    for (const std::string& d : scan_dirs) pose_files.push_back((fs::path(d) / "poses.txt").string());
  }
  std::vector<ScanPtr> scans;
  for (const std::string& d : scan_dirs) {
    for (const fs::path& f : list_files(d, {".bin", ".csv"})) scans.push_back(load_scan(f));
  }
  if (scans.empty()) die(kNoInput, "no scans to train on");
  std::vector<Poses> poses;
  for (const std::string& p : pose_files) poses.push_back(load_poses(p));
  std::vector<const rivlpr_scan*> sp;
  for (const auto& s : scans) sp.push_back(s.get());
  std::vector<const rivlpr_poses*> pp;
  for (const auto& p : poses) pp.push_back(p.get());

  auto progress = [](const rivlpr_train_row* r, void*) {
    spdlog::info("step {:4d}  lr {:.2e}  L_P {:.4f}  L_TSAP {:.4f}  L_final {:.4f}", r->step, r->lr, r->loss_p,
                 r->loss_tsap, r->loss_final);
  };
  spdlog::info("training on {} scans", scans.size());
  check(rivlpr_train(cfg.get(), sp.data(), sp.size(), pp.data(), pp.size(), resume.empty() ? nullptr : resume.c_str(),
                     out.c_str(), trace.empty() ? nullptr : trace.c_str(), progress, nullptr),
        "training");
  spdlog::info("checkpoint written to {}", out);
  return kOk;
}

Db load_db(const std::string& path) {
  rivlpr_db* raw = nullptr;
  check(rivlpr_db_load(path.c_str(), &raw), "descriptors " + path);
  return Db(raw);
}

int cmd_eval(const Globals& g, const std::string& db_path, const std::string& queries_path, const std::string& ckp,
             const std::string& out) {
  Config cfg = make_config(g);
  Db db = load_db(db_path);
  Db queries;
  if (!queries_path.empty()) queries = load_db(queries_path);
  if (!ckp.empty()) {
    rivlpr_model* raw = nullptr;
    check(rivlpr_model_load(ckp.c_str(), &raw), "checkpoint " + ckp);
    ModelPtr model(raw);
    const std::size_t dim = rivlpr_model_descriptor_dim(model.get());
    for (const rivlpr_db* d : {db.get(), queries.get()}) {
      if (d != nullptr && rivlpr_db_count(d) > 0 && rivlpr_db_dim(d) != dim) {
        die(kShape, "descriptor dimension " + std::to_string(rivlpr_db_dim(d)) + " does not match checkpoint dimension " +
                        std::to_string(dim));
      }
    }
  }
  if (!out.empty() && fs::path(out).has_parent_path()) fs::create_directories(fs::path(out).parent_path());
  rivlpr_report report{};
  check(rivlpr_evaluate(cfg.get(), db.get(), queries ? queries.get() : nullptr, out.empty() ? nullptr : out.c_str(),
                        &report),
        "evaluation");
  std::printf("queries %d  revisits %d  R@1 %.4f  maxF1 %.4f  threshold %.6g\n", report.queries, report.revisits,
              report.recall_at_1, report.max_f1, report.f1_threshold);
  return kOk;
}

int cmd_synth(const Globals& g, const std::string& out) {
  Config cfg = make_config(g);
  check(rivlpr_synthesize(cfg.get(), out.c_str()), "synthesis");
  spdlog::info("synthetic sessions written to {}", out);
  return kOk;
}

int cmd_config(const Globals& g) {
  Config cfg = make_config(g);
  std::size_t needed = 0;
  rivlpr_config_dump(cfg.get(), nullptr, 0, &needed);
  std::string text(needed, '\0');
  check(rivlpr_config_dump(cfg.get(), text.data(), text.size(), &needed), "config");
  text.resize(needed - 1);
  std::fputs(text.c_str(), stdout);
  return kOk;
}

void setup_logging() {
  auto logger = spdlog::stderr_color_mt("rivlpr");
  logger->set_pattern("[%l] %v");
  spdlog::set_default_logger(logger);
  spdlog::set_level(spdlog::level::info);
  if (const char* env = std::getenv("RIVLPR_LOG")) {
    const auto level = spdlog::level::from_str(env);
    spdlog::set_level(level);
  }
}

}  // namespace

int main(int argc, char** argv) {
  setup_logging();
  CLI::App app{"LiDAR place recognition on range images"};
  app.require_subcommand(1);
  Globals g;
  std::uint64_t seed = 0;
  app.add_option("--config", g.config_path, "pipeline config file")->check(CLI::ExistingFile);
  auto* seed_opt = app.add_option("--seed", seed, "overrides train.seed and synthetic.seed; mining seed");
  app.add_option("--threads", g.threads, "worker threads for per-scan work")->check(CLI::PositiveNumber);
  app.add_option("--set", g.overrides, "section.key=value config override (repeatable)");

  std::string out;
  auto* project = app.add_subcommand("project", "scans -> RIV1 images + manifest.csv");
  std::string scan_dir, poses_path;
  project->add_option("--scans", scan_dir, "directory of .bin/.csv scans")->required();
  project->add_option("--poses", poses_path, "pose file recorded into the manifest");
  project->add_option("--out", out, "output directory")->required();

  auto* mine = app.add_subcommand("mine", "patch pairs between two scans");
  std::string scan_a, scan_b;
  mine->add_option("--scan-a", scan_a)->required();
  mine->add_option("--scan-b", scan_b)->required();
  mine->add_option("--poses", poses_path)->required();
  mine->add_option("--out", out, "pair file")->required();

  auto* describe = app.add_subcommand("describe", "RIV images -> DSC1 descriptor database");
  std::string riv_dir, ckp;
  describe->add_option("--rivs", riv_dir, "directory written by project")->required();
  describe->add_option("--checkpoint", ckp)->required();
  describe->add_option("--out", out, "database path")->required();

  auto* train = app.add_subcommand("train", "train adapters and aggregator");
  std::vector<std::string> scan_dirs, pose_files;
  std::string resume, trace;
  train->add_option("--scans", scan_dirs, "scan directories (repeatable)")->required();
  train->add_option("--poses", pose_files, "pose files; default <dir>/poses.txt");
  train->add_option("--resume", resume, "checkpoint to continue from");
  train->add_option("--trace", trace, "per-step loss CSV");
  train->add_option("--out", out, "checkpoint path")->required();

  auto* eval = app.add_subcommand("eval", "retrieval metrics + PR curve");
  std::string db_path, queries_path;
  eval->add_option("--db", db_path)->required();
  eval->add_option("--queries", queries_path, "query database (inter mode)");
  eval->add_option("--checkpoint", ckp, "checked against the descriptor dimension");
  eval->add_option("--out", out, "report stem: writes .json .csv .svg");

  auto* synth = app.add_subcommand("synth", "render the synthetic street world");
  synth->add_option("--out", out, "output directory")->required();

  auto* config = app.add_subcommand("config", "print the effective config");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : kUsage;
  }
  if (seed_opt->count() > 0) g.seed = seed;

  try {
    if (project->parsed()) return cmd_project(g, scan_dir, poses_path, out);
    if (mine->parsed()) return cmd_mine(g, scan_a, scan_b, poses_path, out);
    if (describe->parsed()) return cmd_describe(g, riv_dir, ckp, out);
    if (train->parsed()) return cmd_train(g, scan_dirs, pose_files, resume, out, trace);
    if (eval->parsed()) return cmd_eval(g, db_path, queries_path, ckp, out);
    if (synth->parsed()) return cmd_synth(g, out);
    if (config->parsed()) return cmd_config(g);
  } catch (const Failure& f) {
    return f.code;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return kUsage;
  }
  return kUsage;
}
