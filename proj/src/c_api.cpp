#include "rivlpr/rivlpr.h"

#include <cstring>
#include <exception>
#include <filesystem>
#include <fstream>
#include <new>
#include <string>

#include <fmt/format.h>

#include "rivlpr/config.hpp"

struct rivlpr_config {
  rivlpr::PipelineConfig cfg;
};
struct rivlpr_scan {
  rivlpr::Scan scan;
};
struct rivlpr_poses {
  std::vector<rivlpr::Pose> poses;
};
struct rivlpr_image {
  rivlpr::RivImage img;
};
struct rivlpr_pairs {
  rivlpr::PatchPairSet set;
};
struct rivlpr_model {
  rivlpr::Model model;
  rivlpr::ToyEncoder encoder;
};
struct rivlpr_db {
  rivlpr::DescriptorDB db;
};

namespace {

thread_local std::string g_last_error;

rivlpr_status to_status(rivlpr::ErrorCode code) { return static_cast<rivlpr_status>(static_cast<int>(code)); }

template <class Fn>
rivlpr_status guarded(Fn&& fn) {
  try {
    g_last_error.clear();
    fn();
    return RIVLPR_OK;
  } catch (const rivlpr::Error& e) {
    g_last_error = e.what();
    return to_status(e.code());
  } catch (const std::bad_alloc&) {
    g_last_error = "out of memory";
  } catch (const std::exception& e) {
    g_last_error = e.what();
  } catch (...) {
    g_last_error = "unknown exception";
  }
  return RIVLPR_E_INTERNAL;
}

void need(const void* p, const char* what) {
  if (p == nullptr) rivlpr::fail(rivlpr::ErrorCode::kArgument, std::string(what) + " must not be NULL");
}

rivlpr_status copy_out(const std::string& s, char* buf, size_t cap, size_t* needed) {
  if (needed) *needed = s.size() + 1;
  if (buf == nullptr && cap == 0) return RIVLPR_OK;
  if (buf != nullptr && cap >= s.size() + 1) {
    std::memcpy(buf, s.c_str(), s.size() + 1);
    return RIVLPR_OK;
  }
  g_last_error = "buffer too small";
  return RIVLPR_E_ARGUMENT;
}

rivlpr::Pose pose_from7(const double* p7, double t) {
  rivlpr::Pose p;
  p.timestamp = t;
  if (p7 != nullptr) {
    p.translation = {p7[0], p7[1], p7[2]};
    p.rotation = Eigen::Quaterniond(p7[6], p7[3], p7[4], p7[5]);
    if (!(p.rotation.norm() > 0.0)) rivlpr::fail(rivlpr::ErrorCode::kArgument, "pose quaternion must be non-zero");
  }
  return p;
}

rivlpr::Pose pose_for(const rivlpr_poses* poses, const rivlpr::Scan& scan) {
  const auto p = rivlpr::find_pose(poses->poses, scan.timestamp);
  if (!p) {
    rivlpr::fail(rivlpr::ErrorCode::kArgument,
                 fmt::format("no pose within 1 ms of scan '{}' (t = {})", scan.id, scan.timestamp));
  }
  return *p;
}

}  // namespace

extern "C" {

const char* rivlpr_version(void) { return "0.1.0"; }
const char* rivlpr_last_error(void) { return g_last_error.c_str(); }

// ---- configuration -----------------------------------------------------------

rivlpr_status rivlpr_config_default(rivlpr_config** out) {
  return guarded([&] {
    need(out, "out");
    *out = new rivlpr_config{};
  });
}

rivlpr_status rivlpr_config_load(const char* path, rivlpr_config** out) {
  return guarded([&] {
    need(path, "path");
    need(out, "out");
    *out = new rivlpr_config{rivlpr::load_config(path)};
  });
}

rivlpr_status rivlpr_config_parse(const char* text, rivlpr_config** out) {
  return guarded([&] {
    need(text, "text");
    need(out, "out");
    *out = new rivlpr_config{rivlpr::parse_config(text)};
  });
}

rivlpr_status rivlpr_config_set(rivlpr_config* cfg, const char* key, const char* value) {
  return guarded([&] {
    need(cfg, "cfg");
    need(key, "key");
    need(value, "value");
    rivlpr::set_value(cfg->cfg, key, value);
  });
}

rivlpr_status rivlpr_config_get(const rivlpr_config* cfg, const char* key, char* buf, size_t cap, size_t* needed) {
  std::string value;
  const rivlpr_status s = guarded([&] {
    need(cfg, "cfg");
    need(key, "key");
    value = rivlpr::get_value(cfg->cfg, key);
  });
  return s != RIVLPR_OK ? s : copy_out(value, buf, cap, needed);
}

rivlpr_status rivlpr_config_dump(const rivlpr_config* cfg, char* buf, size_t cap, size_t* needed) {
  std::string text;
  const rivlpr_status s = guarded([&] {
    need(cfg, "cfg");
    text = rivlpr::format_config(cfg->cfg);
  });
  return s != RIVLPR_OK ? s : copy_out(text, buf, cap, needed);
}

void rivlpr_config_free(rivlpr_config* cfg) { delete cfg; }

// ---- scans and poses ---------------------------------------------------------

rivlpr_status rivlpr_scan_load(const char* path, rivlpr_scan** out) {
  return guarded([&] {
    need(path, "path");
    need(out, "out");
    *out = new rivlpr_scan{rivlpr::load_scan(path)};
  });
}

rivlpr_status rivlpr_scan_from_points(const float* xyzr, size_t count, const char* id, double timestamp,
                                      rivlpr_scan** out) {
  return guarded([&] {
    need(out, "out");
    if (count > 0) need(xyzr, "xyzr");
    auto s = std::make_unique<rivlpr_scan>();
    s->scan.id = id ? id : "";
    s->scan.timestamp = timestamp;
    s->scan.points.reserve(count);
    for (size_t i = 0; i < count; ++i) {
      const float* p = xyzr + 4 * i;
      s->scan.points.push_back({p[0], p[1], p[2], p[3]});
    }
    *out = s.release();
  });
}

rivlpr_status rivlpr_scan_save(const rivlpr_scan* scan, const char* path) {
  return guarded([&] {
    need(scan, "scan");
    need(path, "path");
    const std::filesystem::path p(path);
    rivlpr::save_scan(p, scan->scan, p.extension() == ".csv" ? rivlpr::ScanFormat::kCsv : rivlpr::ScanFormat::kXyzrBin);
  });
}

size_t rivlpr_scan_size(const rivlpr_scan* scan) { return scan ? scan->scan.points.size() : 0; }
double rivlpr_scan_timestamp(const rivlpr_scan* scan) { return scan ? scan->scan.timestamp : 0.0; }
const char* rivlpr_scan_id(const rivlpr_scan* scan) { return scan ? scan->scan.id.c_str() : ""; }
void rivlpr_scan_free(rivlpr_scan* scan) { delete scan; }

rivlpr_status rivlpr_poses_load(const char* path, rivlpr_poses** out) {
  return guarded([&] {
    need(path, "path");
    need(out, "out");
    *out = new rivlpr_poses{rivlpr::load_poses(path)};
  });
}

size_t rivlpr_poses_size(const rivlpr_poses* poses) { return poses ? poses->poses.size() : 0; }

rivlpr_status rivlpr_poses_find(const rivlpr_poses* poses, double timestamp, double pose7[7]) {
  return guarded([&] {
    need(poses, "poses");
    need(pose7, "pose7");
    const auto p = rivlpr::find_pose(poses->poses, timestamp);
    if (!p) rivlpr::fail(rivlpr::ErrorCode::kNoCandidate, fmt::format("no pose within 1 ms of t = {}", timestamp));
    const double v[7] = {p->translation.x(), p->translation.y(), p->translation.z(), p->rotation.x(),
                         p->rotation.y(),    p->rotation.z(),    p->rotation.w()};
    std::copy(v, v + 7, pose7);
  });
}

void rivlpr_poses_free(rivlpr_poses* poses) { delete poses; }

// ---- range images ------------------------------------------------------------

rivlpr_status rivlpr_project(const rivlpr_config* cfg, const rivlpr_scan* scan, rivlpr_image** out) {
  return guarded([&] {
    need(cfg, "cfg");
    need(scan, "scan");
    need(out, "out");
    if (scan->scan.points.empty()) rivlpr::fail(rivlpr::ErrorCode::kArgument, "scan '" + scan->scan.id + "' is empty");
    *out = new rivlpr_image{rivlpr::project_scan(scan->scan, cfg->cfg.riv)};
  });
}

rivlpr_status rivlpr_image_load(const char* path, rivlpr_image** out) {
  return guarded([&] {
    need(path, "path");
    need(out, "out");
    *out = new rivlpr_image{rivlpr::load_riv(path)};
  });
}

rivlpr_status rivlpr_image_save(const rivlpr_image* img, const char* path) {
  return guarded([&] {
    need(img, "img");
    need(path, "path");
    rivlpr::save_riv(path, img->img);
  });
}

rivlpr_status rivlpr_image_shape(const rivlpr_image* img, int* height, int* width) {
  return guarded([&] {
    need(img, "img");
    if (height) *height = img->img.height;
    if (width) *width = img->img.width;
  });
}

rivlpr_status rivlpr_image_pixel(const rivlpr_image* img, int row, int col, float channels[3], int* valid) {
  return guarded([&] {
    need(img, "img");
    need(channels, "channels");
    const rivlpr::RivImage& im = img->img;
    rivlpr::require(row >= 0 && row < im.height && col >= 0 && col < im.width, "pixel outside the image");
    for (int c = 0; c < 3; ++c) channels[c] = im.at(row, col, c);
    if (valid) *valid = im.is_valid(row, col) ? 1 : 0;
  });
}

size_t rivlpr_image_valid_count(const rivlpr_image* img) { return img ? img->img.valid_count() : 0; }
void rivlpr_image_free(rivlpr_image* img) { delete img; }

// ---- mining ------------------------------------------------------------------

rivlpr_status rivlpr_mine(const rivlpr_config* cfg, const rivlpr_scan* a, const rivlpr_scan* b,
                          const rivlpr_poses* poses, uint64_t seed, rivlpr_pairs** out) {
  return guarded([&] {
    need(cfg, "cfg");
    need(a, "a");
    need(b, "b");
    need(poses, "poses");
    need(out, "out");
    const rivlpr::Pose pa = pose_for(poses, a->scan);
    const rivlpr::Pose pb = pose_for(poses, b->scan);
    rivlpr::MiningResult r = rivlpr::mine_pair(a->scan, b->scan, pa, pb, cfg->cfg.riv, cfg->cfg.mining, seed);
    if (r.status == rivlpr::MiningStatus::kAlignmentFailed) rivlpr::fail(rivlpr::ErrorCode::kAlignment, r.message);
    *out = new rivlpr_pairs{std::move(r.pairs)};
  });
}

size_t rivlpr_pairs_positive_count(const rivlpr_pairs* pairs) { return pairs ? pairs->set.positives.size() : 0; }

rivlpr_status rivlpr_pairs_positive(const rivlpr_pairs* pairs, size_t k, int* patch_a, int* patch_b) {
  return guarded([&] {
    need(pairs, "pairs");
    rivlpr::require(k < pairs->set.positives.size(), "positive index out of range");
    if (patch_a) *patch_a = pairs->set.positives[k].a;
    if (patch_b) *patch_b = pairs->set.positives[k].b;
  });
}

rivlpr_status rivlpr_pairs_save(const rivlpr_pairs* pairs, const char* path) {
  return guarded([&] {
    need(pairs, "pairs");
    need(path, "path");
    rivlpr::save_pairs(path, pairs->set);
  });
}

rivlpr_status rivlpr_pairs_load(const char* path, rivlpr_pairs** out) {
  return guarded([&] {
    need(path, "path");
    need(out, "out");
    *out = new rivlpr_pairs{rivlpr::load_pairs(path)};
  });
}

void rivlpr_pairs_free(rivlpr_pairs* pairs) { delete pairs; }

// ---- model -------------------------------------------------------------------

rivlpr_status rivlpr_model_random(const rivlpr_config* cfg, uint64_t seed, rivlpr_model** out) {
  return guarded([&] {
    need(cfg, "cfg");
    need(out, "out");
    rivlpr::Model m = rivlpr::Model::random(cfg->cfg.model(), seed);
    *out = new rivlpr_model{m, rivlpr::ToyEncoder(m.config.encoder)};
  });
}

rivlpr_status rivlpr_model_load(const char* path, rivlpr_model** out) {
  return guarded([&] {
    need(path, "path");
    need(out, "out");
    rivlpr::Checkpoint ckp = rivlpr::load_checkpoint(path);
    rivlpr::ToyEncoder enc(ckp.model.config.encoder);
    if (enc.weights_hash() != ckp.encoder_hash && ckp.encoder_hash != 0) {
      rivlpr::fail(rivlpr::ErrorCode::kFormat, "checkpoint encoder hash does not match the frozen encoder");
    }
    *out = new rivlpr_model{std::move(ckp.model), std::move(enc)};
  });
}

rivlpr_status rivlpr_model_save(const rivlpr_model* model, const char* path) {
  return guarded([&] {
    need(model, "model");
    need(path, "path");
    rivlpr::Checkpoint ckp;
    ckp.model = model->model;
    ckp.encoder_hash = model->encoder.weights_hash();
    rivlpr::save_checkpoint(path, ckp);
  });
}

size_t rivlpr_model_descriptor_dim(const rivlpr_model* model) {
  return model ? static_cast<size_t>(model->model.config.aggregate.descriptor_dim()) : 0;
}

rivlpr_status rivlpr_model_image_shape(const rivlpr_model* model, int* height, int* width) {
  return guarded([&] {
    need(model, "model");
    if (height) *height = model->model.config.riv.height;
    if (width) *width = model->model.config.riv.width;
  });
}

rivlpr_status rivlpr_describe(const rivlpr_model* model, const rivlpr_image* img, float* out, size_t cap, int* valid) {
  return guarded([&] {
    need(model, "model");
    need(img, "img");
    need(out, "out");
    const rivlpr::RivConfig& riv = model->model.config.riv;
    if (img->img.height != riv.height || img->img.width != riv.width) {
      rivlpr::fail(rivlpr::ErrorCode::kShape, fmt::format("image is {}x{} but the model expects {}x{}", img->img.height,
                                                          img->img.width, riv.height, riv.width));
    }
    const size_t dim = static_cast<size_t>(model->model.config.aggregate.descriptor_dim());
    rivlpr::require(cap >= dim, "output buffer smaller than the descriptor dimension");
    const rivlpr::Descriptor d = rivlpr::describe(model->encoder, model->model, img->img);
    for (size_t i = 0; i < dim; ++i) out[i] = static_cast<float>(d.values[static_cast<Eigen::Index>(i)]);
    if (valid) *valid = d.valid ? 1 : 0;
  });
}

void rivlpr_model_free(rivlpr_model* model) { delete model; }

// ---- descriptor database -----------------------------------------------------

rivlpr_status rivlpr_db_create(rivlpr_db** out) {
  return guarded([&] {
    need(out, "out");
    *out = new rivlpr_db{};
  });
}

rivlpr_status rivlpr_db_add(rivlpr_db* db, const float* descriptor, size_t dim, const char* id, double timestamp,
                            const double pose7[7]) {
  return guarded([&] {
    need(db, "db");
    need(descriptor, "descriptor");
    if (db->db.count() > 0 && dim != static_cast<size_t>(db->db.dim)) {
      rivlpr::fail(rivlpr::ErrorCode::kShape,
                   fmt::format("descriptor has dimension {} but the database holds {}", dim, db->db.dim));
    }
    rivlpr::Descriptor d;
    d.values.resize(static_cast<Eigen::Index>(dim));
    for (size_t i = 0; i < dim; ++i) d.values[static_cast<Eigen::Index>(i)] = descriptor[i];
    db->db.add(d, {id ? id : "", timestamp, pose_from7(pose7, timestamp)});
  });
}

rivlpr_status rivlpr_db_load(const char* path, rivlpr_db** out) {
  return guarded([&] {
    need(path, "path");
    need(out, "out");
    *out = new rivlpr_db{rivlpr::load_descriptors(path)};
  });
}

rivlpr_status rivlpr_db_save(const rivlpr_db* db, const char* path) {
  return guarded([&] {
    need(db, "db");
    need(path, "path");
    rivlpr::save_descriptors(path, db->db);
  });
}

size_t rivlpr_db_count(const rivlpr_db* db) { return db ? db->db.count() : 0; }
size_t rivlpr_db_dim(const rivlpr_db* db) { return db ? static_cast<size_t>(db->db.dim) : 0; }

rivlpr_status rivlpr_db_query(const rivlpr_db* db, const float* descriptor, size_t dim, int* index, double* distance) {
  return guarded([&] {
    need(db, "db");
    need(descriptor, "descriptor");
    if (dim != static_cast<size_t>(db->db.dim)) {
      rivlpr::fail(rivlpr::ErrorCode::kShape,
                   fmt::format("query has dimension {} but the database holds {}", dim, db->db.dim));
    }
    rivlpr::Vec q(static_cast<Eigen::Index>(dim));
    for (size_t i = 0; i < dim; ++i) q[static_cast<Eigen::Index>(i)] = descriptor[i];
    const auto hit = rivlpr::retrieve_top1(db->db, q);
    if (!hit) rivlpr::fail(rivlpr::ErrorCode::kNoCandidate, "database is empty");
    if (index) *index = hit->index;
    if (distance) *distance = hit->distance;
  });
}

void rivlpr_db_free(rivlpr_db* db) { delete db; }

// ---- training and evaluation -------------------------------------------------

rivlpr_status rivlpr_train(const rivlpr_config* cfg, const rivlpr_scan* const* scans, size_t scan_count,
                           const rivlpr_poses* const* poses, size_t pose_sets, const char* resume_path,
                           const char* ckp_path, const char* trace_path, rivlpr_train_callback callback, void* user) {
  return guarded([&] {
    need(cfg, "cfg");
    need(ckp_path, "ckp_path");
    if (scan_count > 0) need(scans, "scans");
    if (pose_sets > 0) need(poses, "poses");
    rivlpr::Sequence seq;
    for (size_t i = 0; i < scan_count; ++i) {
      need(scans[i], "scan");
      std::optional<rivlpr::Pose> p;
      for (size_t k = 0; k < pose_sets && !p; ++k) p = rivlpr::find_pose(poses[k]->poses, scans[i]->scan.timestamp);
      if (!p) {
        rivlpr::fail(rivlpr::ErrorCode::kArgument, fmt::format("no pose for scan '{}' (t = {})", scans[i]->scan.id,
                                                               scans[i]->scan.timestamp));
      }
      seq.scans.push_back(scans[i]->scan);
      seq.poses.push_back(*p);
    }
    const std::string echo = rivlpr::format_config(cfg->cfg);
    rivlpr::Trainer trainer(std::move(seq), cfg->cfg.setup(), echo);
    rivlpr::Checkpoint ckp = resume_path ? rivlpr::load_checkpoint(resume_path) : trainer.initial_checkpoint();
    const auto trace = trainer.run(ckp, -1, [&](const rivlpr::TraceRow& r) {
      if (callback) {
        const rivlpr_train_row row{r.step, r.lr, r.loss_p, r.loss_tsap, r.loss_final, r.batch_loss};
        callback(&row, user);
      }
    });
    rivlpr::save_checkpoint(ckp_path, ckp);
    if (trace_path) {
      std::ofstream f(trace_path, std::ios::binary);
      if (!f) rivlpr::fail(rivlpr::ErrorCode::kIo, std::string("cannot write ") + trace_path);
      f << rivlpr::trace_csv(trace);
    }
  });
}

rivlpr_status rivlpr_evaluate(const rivlpr_config* cfg, const rivlpr_db* db, const rivlpr_db* queries,
                              const char* out_stem, rivlpr_report* report) {
  return guarded([&] {
    need(cfg, "cfg");
    need(db, "db");
    const bool intra = cfg->cfg.eval.mode == rivlpr::ProtocolMode::kIntra;
    if (!intra) need(queries, "queries");
    const rivlpr::DescriptorDB& q = queries ? queries->db : db->db;
    if (q.count() > 0 && db->db.count() > 0 && q.dim != db->db.dim) {
      rivlpr::fail(rivlpr::ErrorCode::kShape,
                   fmt::format("query descriptors have dimension {} but the database holds {}", q.dim, db->db.dim));
    }
    const rivlpr::EvalReport r = rivlpr::run_protocol(db->db, q, cfg->cfg.eval);
    if (out_stem) rivlpr::save_report(out_stem, r);
    if (report) *report = {r.queries, r.revisits, r.recall_at_1, r.max_f1, r.f1_threshold};
  });
}

rivlpr_status rivlpr_synthesize(const rivlpr_config* cfg, const char* out_dir) {
  return guarded([&] {
    need(cfg, "cfg");
    need(out_dir, "out_dir");
    rivlpr::SyntheticSpec spec = cfg->cfg.synthetic;
    spec.sensor = cfg->cfg.riv;
    const auto sessions = rivlpr::make_sessions(spec);
    for (size_t k = 0; k < sessions.size(); ++k) {
      const std::filesystem::path dir = std::filesystem::path(out_dir) / fmt::format("session{}", k);
      std::filesystem::create_directories(dir);
      for (const rivlpr::Scan& s : sessions[k].scans) {
        rivlpr::save_scan(dir / fmt::format("{:010.3f}.bin", s.timestamp), s, rivlpr::ScanFormat::kXyzrBin);
      }
      rivlpr::save_poses(dir / "poses.txt", sessions[k].poses);
      rivlpr::save_poses(dir / "poses_true.txt", sessions[k].true_poses);
    }
  });
}

}  // extern "C"
