#include "rivlpr/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <numbers>
#include <sstream>

#include <fmt/format.h>

namespace rivlpr {

namespace {

struct Field {
  std::string section;
  std::string key;
  std::function<void(PipelineConfig&, const std::string&)> set;
  std::function<std::string(const PipelineConfig&)> get;
  bool in_dump = true;
};

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <class T>
T parse_number(const std::string& text, const std::string& key) {
  T v{};
  const char* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc() || ptr != end) fail(ErrorCode::kArgument, "config: bad value '" + text + "' for " + key);
  return v;
}

bool parse_bool(const std::string& text, const std::string& key) {
  if (text == "true" || text == "1" || text == "yes") return true;
  if (text == "false" || text == "0" || text == "no") return false;
  fail(ErrorCode::kArgument, "config: bad boolean '" + text + "' for " + key);
}

template <class T, class Member>
Field number(std::string section, std::string key, Member member) {
  const std::string full = section + "." + key;
  return {section, key,
          [member, full](PipelineConfig& c, const std::string& v) { member(c) = parse_number<T>(v, full); },
          [member](const PipelineConfig& c) { return fmt::format("{}", member(const_cast<PipelineConfig&>(c))); }};
}

#define RIVLPR_FIELD(T, section, key, expr) \
  number<T>(section, key, [](PipelineConfig& c) -> T& { return expr; })

const std::vector<Field>& fields() {
  static const std::vector<Field> table = [] {
    std::vector<Field> f = {
        RIVLPR_FIELD(int, "riv", "width", c.riv.width),
        RIVLPR_FIELD(int, "riv", "height", c.riv.height),
        RIVLPR_FIELD(double, "riv", "fov_up", c.riv.fov_up),
        RIVLPR_FIELD(double, "riv", "fov_total", c.riv.fov_total),
        RIVLPR_FIELD(double, "riv", "max_range", c.riv.max_range),
        RIVLPR_FIELD(int, "riv", "knn_k", c.riv.knn_k),
        RIVLPR_FIELD(int, "riv", "wrap_cols", c.riv.wrap_cols),
        RIVLPR_FIELD(double, "riv", "normal_eps", c.riv.normal_eps),

        RIVLPR_FIELD(int, "augment", "yaw_shift", c.augment.yaw_shift),
        RIVLPR_FIELD(double, "augment", "square_mask_ratio_max", c.augment.square_mask_ratio_max),
        RIVLPR_FIELD(double, "augment", "cyl_mask_width_max", c.augment.cyl_mask_width_max),
        RIVLPR_FIELD(int, "augment", "line_mask_count_max", c.augment.line_mask_count_max),
        RIVLPR_FIELD(std::uint64_t, "augment", "rng_seed", c.augment.rng_seed),

        RIVLPR_FIELD(int, "encoder", "channels", c.encoder.channels),
        RIVLPR_FIELD(int, "encoder", "blocks", c.encoder.blocks),
        RIVLPR_FIELD(int, "encoder", "adapter_interval", c.encoder.adapter_interval),
        RIVLPR_FIELD(int, "encoder", "adapter_hidden", c.encoder.adapter_hidden),
        RIVLPR_FIELD(std::uint64_t, "encoder", "seed", c.encoder.seed),

        RIVLPR_FIELD(int, "aggregate", "clusters", c.aggregate.clusters),
        RIVLPR_FIELD(int, "aggregate", "cluster_dim", c.aggregate.cluster_dim),
        RIVLPR_FIELD(int, "aggregate", "global_dim", c.aggregate.global_dim),
        RIVLPR_FIELD(int, "aggregate", "token_hidden", c.aggregate.token_hidden),
        RIVLPR_FIELD(int, "aggregate", "sinkhorn_iters", c.aggregate.sinkhorn_iters),
        RIVLPR_FIELD(double, "aggregate", "sinkhorn_reg", c.aggregate.sinkhorn_reg),

        RIVLPR_FIELD(double, "mining", "rho_valid", c.mining.rho_valid),
        RIVLPR_FIELD(double, "mining", "mad_k", c.mining.mad_k),
        RIVLPR_FIELD(int, "mining", "v_dist", c.mining.v_dist),
        RIVLPR_FIELD(int, "mining", "h_dist", c.mining.h_dist),
        RIVLPR_FIELD(int, "mining", "max_positives", c.mining.max_positives),
        RIVLPR_FIELD(int, "mining", "max_negatives", c.mining.max_negatives),
        RIVLPR_FIELD(double, "mining", "voxel", c.mining.voxel),
        RIVLPR_FIELD(double, "mining", "positive_radius", c.mining.positive_radius),
        RIVLPR_FIELD(int, "mining", "icp_max_iter", c.mining.icp_max_iter),
        RIVLPR_FIELD(double, "mining", "icp_tol", c.mining.icp_tol),

        RIVLPR_FIELD(double, "loss", "tau_l", c.loss.tau_l),
        RIVLPR_FIELD(double, "loss", "tau_g", c.loss.tau_g),
        RIVLPR_FIELD(int, "loss", "truncation", c.loss.truncation),
        RIVLPR_FIELD(double, "loss", "lambda_mix", c.loss.lambda_mix),

        RIVLPR_FIELD(int, "train", "epochs", c.train.epochs),
        RIVLPR_FIELD(int, "train", "max_steps", c.train.max_steps),
        RIVLPR_FIELD(int, "train", "batch_size", c.train.batch_size),
        RIVLPR_FIELD(double, "train", "learning_rate", c.train.learning_rate),
        RIVLPR_FIELD(double, "train", "warmup_fraction", c.train.warmup_fraction),
        RIVLPR_FIELD(double, "train", "weight_decay", c.train.weight_decay),
        RIVLPR_FIELD(double, "train", "beta1", c.train.beta1),
        RIVLPR_FIELD(double, "train", "beta2", c.train.beta2),
        RIVLPR_FIELD(double, "train", "adam_eps", c.train.adam_eps),
        RIVLPR_FIELD(std::uint64_t, "train", "seed", c.train.seed),
        RIVLPR_FIELD(double, "train", "positive_radius", c.train.positive_radius),
        RIVLPR_FIELD(double, "train", "negative_floor", c.train.negative_floor),
        RIVLPR_FIELD(double, "train", "pair_subsample", c.train.pair_subsample),
        RIVLPR_FIELD(double, "train", "sample_spacing", c.train.sample_spacing),

        RIVLPR_FIELD(double, "eval", "positive_radius", c.eval.positive_radius),
        RIVLPR_FIELD(double, "eval", "temporal_exclusion", c.eval.temporal_exclusion),
        RIVLPR_FIELD(double, "eval", "warmup", c.eval.warmup),

        RIVLPR_FIELD(std::uint64_t, "synthetic", "seed", c.synthetic.seed),
        RIVLPR_FIELD(int, "synthetic", "sessions", c.synthetic.sessions),
        RIVLPR_FIELD(int, "synthetic", "scans_per_session", c.synthetic.scans_per_session),
        RIVLPR_FIELD(double, "synthetic", "spacing", c.synthetic.spacing),
        RIVLPR_FIELD(double, "synthetic", "block_x", c.synthetic.block_x),
        RIVLPR_FIELD(double, "synthetic", "block_y", c.synthetic.block_y),
        RIVLPR_FIELD(double, "synthetic", "dt", c.synthetic.dt),
        RIVLPR_FIELD(double, "synthetic", "lateral_offset", c.synthetic.lateral_offset),
        RIVLPR_FIELD(double, "synthetic", "yaw_noise", c.synthetic.yaw_noise),
        RIVLPR_FIELD(double, "synthetic", "pose_noise", c.synthetic.pose_noise),
        RIVLPR_FIELD(double, "synthetic", "range_noise", c.synthetic.range_noise),
        RIVLPR_FIELD(double, "synthetic", "sensor_height", c.synthetic.sensor_height),
    };
    f.push_back({"train", "augment",
                 [](PipelineConfig& c, const std::string& v) { c.train.augment = parse_bool(v, "train.augment"); },
                 [](const PipelineConfig& c) { return std::string(c.train.augment ? "true" : "false"); }});
    f.push_back({"eval", "mode",
                 [](PipelineConfig& c, const std::string& v) {
                   if (v == "intra") {
                     c.eval.mode = ProtocolMode::kIntra;
                   } else if (v == "inter") {
                     c.eval.mode = ProtocolMode::kInter;
                   } else {
                     fail(ErrorCode::kArgument, "config: eval.mode must be intra or inter, got '" + v + "'");
                   }
                 },
                 [](const PipelineConfig& c) { return std::string(c.eval.mode == ProtocolMode::kIntra ? "intra" : "inter"); }});
    // Degree spellings for hand-written files; dumps use radians.
    constexpr double kDeg = std::numbers::pi / 180.0;
    f.push_back({"riv", "fov_up_deg",
                 [kDeg](PipelineConfig& c, const std::string& v) { c.riv.fov_up = parse_number<double>(v, "riv.fov_up_deg") * kDeg; },
                 [kDeg](const PipelineConfig& c) { return fmt::format("{}", c.riv.fov_up / kDeg); }, false});
    f.push_back({"riv", "fov_total_deg",
                 [kDeg](PipelineConfig& c, const std::string& v) {
                   c.riv.fov_total = parse_number<double>(v, "riv.fov_total_deg") * kDeg;
                 },
                 [kDeg](const PipelineConfig& c) { return fmt::format("{}", c.riv.fov_total / kDeg); }, false});
    return f;
  }();
  return table;
}

#undef RIVLPR_FIELD

const Field& find_field(const std::string& section, const std::string& key) {
  for (const Field& f : fields()) {
    if (f.section == section && f.key == key) return f;
  }
  bool known_section = false;
  for (const Field& f : fields()) known_section = known_section || f.section == section;
  if (!known_section) fail(ErrorCode::kArgument, "config: unknown section [" + section + "]");
  fail(ErrorCode::kArgument, "config: unknown key '" + key + "' in [" + section + "]");
}

std::pair<std::string, std::string> split_dotted(const std::string& dotted) {
  const auto dot = dotted.find('.');
  if (dot == std::string::npos) fail(ErrorCode::kArgument, "config: expected section.key, got '" + dotted + "'");
  return {dotted.substr(0, dot), dotted.substr(dot + 1)};
}

}  // namespace

void PipelineConfig::validate() const {
  riv.validate();
  augment.validate(riv.width);
  encoder.validate();
  aggregate.validate();
  mining.validate();
  loss.validate();
  train.validate();
  eval.validate();
  synthetic.validate();
  require(riv.height % kPatchSize == 0 && riv.width % kPatchSize == 0,
          "config: riv.height and riv.width must be multiples of 14");
}

TrainSetup PipelineConfig::setup() const { return {model(), mining, loss, augment, train}; }

PipelineConfig parse_config(const std::string& text) {
  PipelineConfig cfg;
  std::istringstream in(text);
  std::string line, section;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') fail(ErrorCode::kArgument, fmt::format("config line {}: malformed section header", lineno));
      section = trim(line.substr(1, line.size() - 2));
      bool known = false;
      for (const Field& f : fields()) known = known || f.section == section;
      if (!known) fail(ErrorCode::kArgument, fmt::format("config line {}: unknown section [{}]", lineno, section));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) fail(ErrorCode::kArgument, fmt::format("config line {}: expected key = value", lineno));
    if (section.empty()) fail(ErrorCode::kArgument, fmt::format("config line {}: key outside a section", lineno));
    find_field(section, trim(line.substr(0, eq))).set(cfg, trim(line.substr(eq + 1)));
  }
  cfg.synthetic.sensor = cfg.riv;
  cfg.validate();
  return cfg;
}

PipelineConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::kIo, "cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string format_config(const PipelineConfig& cfg) {
  std::string out, section;
  for (const Field& f : fields()) {
    if (!f.in_dump) continue;
    if (f.section != section) {
      section = f.section;
      out += (out.empty() ? "[" : "\n[") + section + "]\n";
    }
    out += f.key + " = " + f.get(cfg) + "\n";
  }
  return out;
}

void set_value(PipelineConfig& cfg, const std::string& dotted_key, const std::string& value) {
  const auto [section, key] = split_dotted(dotted_key);
  PipelineConfig next = cfg;
  find_field(section, key).set(next, trim(value));
  next.synthetic.sensor = next.riv;
  next.validate();
  cfg = next;
}

void apply_override(PipelineConfig& cfg, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) fail(ErrorCode::kArgument, "config: override must look like section.key=value");
  set_value(cfg, trim(assignment.substr(0, eq)), assignment.substr(eq + 1));
}

std::string get_value(const PipelineConfig& cfg, const std::string& dotted_key) {
  const auto [section, key] = split_dotted(dotted_key);
  return find_field(section, key).get(cfg);
}

std::vector<std::string> config_keys() {
  std::vector<std::string> out;
  for (const Field& f : fields()) out.push_back(f.section + "." + f.key);
  return out;
}

}  // namespace rivlpr
