#pragma once

// Small deterministic objects for the pinned binary/text files under tests/golden.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "rivlpr/aggregate.hpp"
#include "rivlpr/mining.hpp"
#include "rivlpr/riv.hpp"
#include "rivlpr/rng.hpp"
#include "rivlpr/trainer.hpp"

namespace fixtures {

inline rivlpr::RivImage riv_image() {
  rivlpr::RivImage img(14, 28);
  for (int v = 0; v < img.height; ++v) {
    for (int u = 0; u < img.width; ++u) {
      if ((u * 7 + v * 3) % 5 == 0) continue;
      img.valid[static_cast<std::size_t>(v) * img.width + u] = 1;
      img.at(v, u, 0) = static_cast<float>(u + 1) / 32.0f;
      img.at(v, u, 1) = static_cast<float>(v + 1) / 16.0f;
      img.at(v, u, 2) = static_cast<float>((u * v) % 9) / 8.0f;
    }
  }
  return img;
}

inline rivlpr::DescriptorSet descriptor_set() {
  rivlpr::DescriptorSet set;
  set.dim = 6;
  for (int i = 0; i < 3; ++i) {
    rivlpr::Descriptor d;
    d.values = rivlpr::Vec::Zero(6);
    for (int k = 0; k < 6; ++k) d.values[k] = (i + 1) * 0.125 - k * 0.0625;
    d.values.normalize();
    rivlpr::DescriptorMeta m;
    m.id = "scan_" + std::to_string(i);
    m.timestamp = 0.5 * i;
    m.pose.translation = {1.0 * i, -2.0, 0.25};
    m.pose.rotation = Eigen::Quaterniond(1, 0, 0, 0);
    m.pose.timestamp = m.timestamp;
    set.add(d, m);
  }
  return set;
}

inline rivlpr::ModelConfig model_config() {
  rivlpr::ModelConfig c;
  c.riv.width = 56;
  c.riv.height = 14;
  c.encoder.channels = 4;
  c.encoder.blocks = 2;
  c.encoder.adapter_interval = 1;
  c.encoder.adapter_hidden = 2;
  c.aggregate.clusters = 2;
  c.aggregate.cluster_dim = 2;
  c.aggregate.global_dim = 2;
  c.aggregate.token_hidden = 4;
  return c;
}

inline rivlpr::Checkpoint checkpoint() {
  rivlpr::Checkpoint ckp;
  ckp.model = rivlpr::Model::random(model_config(), 5);
  const std::size_t n = ckp.model.parameter_count();
  for (std::size_t i = 0; i < n; ++i) {
    ckp.adam.m.push_back(0.001 * static_cast<double>(i));
    ckp.adam.v.push_back(1e-6 * static_cast<double>(i * i));
  }
  ckp.step = 7;
  ckp.encoder_hash = 0x0123456789abcdefull;
  ckp.config_echo = "[train]\nseed = 5\n";
  return ckp;
}

inline rivlpr::PatchPairSet pair_set() {
  rivlpr::PatchPairSet s;
  s.source_a = "a.bin";
  s.source_b = "b.bin";
  s.grid_a = {1, 4};
  s.grid_b = {1, 4};
  s.positives = {{0, 1}, {2, 2}};
  s.negatives_a = {{2, 3}, {0}};
  s.negatives_b = {{3}, {0, 1}};
  s.seed = 11;
  return s;
}

inline std::vector<std::uint8_t> read_bytes(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace fixtures
