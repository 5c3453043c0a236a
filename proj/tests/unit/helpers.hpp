#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "rivlpr/geometry.hpp"
#include "rivlpr/riv.hpp"
#include "rivlpr/rng.hpp"

namespace testing_util {

inline rivlpr::Scan random_cloud(rivlpr::Rng& rng, int n, double extent) {
  rivlpr::Scan s;
  for (int i = 0; i < n; ++i) {
    s.points.push_back({rng.uniform(-extent, extent), rng.uniform(-extent, extent), rng.uniform(-extent, extent),
                        rng.uniform(0, 255)});
  }
  return s;
}

inline rivlpr::RivImage random_image(rivlpr::Rng& rng, int h, int w, double valid_fraction = 0.8) {
  rivlpr::RivImage img(h, w);
  for (int v = 0; v < h; ++v) {
    for (int u = 0; u < w; ++u) {
      if (rng.uniform() >= valid_fraction) continue;
      img.valid[static_cast<std::size_t>(v) * w + u] = 1;
      for (int c = 0; c < 3; ++c) img.at(v, u, c) = static_cast<float>(0.01 + 0.99 * rng.uniform());
    }
  }
  return img;
}

inline std::filesystem::path temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("rivlpr_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace testing_util
