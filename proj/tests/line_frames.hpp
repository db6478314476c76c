#pragma once

#include <algorithm>
#include <array>
#include <random>

#include "lcd/line_dataset.hpp"

namespace testing_support {

// Lines grouped around per-instance anchors, each instance with its own colour, plus
// background lines spread on two walls.
// `layout_seed` fixes anchors and colours, so frames sharing it show the same instances.
inline lcd::LineFrame clustered_frame(int instances, int lines_per_instance, int background, std::uint64_t seed,
                                      int scene_id = 0, int frame_id = 0, std::uint64_t layout_seed = 0) {
  std::mt19937_64 rng(seed);
  std::mt19937_64 layout(layout_seed ? layout_seed : seed + 1000003);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  lcd::LineFrame f;
  f.scene_id = scene_id;
  f.frame_id = frame_id;
  auto add = [&](const Eigen::Vector3d& c, double spread, int instance, Eigen::Vector3d n, std::array<int, 3> rgb) {
    lcd::LineRecord r;
    const Eigen::Vector3d d = Eigen::Vector3d(u(rng), u(rng), u(rng)).normalized();
    const Eigen::Vector3d m = c + spread * Eigen::Vector3d(u(rng), u(rng), u(rng));
    r.line.start = m - 0.2 * d;
    r.line.end = m + 0.2 * d;
    r.line.length = 0.4;
    r.line.normal_left = n;
    r.instance = instance;
    r.semantic = instance < 0 ? -1 : instance % 3;
    r.image = lcd::VirtualImage8(lcd::kVirtualWidth, lcd::kVirtualHeight, 3, 0);
    for (auto& v : r.image.values()) v = 0;
    for (int y = 0; y < lcd::kVirtualHeight; ++y)
      for (int x = 0; x < lcd::kVirtualWidth; ++x)
        for (int ch = 0; ch < 3; ++ch)
          r.image.at(x, y, ch) = static_cast<std::uint8_t>(std::clamp(rgb[ch] + static_cast<int>(20 * u(rng)), 0, 255));
    f.lines.push_back(std::move(r));
  };
  for (int k = 0; k < instances; ++k) {
    const Eigen::Vector3d c(1.5 * u(layout), 0.5 * u(layout), 3.0 + u(layout));
    const Eigen::Vector3d n = Eigen::Vector3d(u(layout), u(layout), u(layout)).normalized();
    const std::array<int, 3> rgb{static_cast<int>(128 + 120 * u(layout)), static_cast<int>(128 + 120 * u(layout)),
                                 static_cast<int>(128 + 120 * u(layout))};
    for (int i = 0; i < lines_per_instance; ++i) add(c, 0.15, k, n, rgb);
  }
  for (int i = 0; i < background; ++i) {
    const bool left = i % 2 == 0;
    add(Eigen::Vector3d(left ? -2.5 : 0.0, 0.0, left ? 3.0 : 5.5), 1.0, lcd::kBackgroundId,
        left ? Eigen::Vector3d(1, 0, 0) : Eigen::Vector3d(0, 0, -1), {200, 200, 190});
  }
  return f;
}

// Several scenes, each seen in several frames showing the same instances.
inline lcd::LineDataset multi_view_dataset(int scenes, int frames, int instances, std::uint64_t seed) {
  lcd::LineDataset out;
  for (int s = 0; s < scenes; ++s)
    for (int f = 0; f < frames; ++f)
      out.push_back(clustered_frame(instances, 5, 4, seed * 1000 + s * 50 + f, s, f, seed * 7 + s + 1));
  return out;
}

}  // namespace testing_support
