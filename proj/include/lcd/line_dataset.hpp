#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "lcd/line_geometry.hpp"
#include "lcd/nn/tensor.hpp"
#include "lcd/virtual_view.hpp"

namespace lcd {

inline constexpr int kBackgroundId = -1;

/// 96x64x3 virtual image quantized to bytes.
using VirtualImage8 = Image<std::uint8_t>;

VirtualImage8 quantize(const RgbImage& image);

struct LineRecord {
  Segment2D segment;
  Line3D line;
  VirtualImage8 image;
  int instance = kBackgroundId;  // ground-truth instance, kBackgroundId for walls/floor/ceiling
  int semantic = -1;
};

struct LineFrame {
  int scene_id = 0;
  int frame_id = 0;
  std::vector<LineRecord> lines;
};

using LineDataset = std::vector<LineFrame>;

void write_line_dataset(const std::filesystem::path& path, const LineDataset& data);
LineDataset read_line_dataset(const std::filesystem::path& path);

/// [N, 15] geometric vectors of the selected lines.
nn::Tensor<float> geometry_tensor(const LineFrame& frame, const std::vector<std::size_t>& rows);
/// [N, 3, 64, 96] in [0, 1].
nn::Tensor<float> image_tensor(const LineFrame& frame, const std::vector<std::size_t>& rows);

std::vector<std::size_t> all_rows(const LineFrame& frame);

}  // namespace lcd
