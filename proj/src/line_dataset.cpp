#include "lcd/line_dataset.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

namespace lcd {
namespace {

constexpr char kMagic[8] = {'L', 'C', 'D', 'L', 'I', 'N', 'E', 'S'};
constexpr std::uint32_t kVersion = 1;

template <typename V>
void put(std::ostream& out, const V& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(V));
}

template <typename V>
V take(std::istream& in) {
  V v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(V));
  if (!in) throw Error(ErrorCode::kParse, "line dataset: truncated file");
  return v;
}

void put_vec(std::ostream& out, const Eigen::Vector3d& v) {
  for (int i = 0; i < 3; ++i) put(out, v[i]);
}

Eigen::Vector3d take_vec(std::istream& in) {
  Eigen::Vector3d v;
  for (int i = 0; i < 3; ++i) v[i] = take<double>(in);
  return v;
}

}  // namespace

VirtualImage8 quantize(const RgbImage& image) {
  VirtualImage8 out(image.width(), image.height(), image.channels(), 0);
  for (std::size_t i = 0; i < image.size(); ++i)
    out.values()[i] = static_cast<std::uint8_t>(std::lround(std::clamp(image.values()[i], 0.0f, 1.0f) * 255.0f));
  return out;
}

void write_line_dataset(const std::filesystem::path& path, const LineDataset& data) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kIo, "line dataset: cannot write " + path.string());
  out.write(kMagic, sizeof(kMagic));
  put(out, kVersion);
  put<std::uint64_t>(out, data.size());
  for (const auto& f : data) {
    put<std::int32_t>(out, f.scene_id);
    put<std::int32_t>(out, f.frame_id);
    put<std::uint64_t>(out, f.lines.size());
    for (const auto& r : f.lines) {
      for (double v : {r.segment.start.x(), r.segment.start.y(), r.segment.end.x(), r.segment.end.y()}) put(out, v);
      put_vec(out, r.line.start);
      put_vec(out, r.line.end);
      put_vec(out, r.line.normal_left);
      put_vec(out, r.line.normal_right);
      put(out, r.line.length);
      put<std::uint8_t>(out, r.line.occluded_start);
      put<std::uint8_t>(out, r.line.occluded_end);
      put<std::uint8_t>(out, static_cast<std::uint8_t>(r.line.type));
      put<std::int32_t>(out, r.instance);
      put<std::int32_t>(out, r.semantic);
      put<std::int32_t>(out, r.image.width());
      put<std::int32_t>(out, r.image.height());
      out.write(reinterpret_cast<const char*>(r.image.data()), static_cast<std::streamsize>(r.image.size()));
    }
  }
  if (!out) throw Error(ErrorCode::kIo, "line dataset: write failed for " + path.string());
}

LineDataset read_line_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "line dataset: cannot open " + path.string());
  char magic[sizeof(kMagic)];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw Error(ErrorCode::kParse, "line dataset: bad magic in " + path.string());
  if (take<std::uint32_t>(in) != kVersion) throw Error(ErrorCode::kVersionMismatch, "line dataset: version");
  LineDataset data(take<std::uint64_t>(in));
  for (auto& f : data) {
    f.scene_id = take<std::int32_t>(in);
    f.frame_id = take<std::int32_t>(in);
    f.lines.resize(take<std::uint64_t>(in));
    for (auto& r : f.lines) {
      r.segment.start.x() = take<double>(in);
      r.segment.start.y() = take<double>(in);
      r.segment.end.x() = take<double>(in);
      r.segment.end.y() = take<double>(in);
      r.line.start = take_vec(in);
      r.line.end = take_vec(in);
      r.line.normal_left = take_vec(in);
      r.line.normal_right = take_vec(in);
      r.line.length = take<double>(in);
      r.line.occluded_start = take<std::uint8_t>(in) != 0;
      r.line.occluded_end = take<std::uint8_t>(in) != 0;
      const auto type = take<std::uint8_t>(in);
      if (type > 2) throw Error(ErrorCode::kParse, "line dataset: bad line type");
      r.line.type = static_cast<LineType>(type);
      r.instance = take<std::int32_t>(in);
      r.semantic = take<std::int32_t>(in);
      const int w = take<std::int32_t>(in), h = take<std::int32_t>(in);
      if (w < 0 || h < 0 || w > 4096 || h > 4096) throw Error(ErrorCode::kParse, "line dataset: bad image size");
      r.image = VirtualImage8(w, h, 3, 0);
      in.read(reinterpret_cast<char*>(r.image.data()), static_cast<std::streamsize>(r.image.size()));
      if (!in) throw Error(ErrorCode::kParse, "line dataset: truncated image");
    }
  }
  return data;
}

std::vector<std::size_t> all_rows(const LineFrame& frame) {
  std::vector<std::size_t> rows(frame.lines.size());
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = i;
  return rows;
}

nn::Tensor<float> geometry_tensor(const LineFrame& frame, const std::vector<std::size_t>& rows) {
  nn::Tensor<float> t({rows.size(), static_cast<std::size_t>(kGeomDim)});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const GeomVector g = geom_vector(frame.lines.at(rows[i]).line);
    for (int c = 0; c < kGeomDim; ++c) t[i * kGeomDim + c] = static_cast<float>(g[c]);
  }
  return t;
}

nn::Tensor<float> image_tensor(const LineFrame& frame, const std::vector<std::size_t>& rows) {
  const std::size_t h = kVirtualHeight, w = kVirtualWidth;
  nn::Tensor<float> t({rows.size(), 3, h, w});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const VirtualImage8& img = frame.lines.at(rows[i]).image;
    if (!img.same_size(kVirtualWidth, kVirtualHeight) || img.channels() != 3)
      throw Error(ErrorCode::kShapeMismatch, "image tensor: virtual image must be 96x64x3");
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x)
          t[((i * 3 + c) * h + y) * w + x] = img.at(static_cast<int>(x), static_cast<int>(y), static_cast<int>(c)) / 255.0f;
  }
  return t;
}

}  // namespace lcd
