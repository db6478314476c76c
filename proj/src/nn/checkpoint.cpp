#include "lcd/nn/checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace lcd::nn {
namespace {

constexpr char kMagic[8] = {'L', 'C', 'D', 'C', 'K', 'P', 'T', '\0'};

template <typename T>
constexpr std::uint8_t dtype_of() {
  return std::is_same_v<T, float> ? 0 : 1;
}

template <typename V>
void write_pod(std::ostream& out, const V& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(V));
}

template <typename V>
V read_pod(std::istream& in) {
  V v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(V));
  if (!in) throw Error(ErrorCode::kParse, "checkpoint: truncated file");
  return v;
}

}  // namespace

template <typename T>
void Checkpoint::put_raw(const std::string& name, const Shape& shape, const std::vector<T>& values) {
  if (values.size() != numel(shape)) throw Error(ErrorCode::kShapeMismatch, "checkpoint: value count for " + name);
  Entry e;
  e.dtype = dtype_of<T>();
  e.shape = shape;
  e.bytes.resize(values.size() * sizeof(T));
  if (!values.empty()) std::memcpy(e.bytes.data(), values.data(), e.bytes.size());
  entries_[name] = std::move(e);
}

template <typename T>
void Checkpoint::put(const std::string& name, const Tensor<T>& t) {
  put_raw(name, t.shape(), t.values());
}

const Checkpoint::Entry& Checkpoint::entry(const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw Error(ErrorCode::kShapeMismatch, "checkpoint: missing tensor " + name);
  return it->second;
}

template <typename T>
std::vector<T> Checkpoint::get_raw(const std::string& name, const Shape& expected) const {
  const Entry& e = entry(name);
  if (e.dtype != dtype_of<T>()) throw Error(ErrorCode::kShapeMismatch, "checkpoint: dtype differs for " + name);
  if (e.shape != expected)
    throw Error(ErrorCode::kShapeMismatch, "checkpoint: tensor " + name + " has shape " + shape_string(e.shape) +
                                               ", expected " + shape_string(expected));
  std::vector<T> out(numel(e.shape));
  if (!out.empty()) std::memcpy(out.data(), e.bytes.data(), e.bytes.size());
  return out;
}

template <typename T>
void Checkpoint::load_into(const std::string& name, Tensor<T>& t) const {
  t.values() = get_raw<T>(name, t.shape());
}

std::vector<std::string> Checkpoint::names() const {
  std::vector<std::string> out;
  for (const auto& [k, v] : entries_) out.push_back(k);
  return out;
}

void Checkpoint::put_params(const ParamList<float>& params, const std::string& prefix) {
  for (const auto& p : params) put(prefix + p.name, p.tensor);
}

void Checkpoint::load_params(ParamList<float>& params, const std::string& prefix) const {
  for (auto& p : params) load_into(prefix + p.name, p.tensor);
}

void Checkpoint::put_optimizer(Adam<float>& adam, const std::string& prefix) {
  const auto& params = adam.params();
  for (std::size_t k = 0; k < params.size(); ++k) {
    put_raw(prefix + ".m." + params[k].name, params[k].tensor.shape(), adam.first_moments()[k]);
    put_raw(prefix + ".v." + params[k].name, params[k].tensor.shape(), adam.second_moments()[k]);
  }
  metadata[prefix + ".steps"] = adam.steps();
  metadata[prefix + ".lr"] = adam.lr();
}

void Checkpoint::load_optimizer(Adam<float>& adam, const std::string& prefix) const {
  const auto& params = adam.params();
  for (std::size_t k = 0; k < params.size(); ++k) {
    adam.first_moments()[k] = get_raw<float>(prefix + ".m." + params[k].name, params[k].tensor.shape());
    adam.second_moments()[k] = get_raw<float>(prefix + ".v." + params[k].name, params[k].tensor.shape());
  }
  adam.set_steps(metadata.at(prefix + ".steps").get<std::int64_t>());
  adam.set_lr(metadata.at(prefix + ".lr").get<double>());
}

void Checkpoint::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kIo, "checkpoint: cannot write " + path.string());
  out.write(kMagic, sizeof(kMagic));
  write_pod(out, kVersion);
  const std::string meta = metadata.dump();
  write_pod<std::uint64_t>(out, meta.size());
  out.write(meta.data(), static_cast<std::streamsize>(meta.size()));
  write_pod<std::uint64_t>(out, entries_.size());
  for (const auto& [name, e] : entries_) {
    write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_pod(out, e.dtype);
    write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(e.shape.size()));
    for (std::size_t d : e.shape) write_pod<std::uint64_t>(out, d);
    out.write(e.bytes.data(), static_cast<std::streamsize>(e.bytes.size()));
  }
  if (!out) throw Error(ErrorCode::kIo, "checkpoint: write failed for " + path.string());
}

Checkpoint Checkpoint::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "checkpoint: cannot open " + path.string());
  char magic[sizeof(kMagic)];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw Error(ErrorCode::kParse, "checkpoint: bad magic in " + path.string());
  const auto version = read_pod<std::uint32_t>(in);
  if (version != kVersion)
    throw Error(ErrorCode::kVersionMismatch, "checkpoint: unsupported version " + std::to_string(version));
  Checkpoint ck;
  std::string meta(read_pod<std::uint64_t>(in), '\0');
  in.read(meta.data(), static_cast<std::streamsize>(meta.size()));
  try {
    ck.metadata = nlohmann::json::parse(meta);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kParse, std::string("checkpoint: metadata: ") + e.what());
  }
  const auto count = read_pod<std::uint64_t>(in);
  for (std::uint64_t i = 0; i < count; ++i) {
    std::string name(read_pod<std::uint32_t>(in), '\0');
    in.read(name.data(), static_cast<std::streamsize>(name.size()));
    Entry e;
    e.dtype = read_pod<std::uint8_t>(in);
    if (e.dtype > 1) throw Error(ErrorCode::kParse, "checkpoint: unknown dtype for " + name);
    const auto nd = read_pod<std::uint32_t>(in);
    for (std::uint32_t d = 0; d < nd; ++d) e.shape.push_back(read_pod<std::uint64_t>(in));
    e.bytes.resize(numel(e.shape) * (e.dtype == 0 ? sizeof(float) : sizeof(double)));
    in.read(e.bytes.data(), static_cast<std::streamsize>(e.bytes.size()));
    if (!in) throw Error(ErrorCode::kParse, "checkpoint: truncated tensor " + name);
    ck.entries_[name] = std::move(e);
  }
  return ck;
}

bool Checkpoint::operator==(const Checkpoint& other) const {
  return metadata == other.metadata && entries_ == other.entries_;
}

template void Checkpoint::put(const std::string&, const Tensor<float>&);
template void Checkpoint::put(const std::string&, const Tensor<double>&);
template void Checkpoint::put_raw(const std::string&, const Shape&, const std::vector<float>&);
template void Checkpoint::put_raw(const std::string&, const Shape&, const std::vector<double>&);
template void Checkpoint::load_into(const std::string&, Tensor<float>&) const;
template void Checkpoint::load_into(const std::string&, Tensor<double>&) const;
template std::vector<float> Checkpoint::get_raw(const std::string&, const Shape&) const;
template std::vector<double> Checkpoint::get_raw(const std::string&, const Shape&) const;

}  // namespace lcd::nn
