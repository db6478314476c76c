#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"
#include "lcd/nn/adam.hpp"
#include "lcd/nn/layers.hpp"

namespace lcd::nn {

/// Named tensors plus a JSON metadata block, stored in a versioned binary file.
class Checkpoint {
 public:
  static constexpr std::uint32_t kVersion = 1;

  nlohmann::json metadata = nlohmann::json::object();

  template <typename T>
  void put(const std::string& name, const Tensor<T>& t);
  template <typename T>
  void put_raw(const std::string& name, const Shape& shape, const std::vector<T>& values);

  bool contains(const std::string& name) const { return entries_.count(name) != 0; }
  std::vector<std::string> names() const;

  /// Copies the stored values into `t` in place; dtype and shape must match.
  template <typename T>
  void load_into(const std::string& name, Tensor<T>& t) const;
  template <typename T>
  std::vector<T> get_raw(const std::string& name, const Shape& expected) const;

  void put_params(const ParamList<float>& params, const std::string& prefix = "");
  void load_params(ParamList<float>& params, const std::string& prefix = "") const;
  void put_optimizer(Adam<float>& adam, const std::string& prefix);
  void load_optimizer(Adam<float>& adam, const std::string& prefix) const;

  void save(const std::filesystem::path& path) const;
  static Checkpoint load(const std::filesystem::path& path);

  bool operator==(const Checkpoint& other) const;

 private:
  struct Entry {
    std::uint8_t dtype = 0;  // 0 = f32, 1 = f64
    Shape shape;
    std::vector<char> bytes;
    bool operator==(const Entry&) const = default;
  };
  const Entry& entry(const std::string& name) const;
  std::map<std::string, Entry> entries_;
};

}  // namespace lcd::nn
