#pragma once

#include <set>
#include <string>

#include "json.hpp"
#include "lcd/error.hpp"

namespace lcd {

/// Reads fields from a JSON object, remembering which keys were consumed so that
/// unknown keys can be rejected.
class StrictReader {
 public:
  StrictReader(const nlohmann::json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw Error(ErrorCode::kConfig, path_ + ": expected an object");
  }

  template <typename V>
  void read(const char* key, V& field) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    try {
      field = it->template get<V>();
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::kConfig, path_ + "." + key + ": " + e.what());
    }
  }

  /// Nested object handled by `fn(const json&, path)`.
  template <typename Fn>
  void nested(const char* key, Fn&& fn) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it != j_.end()) fn(*it, path_ + "." + key);
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!seen_.count(it.key())) throw Error(ErrorCode::kConfig, path_ + ": unknown key '" + it.key() + "'");
  }

 private:
  const nlohmann::json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

}  // namespace lcd
