#pragma once

// Strict reading of JSON objects into config structs: type-checked fields,
// dotted key paths in errors, unknown keys rejected by finish().

#include <cstdint>
#include <limits>
#include <set>
#include <string>
#include <type_traits>

#include <json.hpp>

#include "pmt/core/error.hpp"

namespace pmt {

class JsonFields {
 public:
  JsonFields(const nlohmann::json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(label() + " must be a JSON object");
  }

  void get(const char* key, int& out) { read(key, out); }
  void get(const char* key, long& out) { read(key, out); }
  void get(const char* key, std::uint64_t& out) { read(key, out); }
  void get(const char* key, double& out) { read(key, out); }
  void get(const char* key, bool& out) { read(key, out); }
  void get(const char* key, std::string& out) { read(key, out); }

  bool has(const char* key) const { return j_.contains(key); }
  const nlohmann::json& raw(const char* key) {
    seen_.insert(key);
    return j_.at(key);
  }
  std::string key_path(const std::string& key) const {
    return path_.empty() ? key : path_ + "." + key;
  }

  void finish() const {
    for (const auto& [k, v] : j_.items()) {
      if (!seen_.count(k)) throw ConfigError("unknown key " + key_path(k));
    }
  }

 private:
  std::string label() const { return path_.empty() ? "config" : path_; }

  template <typename T>
  void read(const char* key, T& out) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    const nlohmann::json& v = *it;
    const std::string where = key_path(key);
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) throw ConfigError(where + " must be a boolean");
      out = v.get<bool>();
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!v.is_string()) throw ConfigError(where + " must be a string");
      out = v.get<std::string>();
    } else if constexpr (std::is_same_v<T, double>) {
      if (!v.is_number()) throw ConfigError(where + " must be a number");
      out = v.get<double>();
    } else if constexpr (std::is_same_v<T, std::uint64_t>) {
      if (v.is_number_unsigned()) {
        out = v.get<std::uint64_t>();
      } else if (v.is_number_integer() && v.get<std::int64_t>() >= 0) {
        out = static_cast<std::uint64_t>(v.get<std::int64_t>());
      } else {
        throw ConfigError(where + " must be a non-negative integer");
      }
    } else {
      if (!v.is_number_integer()) throw ConfigError(where + " must be an integer");
      const std::int64_t x = v.get<std::int64_t>();
      if (x < static_cast<std::int64_t>(std::numeric_limits<T>::min()) ||
          x > static_cast<std::int64_t>(std::numeric_limits<T>::max())) {
        throw ConfigError(where + " out of range");
      }
      out = static_cast<T>(x);
    }
  }

  const nlohmann::json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

}  // namespace pmt
