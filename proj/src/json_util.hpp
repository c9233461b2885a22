#pragma once

#include <json.hpp>
#include <optional>
#include <string>
#include <vector>

#include "robarch/tensor.hpp"

namespace robarch::detail {

using nlohmann::json;

inline std::string field_path(const std::string& scope, const std::string& key) {
  return scope.empty() ? key : scope + "." + key;
}

[[noreturn]] inline void field_error(const std::string& scope, const std::string& key,
                                     const std::string& expected, const json& got) {
  throw ConfigError(field_path(scope, key) + ": expected " + expected + ", got " + got.dump());
}

template <class T>
T read_field(const json& j, const std::string& scope, const std::string& key, const T& fallback,
             const std::string& expected) {
  if (!j.is_object() || !j.contains(key)) return fallback;
  const json& v = j.at(key);
  try {
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) field_error(scope, key, expected, v);
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_integer()) field_error(scope, key, expected, v);
      if constexpr (std::is_unsigned_v<T>) {
        if (v.get<long long>() < 0) field_error(scope, key, expected, v);
      }
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!v.is_number()) field_error(scope, key, expected, v);
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!v.is_string()) field_error(scope, key, expected, v);
    }
    return v.get<T>();
  } catch (const json::exception&) {
    field_error(scope, key, expected, v);
  }
}

template <class Enum, std::size_t N>
Enum read_enum(const json& j, const std::string& scope, const std::string& key, Enum fallback,
               const std::pair<const char*, Enum> (&names)[N]) {
  std::string expected = "one of ";
  for (std::size_t i = 0; i < N; ++i) expected += (i ? "|" : "") + std::string(names[i].first);
  if (!j.is_object() || !j.contains(key)) return fallback;
  const json& v = j.at(key);
  if (!v.is_string()) field_error(scope, key, expected, v);
  for (const auto& [name, value] : names) {
    if (v.get<std::string>() == name) return value;
  }
  field_error(scope, key, expected, v);
}

template <class Enum, std::size_t N>
const char* enum_name(Enum value, const std::pair<const char*, Enum> (&names)[N]) {
  for (const auto& [name, v] : names) {
    if (v == value) return name;
  }
  return "?";
}

inline void reject_unknown_keys(const json& j, const std::string& scope,
                                const std::vector<std::string>& known) {
  if (!j.is_object()) throw ConfigError((scope.empty() ? "config" : scope) + ": expected an object");
  for (const auto& [k, v] : j.items()) {
    bool found = false;
    for (const auto& name : known) found = found || name == k;
    if (!found) throw ConfigError(field_path(scope, k) + ": unknown field");
  }
}

}  // namespace robarch::detail
