#pragma once

#include <initializer_list>
#include <string>

#include <json.hpp>

#include "evcp/error.hpp"

namespace evcp::detail {

inline void reject_unknown_keys(const nlohmann::json& j, std::initializer_list<const char*> known,
                                const std::string& where) {
  require(j.is_object(), ErrorKind::config, where + ": expected a JSON object");
  for (const auto& item : j.items()) {
    bool found = false;
    for (const char* k : known) found = found || item.key() == k;
    require(found, ErrorKind::config, where + ": unknown key '" + item.key() + "'");
  }
}

/// Reads j[key] into out when present, reporting type errors as config errors.
template <typename T>
void read_field(const nlohmann::json& j, const char* key, T& out, const std::string& where) {
  auto it = j.find(key);
  if (it == j.end()) return;
  try {
    out = it->template get<T>();
  } catch (const nlohmann::json::exception& e) {
    raise(ErrorKind::config, where + "." + key + ": " + e.what());
  }
}

}  // namespace evcp::detail
