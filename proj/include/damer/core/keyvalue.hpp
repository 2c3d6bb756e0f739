// Copyright 2026 The damer Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cstddef>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <variant>

#include "damer/core/error.hpp"

namespace damer {

/// Typed destination for one config key.
using ConfigField = std::variant<double*, std::size_t*, int*, bool*, std::string*>;

/// Applies `key = value` lines to `fields` ('#' starts a comment) and returns
/// the keys seen. Unknown keys and unparsable values raise ConfigError naming
/// the key.
inline std::set<std::string> apply_key_values(const std::string& text, const std::map<std::string, ConfigField>& fields) {
  std::set<std::string> seen;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  auto trim = [](const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    const auto e = s.find_last_not_of(" \t\r");
    return b == std::string::npos ? std::string{} : s.substr(b, e - b + 1);
  };
  while (std::getline(in, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      fail(ErrorKind::kConfigError, "line " + std::to_string(line_no) + ": expected key = value");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    const auto it = fields.find(key);
    if (it == fields.end()) fail(ErrorKind::kConfigError, "unknown key '" + key + "'");
    seen.insert(key);
    try {
      std::visit(
          [&](auto* p) {
            using V = std::remove_pointer_t<decltype(p)>;
            std::size_t used = 0;
            if constexpr (std::is_same_v<V, double>) {
              *p = std::stod(value, &used);
            } else if constexpr (std::is_same_v<V, int>) {
              *p = std::stoi(value, &used);
            } else if constexpr (std::is_same_v<V, bool>) {
              if (value == "1" || value == "true") {
                *p = true;
              } else if (value == "0" || value == "false") {
                *p = false;
              } else {
                throw std::invalid_argument("bool");
              }
              used = value.size();
            } else if constexpr (std::is_same_v<V, std::string>) {
              *p = value;
              used = value.size();
            } else {
              if (!value.empty() && value.front() == '-') throw std::invalid_argument("negative");
              *p = static_cast<V>(std::stoull(value, &used));
            }
            if (used != value.size()) throw std::invalid_argument("trailing");
          },
          it->second);
    } catch (const std::exception&) {
      fail(ErrorKind::kConfigError, "bad value for key '" + key + "': '" + value + "'");
    }
  }
  return seen;
}

/// Sorted `key = value` lines, full double precision.
inline std::string format_key_values(const std::map<std::string, ConfigField>& fields) {
  std::ostringstream out;
  out.precision(17);
  for (const auto& [key, field] : fields) {
    out << key << " = ";
    std::visit(
        [&](auto* p) {
          using V = std::remove_pointer_t<decltype(p)>;
          if constexpr (std::is_same_v<V, bool>) {
            out << (*p ? 1 : 0);
          } else {
            out << *p;
          }
        },
        field);
    out << '\n';
  }
  return out.str();
}

}  // namespace damer
