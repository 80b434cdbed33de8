#pragma once

#include <chrono>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "pen4rec/errors.hpp"

namespace pen4rec {

// Record of one artifact-producing command: the command name, every resolved
// setting (defaults materialized), and wall-clock bounds. Written as
// key=value lines next to the artifact so a run can be reproduced from it.
struct RunManifest {
  std::string command;
  std::int64_t started_at = 0;
  std::int64_t finished_at = 0;
  std::vector<std::pair<std::string, std::string>> entries;

  static std::int64_t now() {
    return std::chrono::duration_cast<std::chrono::seconds>(
               std::chrono::system_clock::now().time_since_epoch())
        .count();
  }

  void add(const std::string& key, const std::string& value) {
    entries.emplace_back(key, value);
  }
  void add(const std::string& key, const char* value) { entries.emplace_back(key, value); }
  void add(const std::string& key, std::uint64_t value) {
    entries.emplace_back(key, std::to_string(value));
  }
  void add(const std::string& key, std::int64_t value) {
    entries.emplace_back(key, std::to_string(value));
  }
  void add(const std::string& key, double value) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", value);
    entries.emplace_back(key, buf);
  }

  void write(const std::string& path) const {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("cannot write " + path);
    out << "command=" << command << "\n"
        << "started_at=" << started_at << "\n"
        << "finished_at=" << finished_at << "\n";
    for (const auto& [k, v] : entries) out << k << "=" << v << "\n";
    if (!out) throw FormatError("write failed for " + path);
  }
};

}  // namespace pen4rec
