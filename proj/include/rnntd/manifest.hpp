#pragma once

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "rnntd/errors.hpp"

namespace rnntd {

inline constexpr const char* kLibraryVersion = "0.1.0";

/// 64-bit FNV-1a digest of a file's bytes, as 16 hex digits.
inline std::string file_digest(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path.string() + "' for hashing");
  std::uint64_t h = 0xcbf29ce484222325ULL;
  char buf[1 << 16];
  while (in) {
    in.read(buf, sizeof buf);
    for (std::streamsize i = 0; i < in.gcount(); ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 0x100000001b3ULL;
    }
  }
  char out[17];
  std::snprintf(out, sizeof out, "%016llx", static_cast<unsigned long long>(h));
  return out;
}

/// Exact text form of a double ("%a"), used for bit-for-bit comparisons.
inline std::string hex_double(double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%a", x);
  return buf;
}

/// Everything needed to re-run a command and check its numeric results.
struct RunManifest {
  std::string command;
  std::vector<std::string> argv;
  nlohmann::json config = nlohmann::json::object();
  std::uint64_t seed = 0;
  std::map<std::string, std::string> inputs;     // path -> digest
  std::map<std::string, std::string> artifacts;  // role -> path
  /// Numeric results as exact hex strings (e.g. final_validation_nll).
  std::map<std::string, std::string> results;
  double wall_clock_seconds = 0.0;
  std::string version = kLibraryVersion;

  void add_input(const std::filesystem::path& path) { inputs[path.string()] = file_digest(path); }

  nlohmann::json to_json() const {
    return {{"command", command},   {"argv", argv},       {"config", config},
            {"seed", seed},         {"inputs", inputs},   {"artifacts", artifacts},
            {"results", results},   {"wall_clock_seconds", wall_clock_seconds},
            {"version", version}};
  }

  static RunManifest from_json(const nlohmann::json& j) {
    try {
      RunManifest m;
      m.command = j.at("command").get<std::string>();
      m.argv = j.at("argv").get<std::vector<std::string>>();
      m.config = j.value("config", nlohmann::json::object());
      m.seed = j.value("seed", std::uint64_t{0});
      m.inputs = j.value("inputs", std::map<std::string, std::string>{});
      m.artifacts = j.value("artifacts", std::map<std::string, std::string>{});
      m.results = j.value("results", std::map<std::string, std::string>{});
      m.wall_clock_seconds = j.value("wall_clock_seconds", 0.0);
      m.version = j.value("version", std::string{});
      return m;
    } catch (const nlohmann::json::exception& e) {
      throw DataError(std::string("manifest: ") + e.what());
    }
  }

  /// Written to a temporary sibling and renamed, so readers never see a partial file.
  void save(const std::filesystem::path& path) const {
    const auto tmp = std::filesystem::path(path.string() + ".tmp");
    {
      std::ofstream out(tmp, std::ios::trunc);
      if (!out) throw DataError("cannot write manifest " + tmp.string());
      out << to_json().dump(2) << '\n';
      if (!out) throw DataError("manifest write failed");
    }
    std::filesystem::rename(tmp, path);
  }

  static RunManifest load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open manifest " + path.string());
    try {
      return from_json(nlohmann::json::parse(in));
    } catch (const nlohmann::json::parse_error& e) {
      throw DataError(std::string("manifest: ") + e.what());
    }
  }
};

}  // namespace rnntd
