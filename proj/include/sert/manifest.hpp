#pragma once

// Every CLI command writes a manifest next to its primary output with the
// fully materialized configuration (no hidden defaults), derived seeds,
// input/output paths and timing, so any run is reproducible from the
// manifest alone.

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "sert/io.hpp"

#ifndef SERT_VERSION
#define SERT_VERSION "dev"
#endif

namespace sert {

struct RunManifest {
  std::string command;
  std::map<std::string, std::string> config;  // every resolved option
  std::map<std::string, std::uint64_t> seeds;
  std::vector<std::string> inputs;
  std::vector<std::string> outputs;
  double duration_seconds = 0.0;

  void write(const std::filesystem::path& path) const {
    nlohmann::json j{{"command", command},
                     {"version", SERT_VERSION},
                     {"config", config},
                     {"seeds", seeds},
                     {"inputs", inputs},
                     {"outputs", outputs},
                     {"duration_seconds", duration_seconds}};
    atomic_write_file(path, j.dump(2) + "\n");
  }
};

inline std::filesystem::path manifest_path_for(
    const std::filesystem::path& primary_output) {
  return primary_output.string() + ".manifest.json";
}

}  // namespace sert
