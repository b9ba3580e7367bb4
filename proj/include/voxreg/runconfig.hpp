#pragma once

#include <cstdint>
#include <string>

#include "voxreg/losses.hpp"
#include "voxreg/network.hpp"

namespace voxreg {

/// Experiment configuration: the NetworkConfig plus run-level knobs. Loaded
/// from a key=value file; command-line flags override file values. Unknown
/// keys are rejected by name.
struct RunConfig {
  NetworkConfig network;
  SimKind sim = SimKind::lncc;
  std::uint64_t seed = 7;
  Index epochs = 200;
  Index dims = 32;   // cubic volume extent for generated data
  Index pairs = 10;  // generated pair count
  double amplitude = 3.0;   // synthetic field max displacement
  double smoothness = 4.0;  // synthetic field Gaussian std

  /// Applies `key=value`; throws on unknown key or malformed value.
  void set(const std::string& key, const std::string& value);

  /// Parses a key=value file ('#' comments and blank lines allowed).
  void load_file(const std::string& path);

  /// Effective configuration as key=value text (round-trips through set()).
  std::string to_text() const;
};

/// Writes the effective config into `dir`/config.effective.txt.
void write_effective_config(const RunConfig& config, const std::string& dir);

}  // namespace voxreg
