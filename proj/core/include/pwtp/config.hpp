#pragma once

#include <filesystem>
#include <string>

#include "pwtp/datagen.hpp"
#include "pwtp/pwtp.hpp"
#include "pwtp/training.hpp"

namespace pwtp {

/// Everything a CLI run needs. Parsed from `key = value` lines grouped under
/// [pwtp], [train], [joint] and [data] headers; '#' starts a comment.
struct RunConfig {
  PwtpConfig pwtp;
  TrainConfig train;
  JointConfig joint;
  SynthSpec data;

  /// Cross-section checks (e.g. the data T must match the projector T).
  void validate() const;
};

/// Throws Error naming the line for syntax errors, unknown sections or keys,
/// duplicate keys and out-of-range values.
RunConfig parse_run_config(const std::string& text);
RunConfig load_run_config(const std::filesystem::path& path);

}  // namespace pwtp
