#pragma once

// Parameter checkpoints: a JSON manifest naming every array with its shape
// and offset, next to a flat little-endian float64 blob.

#include "evod/gradcore.hpp"

#include <json.hpp>

#include <filesystem>
#include <stdexcept>
#include <string>

namespace evod {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr int kCheckpointVersion = 1;

/// Writes `<manifest>` and the blob `<manifest stem>.bin` beside it.
/// `extra` is stored verbatim under "extra".
void save_params(const grad::ParamList& params, const std::filesystem::path& manifest,
                 const nlohmann::json& extra = nlohmann::json::object());

/// Loads values into `params`. Names, order and shapes must match the
/// manifest exactly. Returns the "extra" object.
nlohmann::json load_params(const grad::ParamList& params, const std::filesystem::path& manifest);

/// Reads only the "extra" object of a manifest.
nlohmann::json read_checkpoint_extra(const std::filesystem::path& manifest);

}  // namespace evod
