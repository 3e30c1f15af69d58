#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "vonctl/ocp.hpp"
#include "vonctl/plant.hpp"
#include "vonctl/training.hpp"

namespace vonctl {

inline constexpr int kDatasetFormatVersion = 1;
inline constexpr int kCheckpointFormatVersion = 1;
inline constexpr int kWaypointFormatVersion = 1;

// Dataset files: "SCRD" header followed by fixed-size little-endian frame records.
void write_dataset(std::ostream& out, const Dataset& data);
Dataset read_dataset(std::istream& in);
void save_dataset(const std::filesystem::path& path, const Dataset& data);
Dataset load_dataset(const std::filesystem::path& path);

// Structured-text documents (JSON). Doubles are written in shortest
// round-trip form, so read(write(x)) reproduces every value bit-exactly.
std::string config_to_json(const TrainConfig& config, int indent = 2);
/// Missing keys keep their defaults; unknown keys are rejected.
TrainConfig config_from_json(const std::string& text);

std::string checkpoint_to_json(const Checkpoint& ck);
Checkpoint checkpoint_from_json(const std::string& text);
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// One saved simulator state.
struct SavedState {
  Observation observation;  // decoded observation
  Pressure u = rest_pressure();
  Vec z;
  Vec zdot;  // zero when is_static
  bool is_static = true;
  // Decoded neighbours one step before and after, for dynamic saves; they let
  // any checkpoint derive its own velocity target.
  std::optional<Observation> previous;
  std::optional<Observation> next;
  bool operator==(const SavedState& o) const;
};

struct WaypointExport {
  std::string model_id;
  int horizon = 100;
  int height = 32;
  int width = 32;
  std::vector<SavedState> waypoints;
  bool operator==(const WaypointExport& o) const = default;
};

std::string waypoints_to_json(const WaypointExport& w);
WaypointExport waypoints_from_json(const std::string& text);
/// Observation targets of an export, ready for make_waypoints with any encoder.
std::vector<WaypointTarget> waypoint_targets(const WaypointExport& w);

std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, const std::string& text);

}  // namespace vonctl
