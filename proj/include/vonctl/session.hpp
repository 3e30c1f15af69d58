#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "vonctl/io.hpp"
#include "vonctl/training.hpp"

namespace vonctl {

inline constexpr double kSliderMax = 120.0;
inline constexpr int kProtocolVersion = 1;

/// Read-only set of checkpoints keyed by file stem.
class ModelRegistry {
 public:
  ModelRegistry() = default;
  /// Loads every *.json checkpoint in `dir` (sorted by name).
  static ModelRegistry from_directory(const std::filesystem::path& dir);
  void add(const std::string& id, Checkpoint ck);
  std::vector<std::string> ids() const;
  bool contains(const std::string& id) const { return models_.count(id) != 0; }
  std::shared_ptr<const Checkpoint> get(const std::string& id) const;

 private:
  std::map<std::string, std::shared_ptr<const Checkpoint>> models_;
};

/// $VONCTL_CHECKPOINT_DIR if set, else `fallback`.
std::filesystem::path checkpoint_directory(const std::filesystem::path& fallback);

struct Frame {
  std::uint64_t tick = 0;
  Observation observation;
  LatentState state;
  Pressure u = rest_pressure();
};

/// One user's view of one model. Ticks advance the latent state by one model step.
class SimSession {
 public:
  SimSession(std::shared_ptr<const Checkpoint> ck, std::string model_id);

  const std::string& model_id() const { return id_; }
  const Checkpoint& checkpoint() const { return *ck_; }

  /// Clamps every channel to [0, kSliderMax].
  void set_pressures(const Pressure& u);
  const Pressure& pressures() const { return u_; }

  /// Throws DivergenceError and pauses the session when the state blows up.
  Frame tick();
  Frame current() const;
  bool paused() const { return paused_; }
  std::uint64_t ticks() const { return tick_; }
  const LatentState& state() const { return state_; }

  /// Stores the decoded observation with z = enc(observation). Dynamic saves
  /// also keep the decoded neighbours at z -+ dt zdot and the latent velocity
  /// the encoder assigns to them.
  const SavedState& save_state(bool is_static);
  const std::vector<SavedState>& saved() const { return saved_; }
  WaypointExport export_waypoints(int horizon) const;

  /// Back to (z0, 0) under u_rest; saved states are kept.
  void reset();

 private:
  std::shared_ptr<const Checkpoint> ck_;
  std::string id_;
  LatentState state_;
  Pressure u_;
  std::uint64_t tick_ = 0;
  bool paused_ = false;
  std::vector<SavedState> saved_;
};

// ---------------------------------------------------------------------------
// Wire protocol. Every message is a JSON object with a "type" field; kinds are
// hello, list_models, select_model, set_pressures, frame, save_state, export,
// reset and error.

/// Base64 of the little-endian f32 pixel grid.
std::string encode_pixels(const Observation& o);
Observation decode_pixels(const std::string& b64, std::size_t count);

nlohmann::json frame_message(const Frame& f, int height, int width);
nlohmann::json error_message(const std::string& message, const std::string& in_reply_to = "");

/// Protocol state of one connection: the registry plus at most one session.
class SessionController {
 public:
  explicit SessionController(std::shared_ptr<const ModelRegistry> registry);

  /// Greeting sent on connect; selects the first model when there is one.
  nlohmann::json hello();
  /// Replies to one client message, in order. Malformed or unknown messages
  /// produce an error reply and leave the session untouched.
  std::vector<nlohmann::json> handle(const nlohmann::json& msg);
  std::vector<nlohmann::json> handle_text(const std::string& text);
  /// Steps the active session; nullopt while paused or without a model. A
  /// divergence yields an error message once and pauses stepping.
  std::optional<nlohmann::json> tick();

  SimSession* session() { return session_.get(); }

 private:
  nlohmann::json hello_for_current() const;
  std::shared_ptr<const ModelRegistry> registry_;
  std::unique_ptr<SimSession> session_;
};

}  // namespace vonctl
