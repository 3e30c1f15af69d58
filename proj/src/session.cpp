#include "vonctl/session.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdlib>
#include <cstring>

#include <openssl/evp.h>

#include "vonctl/error.hpp"

namespace vonctl {

using nlohmann::json;

ModelRegistry ModelRegistry::from_directory(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw ContractViolation("not a directory: " + dir.string());
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".json") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  ModelRegistry r;
  for (const auto& f : files) {
    const std::string text = read_text_file(f);
    // Other JSON documents (configs, reports) may share the directory.
    if (text.find("\"vonctl-checkpoint\"") == std::string::npos) continue;
    r.add(f.stem().string(), checkpoint_from_json(text));
  }
  return r;
}

void ModelRegistry::add(const std::string& id, Checkpoint ck) {
  models_[id] = std::make_shared<const Checkpoint>(std::move(ck));
}

std::vector<std::string> ModelRegistry::ids() const {
  std::vector<std::string> out;
  for (const auto& [id, ck] : models_) out.push_back(id);
  return out;
}

std::shared_ptr<const Checkpoint> ModelRegistry::get(const std::string& id) const {
  auto it = models_.find(id);
  if (it == models_.end()) throw ContractViolation("unknown model '" + id + "'");
  return it->second;
}

std::filesystem::path checkpoint_directory(const std::filesystem::path& fallback) {
  const char* env = std::getenv("VONCTL_CHECKPOINT_DIR");
  return env && *env ? std::filesystem::path(env) : fallback;
}

// ---------------------------------------------------------------------------

SimSession::SimSession(std::shared_ptr<const Checkpoint> ck, std::string model_id)
    : ck_(std::move(ck)), id_(std::move(model_id)) {
  if (!ck_) throw ContractViolation("session needs a checkpoint");
  reset();
}

void SimSession::set_pressures(const Pressure& u) {
  if (!u.allFinite()) throw ContractViolation("pressures must be finite");
  u_ = u.cwiseMax(0.0).cwiseMin(kSliderMax);
}

Frame SimSession::tick() {
  if (paused_) throw ContractViolation("session is paused after a divergence; reset it");
  const LatentState next = step(ck_->model.dynamics, state_, u_);
  if (!next.finite()) {
    paused_ = true;
    throw DivergenceError(static_cast<int>(tick_ + 1), "latent state became non-finite");
  }
  state_ = next;
  ++tick_;
  return current();
}

Frame SimSession::current() const { return {tick_, ck_->model.decoder.decode(state_.z), state_, u_}; }

const SavedState& SimSession::save_state(bool is_static) {
  const Decoder& dec = ck_->model.decoder;
  const Encoder& enc = ck_->model.encoder;
  SavedState s;
  s.observation = dec.decode(state_.z);
  s.u = u_;
  s.z = enc.mean(s.observation);
  s.is_static = is_static;
  if (is_static) {
    s.zdot = Vec::Zero(s.z.size());
  } else {
    const double dt = kControlDt;
    s.previous = dec.decode(state_.z - dt * state_.zdot);
    s.next = dec.decode(state_.z + dt * state_.zdot);
    s.zdot = latent_velocity(*s.previous, s.observation, *s.next, enc, dt);
  }
  saved_.push_back(std::move(s));
  return saved_.back();
}

WaypointExport SimSession::export_waypoints(int horizon) const {
  if (horizon < 1) throw ContractViolation("export horizon must be positive");
  if (saved_.empty()) throw ContractViolation("nothing saved to export");
  return {id_, horizon, ck_->height, ck_->width, saved_};
}

void SimSession::reset() {
  state_ = LatentState::at_rest(ck_->z0());
  u_ = ck_->u_rest;
  tick_ = 0;
  paused_ = false;
}

// ---------------------------------------------------------------------------
// Protocol

std::string encode_pixels(const Observation& o) {
  std::string raw(o.size() * 4, '\0');
  for (Eigen::Index i = 0; i < o.size(); ++i) {
    const std::uint32_t bits = std::bit_cast<std::uint32_t>(static_cast<float>(o[i]));
    for (int b = 0; b < 4; ++b) raw[4 * i + b] = static_cast<char>((bits >> (8 * b)) & 0xff);
  }
  std::string out(4 * ((raw.size() + 2) / 3), '\0');
  const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()),
                                reinterpret_cast<const unsigned char*>(raw.data()), static_cast<int>(raw.size()));
  out.resize(static_cast<std::size_t>(n));
  return out;
}

Observation decode_pixels(const std::string& b64, std::size_t count) {
  if (b64.size() % 4 != 0) throw FormatError("pixel payload is not base64");
  std::string raw(b64.size() / 4 * 3, '\0');
  const int n = EVP_DecodeBlock(reinterpret_cast<unsigned char*>(raw.data()),
                                reinterpret_cast<const unsigned char*>(b64.data()), static_cast<int>(b64.size()));
  if (n < 0) throw FormatError("pixel payload is not base64");
  const std::size_t padding = b64.empty() ? 0 : (b64.back() == '=') + (b64.size() > 1 && b64[b64.size() - 2] == '=');
  if (static_cast<std::size_t>(n) - padding != 4 * count) throw FormatError("pixel payload has the wrong size");
  Observation o(static_cast<Eigen::Index>(count));
  for (std::size_t i = 0; i < count; ++i) {
    std::uint32_t bits = 0;
    for (int b = 0; b < 4; ++b) bits |= std::uint32_t(static_cast<unsigned char>(raw[4 * i + b])) << (8 * b);
    o[static_cast<Eigen::Index>(i)] = std::bit_cast<float>(bits);
  }
  return o;
}

namespace {

json vec_json(const Vec& v) { return json(std::vector<double>(v.data(), v.data() + v.size())); }
json pressure_json(const Pressure& p) { return json{p[0], p[1], p[2], p[3]}; }

}  // namespace

json frame_message(const Frame& f, int height, int width) {
  return {{"type", "frame"},        {"tick", f.tick},
          {"height", height},       {"width", width},
          {"pixels", encode_pixels(f.observation)},
          {"z", vec_json(f.state.z)}, {"zdot", vec_json(f.state.zdot)},
          {"u", pressure_json(f.u)}};
}

json error_message(const std::string& message, const std::string& in_reply_to) {
  json j{{"type", "error"}, {"message", message}};
  if (!in_reply_to.empty()) j["in_reply_to"] = in_reply_to;
  return j;
}

SessionController::SessionController(std::shared_ptr<const ModelRegistry> registry) : registry_(std::move(registry)) {
  if (!registry_) throw ContractViolation("controller needs a registry");
}

json SessionController::hello() {
  if (!session_) {
    const auto ids = registry_->ids();
    if (!ids.empty()) session_ = std::make_unique<SimSession>(registry_->get(ids.front()), ids.front());
  }
  return hello_for_current();
}

json SessionController::hello_for_current() const {
  json j{{"type", "hello"},
         {"protocol", kProtocolVersion},
         {"models", registry_->ids()},
         {"tick_hz", 1.0 / kControlDt},
         {"slider_max", kSliderMax},
         {"model", nullptr},
         {"overlay", nullptr}};
  if (!session_) return j;
  const Checkpoint& ck = session_->checkpoint();
  j["model"] = session_->model_id();
  j["family"] = family_name(ck.model.dynamics);
  j["latent_pairs"] = ck.model.latent_dim() / 2;
  j["height"] = ck.height;
  j["width"] = ck.width;
  j["u_rest"] = pressure_json(ck.u_rest);
  if (ck.model.decoder.kind == DecoderKind::keypoint_broadcast) {
    const KeypointDecoder& k = ck.model.decoder.keypoint;
    j["overlay"] = {{"affine", {{k.affine(0, 0), k.affine(0, 1)}, {k.affine(1, 0), k.affine(1, 1)}}},
                    {"offset", {k.offset[0], k.offset[1]}}};
  }
  return j;
}

std::vector<json> SessionController::handle_text(const std::string& text) {
  json msg;
  try {
    msg = json::parse(text);
  } catch (const json::parse_error&) {
    return {error_message("message is not valid JSON")};
  }
  return handle(msg);
}

std::vector<json> SessionController::handle(const json& msg) {
  if (!msg.is_object() || !msg.contains("type") || !msg["type"].is_string())
    return {error_message("message needs a string 'type'")};
  const std::string type = msg["type"].get<std::string>();
  try {
    if (type == "list_models") return {{{"type", "list_models"}, {"models", registry_->ids()}}};
    if (type == "select_model") {
      const std::string id = msg.at("model").get<std::string>();
      if (!registry_->contains(id)) return {error_message("unknown model '" + id + "'", type)};
      session_ = std::make_unique<SimSession>(registry_->get(id), id);
      return {hello_for_current()};
    }
    if (type == "hello" || type == "frame" || type == "error")
      return {error_message("'" + type + "' is sent by the server only", type)};
    if (type != "set_pressures" && type != "save_state" && type != "export" && type != "reset")
      return {error_message("unknown message type '" + type + "'", type)};
    if (!session_) return {error_message("no model selected", type)};

    if (type == "set_pressures") {
      const json& u = msg.at("u");
      if (!u.is_array() || u.size() != 4) return {error_message("'u' needs 4 pressures", type)};
      Pressure p;
      for (int c = 0; c < 4; ++c) {
        if (!u[c].is_number()) return {error_message("'u' needs 4 pressures", type)};
        p[c] = u[c].get<double>();
      }
      if (!p.allFinite()) return {error_message("pressures must be finite", type)};
      session_->set_pressures(p);
      return {};
    }
    if (type == "save_state") {
      const bool is_static = msg.value("static", true);
      const SavedState& s = session_->save_state(is_static);
      return {{{"type", "save_state"},
               {"index", session_->saved().size() - 1},
               {"static", s.is_static},
               {"tick", session_->ticks()},
               {"u", pressure_json(s.u)},
               {"z", vec_json(s.z)},
               {"zdot", vec_json(s.zdot)},
               {"pixels", encode_pixels(s.observation)}}};
    }
    if (type == "export") {
      const int horizon = msg.value("horizon", 100);
      if (session_->saved().empty()) return {error_message("nothing saved to export", type)};
      return {{{"type", "export"},
               {"count", session_->saved().size()},
               {"text", waypoints_to_json(session_->export_waypoints(horizon))}}};
    }
    session_->reset();
    return {{{"type", "reset"}, {"tick", session_->ticks()}}};
  } catch (const json::exception& e) {
    return {error_message(std::string("malformed '") + type + "' message: " + e.what(), type)};
  } catch (const ContractViolation& e) {
    return {error_message(e.what(), type)};
  }
}

std::optional<json> SessionController::tick() {
  if (!session_ || session_->paused()) return std::nullopt;
  try {
    const Checkpoint& ck = session_->checkpoint();
    return frame_message(session_->tick(), ck.height, ck.width);
  } catch (const DivergenceError& e) {
    return error_message(std::string("model diverged, stepping paused until reset: ") + e.what());
  }
}

}  // namespace vonctl
