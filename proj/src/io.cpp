#include "vonctl/io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "vonctl/error.hpp"

namespace vonctl {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Little-endian binary helpers

namespace {

template <typename U>
void put_le(std::ostream& out, U v) {
  char b[sizeof(U)];
  for (std::size_t i = 0; i < sizeof(U); ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  out.write(b, sizeof(U));
}

template <typename U>
U get_le(std::istream& in) {
  unsigned char b[sizeof(U)];
  if (!in.read(reinterpret_cast<char*>(b), sizeof(U))) throw FormatError("dataset file is truncated");
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(b[i]) << (8 * i);
  return v;
}

void put_f64(std::ostream& out, double v) { put_le(out, std::bit_cast<std::uint64_t>(v)); }
void put_f32(std::ostream& out, float v) { put_le(out, std::bit_cast<std::uint32_t>(v)); }
double get_f64(std::istream& in) { return std::bit_cast<double>(get_le<std::uint64_t>(in)); }
float get_f32(std::istream& in) { return std::bit_cast<float>(get_le<std::uint32_t>(in)); }

constexpr char kDatasetMagic[4] = {'S', 'C', 'R', 'D'};

}  // namespace

void write_dataset(std::ostream& out, const Dataset& data) {
  const std::size_t P = static_cast<std::size_t>(data.frame_size());
  if (data.u_cmd.size() != data.size() || data.p_act.size() != data.size() || data.pixels.size() != P * data.size() ||
      data.o_rest.size() != P)
    throw ContractViolation("write_dataset: inconsistent dataset");
  out.write(kDatasetMagic, 4);
  put_le<std::uint32_t>(out, kDatasetFormatVersion);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(data.height));
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(data.width));
  put_f64(out, data.rate);
  put_le<std::uint32_t>(out, kInputChannels);
  put_le<std::uint64_t>(out, data.size());
  for (int c = 0; c < kInputChannels; ++c) put_f64(out, data.u_rest[c]);
  for (float v : data.o_rest) put_f32(out, v);
  for (std::size_t i = 0; i < data.size(); ++i) {
    put_f64(out, data.time[i]);
    for (int c = 0; c < kInputChannels; ++c) put_f64(out, data.u_cmd[i][c]);
    for (int c = 0; c < kInputChannels; ++c) put_f64(out, data.p_act[i][c]);
    for (std::size_t j = 0; j < P; ++j) put_f32(out, data.pixels[i * P + j]);
  }
  if (!out) throw FormatError("failed to write dataset");
}

Dataset read_dataset(std::istream& in) {
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kDatasetMagic, 4) != 0) throw FormatError("not a dataset file");
  const auto version = get_le<std::uint32_t>(in);
  if (version != kDatasetFormatVersion)
    throw VersionMismatch("dataset", static_cast<int>(version), kDatasetFormatVersion);
  Dataset d;
  d.height = static_cast<int>(get_le<std::uint32_t>(in));
  d.width = static_cast<int>(get_le<std::uint32_t>(in));
  d.rate = get_f64(in);
  const auto channels = get_le<std::uint32_t>(in);
  if (channels != kInputChannels) throw FormatError("dataset has " + std::to_string(channels) + " input channels");
  if (d.height <= 0 || d.width <= 0 || d.height > 4096 || d.width > 4096) throw FormatError("bad frame size");
  const auto frames = get_le<std::uint64_t>(in);
  const std::size_t P = static_cast<std::size_t>(d.height) * d.width;
  for (int c = 0; c < kInputChannels; ++c) d.u_rest[c] = get_f64(in);
  d.o_rest.resize(P);
  for (float& v : d.o_rest) v = get_f32(in);
  for (std::uint64_t i = 0; i < frames; ++i) {
    d.time.push_back(get_f64(in));
    Pressure u, p;
    for (int c = 0; c < kInputChannels; ++c) u[c] = get_f64(in);
    for (int c = 0; c < kInputChannels; ++c) p[c] = get_f64(in);
    d.u_cmd.push_back(u);
    d.p_act.push_back(p);
    for (std::size_t j = 0; j < P; ++j) d.pixels.push_back(get_f32(in));
  }
  if (in.peek() != std::char_traits<char>::eof()) throw FormatError("trailing bytes after the last frame");
  return d;
}

void save_dataset(const std::filesystem::path& path, const Dataset& data) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot open " + path.string() + " for writing");
  write_dataset(out, data);
}

Dataset load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  return read_dataset(in);
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw FormatError("failed to write " + path.string());
}

// ---------------------------------------------------------------------------
// Tensors

namespace {

json to_json(const Vec& v) { return json(std::vector<double>(v.data(), v.data() + v.size())); }

json to_json(const Mat& m) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    json r = json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) r.push_back(m(i, j));
    rows.push_back(std::move(r));
  }
  return rows;
}

Vec vec_from(const json& j) {
  if (!j.is_array()) throw FormatError("expected an array");
  Vec v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) v[static_cast<Eigen::Index>(i)] = j[i].get<double>();
  return v;
}

Mat mat_from(const json& j) {
  if (!j.is_array()) throw FormatError("expected a nested array");
  const Eigen::Index rows = static_cast<Eigen::Index>(j.size());
  const Eigen::Index cols = rows ? static_cast<Eigen::Index>(j[0].size()) : 0;
  Mat m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    if (!j[i].is_array() || static_cast<Eigen::Index>(j[i].size()) != cols) throw FormatError("ragged matrix");
    for (Eigen::Index c = 0; c < cols; ++c) m(i, c) = j[i][c].get<double>();
  }
  return m;
}

json to_json(const Pressure& p) { return json{p[0], p[1], p[2], p[3]}; }

Pressure pressure_from(const json& j) {
  const Vec v = vec_from(j);
  if (v.size() != kInputChannels) throw FormatError("pressure needs 4 entries");
  return v;
}

json to_json(const Mlp& m) {
  json w = json::array(), b = json::array();
  for (const auto& x : m.weights) w.push_back(to_json(x));
  for (const auto& x : m.biases) b.push_back(to_json(x));
  return {{"weights", w}, {"biases", b}};
}

Mlp mlp_from(const json& j) {
  Mlp m;
  for (const auto& w : j.at("weights")) m.weights.push_back(mat_from(w));
  for (const auto& b : j.at("biases")) m.biases.push_back(vec_from(b));
  if (m.weights.size() != m.biases.size()) throw FormatError("network layer count mismatch");
  for (std::size_t l = 0; l < m.weights.size(); ++l) {
    if (m.weights[l].rows() != m.biases[l].size() || (l > 0 && m.weights[l].cols() != m.weights[l - 1].rows()))
      throw FormatError("network layer shapes are inconsistent");
  }
  return m;
}

json to_json(const ExcitationNet& e) {
  json j{{"kind", to_string(e.kind)}};
  if (e.kind == ExcitationKind::mlp)
    j["mlp"] = to_json(e.mlp);
  else
    j["linear"] = to_json(e.linear);
  return j;
}

ExcitationNet excitation_from(const json& j) {
  ExcitationNet e;
  e.kind = excitation_kind_from_string(j.at("kind").get<std::string>());
  if (e.kind == ExcitationKind::mlp)
    e.mlp = mlp_from(j.at("mlp"));
  else
    e.linear = mat_from(j.at("linear"));
  return e;
}

json to_json(const DynModel& model) {
  if (const auto* k = std::get_if<KoopmanModel>(&model))
    return {{"family", "koopman"}, {"A", to_json(k->A)}, {"bnet", to_json(k->bnet)}, {"z0", to_json(k->z0)},
            {"dt", k->dt}};
  if (const auto* m = std::get_if<MlpDynModel>(&model))
    return {{"family", "mlp"}, {"fmlp", to_json(m->fmlp)}, {"bnet", to_json(m->bnet)}, {"z0", to_json(m->z0)},
            {"dt", m->dt}};
  const auto& o = std::get<OscillatorModel>(model);
  return {{"family", "oscillator"},
          {"mass_raw", to_json(o.mass_raw)},
          {"D", to_json(o.D)},
          {"K", to_json(o.K)},
          {"z0", to_json(o.z0)},
          {"alpha_raw", o.alpha_raw},
          {"beta_raw", o.beta_raw},
          {"bnet", to_json(o.bnet)},
          {"dt", o.dt},
          {"damping", to_string(o.damping)},
          {"integration", to_string(o.integration)}};
}

DynModel dynamics_from(const json& j) {
  const std::string family = j.at("family").get<std::string>();
  if (family == "koopman") {
    KoopmanModel k;
    k.A = mat_from(j.at("A"));
    k.bnet = excitation_from(j.at("bnet"));
    k.z0 = vec_from(j.at("z0"));
    k.dt = j.at("dt").get<double>();
    return k;
  }
  if (family == "mlp") {
    MlpDynModel m;
    m.fmlp = mlp_from(j.at("fmlp"));
    m.bnet = excitation_from(j.at("bnet"));
    m.z0 = vec_from(j.at("z0"));
    m.dt = j.at("dt").get<double>();
    return m;
  }
  if (family != "oscillator") throw FormatError("unknown model family '" + family + "'");
  OscillatorModel o;
  o.mass_raw = vec_from(j.at("mass_raw"));
  o.D = mat_from(j.at("D"));
  o.K = mat_from(j.at("K"));
  o.z0 = vec_from(j.at("z0"));
  o.alpha_raw = j.at("alpha_raw").get<double>();
  o.beta_raw = j.at("beta_raw").get<double>();
  o.bnet = excitation_from(j.at("bnet"));
  o.dt = j.at("dt").get<double>();
  o.damping = damping_mode_from_string(j.at("damping").get<std::string>());
  o.integration = integration_mode_from_string(j.at("integration").get<std::string>());
  return o;
}

json to_json(const Decoder& d) {
  if (d.kind == DecoderKind::dense) return {{"kind", "dense"}, {"net", to_json(d.dense.net)}};
  const KeypointDecoder& k = d.keypoint;
  return {{"kind", "keypoint_broadcast"},
          {"height", k.height},
          {"width", k.width},
          {"affine", to_json(Mat(k.affine))},
          {"offset", to_json(Vec(k.offset))},
          {"amplitude", to_json(k.amplitude)},
          {"offset_x", to_json(k.offset_x)},
          {"offset_y", to_json(k.offset_y)},
          {"log_width", to_json(k.log_width)},
          {"background", to_json(k.background)}};
}

Decoder decoder_from(const json& j) {
  Decoder d;
  d.kind = decoder_kind_from_string(j.at("kind").get<std::string>());
  if (d.kind == DecoderKind::dense) {
    d.dense.net = mlp_from(j.at("net"));
    return d;
  }
  KeypointDecoder& k = d.keypoint;
  k.height = j.at("height").get<int>();
  k.width = j.at("width").get<int>();
  const Mat a = mat_from(j.at("affine"));
  const Vec o = vec_from(j.at("offset"));
  if (a.rows() != 2 || a.cols() != 2 || o.size() != 2) throw FormatError("keypoint affine map must be 2x2 + 2");
  k.affine = a;
  k.offset = o;
  k.amplitude = mat_from(j.at("amplitude"));
  k.offset_x = mat_from(j.at("offset_x"));
  k.offset_y = mat_from(j.at("offset_y"));
  k.log_width = mat_from(j.at("log_width"));
  k.background = vec_from(j.at("background"));
  if (k.background.size() != k.height * k.width) throw FormatError("keypoint background has wrong size");
  return d;
}

json config_json(const TrainConfig& c) {
  json schedule = json::array();
  for (const auto& s : c.horizon_schedule) schedule.push_back({{"epoch", s.epoch}, {"horizon", s.horizon}});
  return {{"name", c.name},
          {"family", to_string(c.family)},
          {"decoder", to_string(c.decoder)},
          {"excitation", to_string(c.excitation)},
          {"loss_weights",
           {{"static", c.loss_weights.static_rec},
            {"dyn", c.loss_weights.dyn},
            {"latent", c.loss_weights.latent},
            {"rest", c.loss_weights.rest}}},
          {"beta", c.beta},
          {"kl_mean_correction", c.kl_mean_correction},
          {"horizon_schedule", schedule},
          {"damping", to_string(c.damping)},
          {"integration", to_string(c.integration)},
          {"latent_pairs", c.latent_pairs},
          {"encoder_hidden", c.encoder_hidden},
          {"decoder_hidden", c.decoder_hidden},
          {"keypoint_components", c.keypoint_components},
          {"fmlp_hidden", c.fmlp_hidden},
          {"lr", c.lr},
          {"epochs", c.epochs},
          {"steps_per_epoch", c.steps_per_epoch},
          {"batch_size", c.batch_size},
          {"seed", c.seed}};
}

TrainConfig config_from(const json& j) {
  if (!j.is_object()) throw FormatError("config must be an object");
  TrainConfig c;
  // The family and decoder pick the defaults the remaining keys override.
  if (j.contains("family") || j.contains("decoder"))
    c = default_config(model_family_from_string(j.value("family", to_string(c.family))),
                       decoder_kind_from_string(j.value("decoder", to_string(c.decoder))));
  bool schedule_given = false;
  for (const auto& [key, v] : j.items()) {
    if (key == "family" || key == "decoder") continue;
    if (key == "name") c.name = v.get<std::string>();
    else if (key == "excitation") c.excitation = excitation_kind_from_string(v.get<std::string>());
    else if (key == "loss_weights") {
      for (const auto& [wk, wv] : v.items()) {
        if (wk == "static") c.loss_weights.static_rec = wv.get<double>();
        else if (wk == "dyn") c.loss_weights.dyn = wv.get<double>();
        else if (wk == "latent") c.loss_weights.latent = wv.get<double>();
        else if (wk == "rest") c.loss_weights.rest = wv.get<double>();
        else throw FormatError("unknown loss weight '" + wk + "'");
      }
    } else if (key == "beta") c.beta = v.get<double>();
    else if (key == "kl_mean_correction") c.kl_mean_correction = v.get<bool>();
    else if (key == "horizon_schedule") {
      schedule_given = true;
      c.horizon_schedule.clear();
      for (const auto& s : v) c.horizon_schedule.push_back({s.at("epoch").get<int>(), s.at("horizon").get<int>()});
    } else if (key == "damping") c.damping = damping_mode_from_string(v.get<std::string>());
    else if (key == "integration") c.integration = integration_mode_from_string(v.get<std::string>());
    else if (key == "latent_pairs") c.latent_pairs = v.get<int>();
    else if (key == "encoder_hidden") c.encoder_hidden = v.get<std::vector<int>>();
    else if (key == "decoder_hidden") c.decoder_hidden = v.get<std::vector<int>>();
    else if (key == "keypoint_components") c.keypoint_components = v.get<int>();
    else if (key == "fmlp_hidden") c.fmlp_hidden = v.get<int>();
    else if (key == "lr") c.lr = v.get<double>();
    else if (key == "epochs") c.epochs = v.get<int>();
    else if (key == "steps_per_epoch") c.steps_per_epoch = v.get<int>();
    else if (key == "batch_size") c.batch_size = v.get<int>();
    else if (key == "seed") c.seed = v.get<std::uint64_t>();
    else throw FormatError("unknown config key '" + key + "'");
  }
  if (!schedule_given) c.horizon_schedule = default_horizon_schedule(c.epochs);
  c.validate();
  return c;
}

json to_json(const LossBreakdown& l) {
  return {{"static", l.static_rec}, {"dyn", l.dyn}, {"latent", l.latent},
          {"rest", l.rest},         {"kl", l.kl},   {"total", l.total}};
}

LossBreakdown loss_from(const json& j) {
  return {j.at("static").get<double>(), j.at("dyn").get<double>(), j.at("latent").get<double>(),
          j.at("rest").get<double>(),   j.at("kl").get<double>(),  j.at("total").get<double>()};
}

void check_header(const json& j, const std::string& format, int expected) {
  if (!j.is_object() || j.value("format", std::string()) != format) throw FormatError("not a " + format + " document");
  const int version = j.at("version").get<int>();
  if (version != expected) throw VersionMismatch(format, version, expected);
}

json parse(const std::string& text) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw FormatError(std::string("malformed JSON: ") + e.what());
  }
}

template <typename F>
auto guarded(F&& f) {
  try {
    return f();
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed document: ") + e.what());
  }
}

}  // namespace

std::string config_to_json(const TrainConfig& config, int indent) { return config_json(config).dump(indent); }

TrainConfig config_from_json(const std::string& text) {
  const json j = parse(text);
  return guarded([&] { return config_from(j); });
}

std::string checkpoint_to_json(const Checkpoint& ck) {
  json history = json::array();
  for (const auto& r : ck.history)
    history.push_back({{"epoch", r.epoch}, {"horizon", r.horizon}, {"lr", r.lr}, {"loss", to_json(r.loss)}});
  json j{{"format", "vonctl-checkpoint"},
         {"version", kCheckpointFormatVersion},
         {"config", config_json(ck.config)},
         {"height", ck.height},
         {"width", ck.width},
         {"latent_scale", ck.latent_scale},
         {"reconstruction_floor", ck.reconstruction_floor},
         {"z0", to_json(ck.z0())},
         {"u_rest", to_json(ck.u_rest)},
         {"o_rest", to_json(ck.o_rest)},
         {"encoder", {{"latent_dim", ck.model.encoder.latent_dim}, {"net", to_json(ck.model.encoder.net)}}},
         {"decoder", to_json(ck.model.decoder)},
         {"dynamics", to_json(ck.model.dynamics)},
         {"history", history},
         {"declared_deviations", ck.declared_deviations}};
  return j.dump();
}

Checkpoint checkpoint_from_json(const std::string& text) {
  const json j = parse(text);
  check_header(j, "vonctl-checkpoint", kCheckpointFormatVersion);
  return guarded([&] {
    Checkpoint ck;
    ck.config = config_from(j.at("config"));
    ck.height = j.at("height").get<int>();
    ck.width = j.at("width").get<int>();
    ck.latent_scale = j.at("latent_scale").get<double>();
    ck.reconstruction_floor = j.at("reconstruction_floor").get<double>();
    ck.u_rest = pressure_from(j.at("u_rest"));
    ck.o_rest = vec_from(j.at("o_rest"));
    ck.model.encoder.latent_dim = j.at("encoder").at("latent_dim").get<int>();
    ck.model.encoder.net = mlp_from(j.at("encoder").at("net"));
    ck.model.decoder = decoder_from(j.at("decoder"));
    ck.model.dynamics = dynamics_from(j.at("dynamics"));
    for (const auto& r : j.at("history"))
      ck.history.push_back(
          {r.at("epoch").get<int>(), r.at("horizon").get<int>(), r.at("lr").get<double>(), loss_from(r.at("loss"))});
    ck.declared_deviations = j.at("declared_deviations").get<std::vector<std::string>>();
    if (!(ck.latent_scale > 0.0)) throw FormatError("checkpoint latent scale must be positive");
    const int n = ck.model.encoder.latent_dim;
    if (ck.model.encoder.net.output_dim() != 2 * n || ck.model.decoder.latent_dim() != n ||
        latent_dim(ck.model.dynamics) != n || ck.o_rest.size() != ck.height * ck.width ||
        ck.model.encoder.net.input_dim() != ck.height * ck.width)
      throw FormatError("checkpoint components have inconsistent shapes");
    const Vec z0 = vec_from(j.at("z0"));
    if (z0.size() != n || z0 != ck.z0()) throw FormatError("checkpoint z0 disagrees with the dynamics");
    return ck;
  });
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  write_text_file(path, checkpoint_to_json(ck));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) { return checkpoint_from_json(read_text_file(path)); }

namespace {
bool same(const Vec& a, const Vec& b) { return a.size() == b.size() && a == b; }
}  // namespace

bool SavedState::operator==(const SavedState& o) const {
  return same(observation, o.observation) && u == o.u && same(z, o.z) && same(zdot, o.zdot) &&
         is_static == o.is_static && previous.has_value() == o.previous.has_value() &&
         next.has_value() == o.next.has_value() && (!previous || same(*previous, *o.previous)) &&
         (!next || same(*next, *o.next));
}

std::string waypoints_to_json(const WaypointExport& w) {
  json list = json::array();
  for (const auto& s : w.waypoints) {
    json e{{"observation", to_json(s.observation)},
           {"u", to_json(s.u)},
           {"z", to_json(s.z)},
           {"zdot", to_json(s.zdot)},
           {"static", s.is_static}};
    if (s.previous) e["previous"] = to_json(*s.previous);
    if (s.next) e["next"] = to_json(*s.next);
    list.push_back(std::move(e));
  }
  json j{{"format", "vonctl-waypoints"}, {"version", kWaypointFormatVersion},
         {"model_id", w.model_id},       {"horizon", w.horizon},
         {"height", w.height},           {"width", w.width},
         {"waypoints", list}};
  return j.dump();
}

WaypointExport waypoints_from_json(const std::string& text) {
  const json j = parse(text);
  check_header(j, "vonctl-waypoints", kWaypointFormatVersion);
  return guarded([&] {
    WaypointExport w;
    w.model_id = j.at("model_id").get<std::string>();
    w.horizon = j.at("horizon").get<int>();
    w.height = j.at("height").get<int>();
    w.width = j.at("width").get<int>();
    for (const auto& s : j.at("waypoints")) {
      SavedState st;
      st.observation = vec_from(s.at("observation"));
      st.u = pressure_from(s.at("u"));
      st.z = vec_from(s.at("z"));
      st.zdot = vec_from(s.at("zdot"));
      st.is_static = s.at("static").get<bool>();
      if (s.contains("previous")) st.previous = vec_from(s.at("previous"));
      if (s.contains("next")) st.next = vec_from(s.at("next"));
      for (const Observation* o : {&st.observation, st.previous ? &*st.previous : nullptr, st.next ? &*st.next : nullptr})
        if (o && o->size() != w.height * w.width) throw FormatError("waypoint observation has wrong size");
      w.waypoints.push_back(std::move(st));
    }
    return w;
  });
}

std::vector<WaypointTarget> waypoint_targets(const WaypointExport& w) {
  std::vector<WaypointTarget> out;
  for (const auto& s : w.waypoints) out.push_back({s.observation, s.is_static, s.previous, s.next});
  return out;
}

}  // namespace vonctl
