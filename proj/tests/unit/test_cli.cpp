#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <mutex>
#include <thread>
#include <sstream>

#include "cli.hpp"
#include "fixtures.hpp"
#include "vonctl/eval.hpp"
#include "vonctl/server.hpp"
#include "vonctl/session.hpp"

using namespace vonctl;
using namespace vonctl::testing;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code;
  std::string out, err;
};

Result vonctl_run(std::vector<std::string> args) {
  args.insert(args.begin(), "vonctl");
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / ("vonctl_cli_" + name)) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string operator/(const std::string& f) const { return (path / f).string(); }
};

// String buffer that another thread may write while this one reads.
class LockedBuf : public std::streambuf {
 public:
  std::string str() {
    std::lock_guard lock(m_);
    return s_;
  }

 protected:
  int_type overflow(int_type c) override {
    if (c != traits_type::eof()) {
      std::lock_guard lock(m_);
      s_.push_back(static_cast<char>(c));
    }
    return c;
  }
  std::streamsize xsputn(const char* p, std::streamsize n) override {
    std::lock_guard lock(m_);
    s_.append(p, static_cast<std::size_t>(n));
    return n;
  }

 private:
  std::mutex m_;
  std::string s_;
};

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

// Three saved states from a live session on the fixture model.
WaypointExport session_export(const Checkpoint& ck) {
  SimSession s(std::make_shared<const Checkpoint>(ck), "fixture");
  s.save_state(true);
  s.set_pressures(Pressure(70, 10, 40, 40));
  for (int i = 0; i < 20; ++i) s.tick();
  s.save_state(false);
  for (int i = 0; i < 40; ++i) s.tick();
  s.save_state(true);
  return s.export_waypoints(100);
}

}  // namespace

TEST_CASE("gen-data is deterministic in its seed") {
  TempDir d("gen");
  REQUIRE(vonctl_run({"gen-data", "--duration", "12", "--seed", "4", "--out", d / "a.scrd"}).code == 0);
  REQUIRE(vonctl_run({"gen-data", "--duration", "12", "--seed", "4", "--out", d / "b.scrd"}).code == 0);
  REQUIRE(vonctl_run({"gen-data", "--duration", "12", "--seed", "5", "--out", d / "c.scrd"}).code == 0);
  CHECK(slurp(d / "a.scrd") == slurp(d / "b.scrd"));
  CHECK(slurp(d / "a.scrd") != slurp(d / "c.scrd"));
  CHECK(load_dataset(d / "a.scrd").size() == 600);

  const Result j = vonctl_run({"--json", "gen-data", "--kind", "step", "--duration", "10", "--out", d / "s.scrd"});
  REQUIRE(j.code == 0);
  CHECK(json::parse(j.out).at("frames") == 500);
  const Result k = vonctl_run({"gen-data", "--json", "--plant", "linear-latent", "--duration", "10", "--out", d / "l.scrd"});
  REQUIRE(k.code == 0);
  CHECK(json::parse(k.out).at("frames") == 500);
}

TEST_CASE("exit codes") {
  TempDir d("exit");
  save_checkpoint(d / "ck.json", session_checkpoint(1));

  CHECK(vonctl_run({"--help"}).code == cli::kOk);
  CHECK(vonctl_run({}).code == cli::kUsage);
  CHECK(vonctl_run({"gen-data", "--out", d / "x.scrd", "--bogus"}).code == cli::kUsage);
  CHECK(vonctl_run({"gen-data", "--kind", "chirp", "--out", d / "x.scrd"}).code == cli::kUsage);
  CHECK(vonctl_run({"stress", "--checkpoint", d / "missing.json"}).code == cli::kMissingFile);

  std::ofstream(d / "garbage.json") << "{\"format\": \"something else\"}";
  CHECK(vonctl_run({"stress", "--checkpoint", d / "garbage.json"}).code == cli::kFormatError);
  std::ofstream(d / "broken.json") << "{ not json";
  CHECK(vonctl_run({"stress", "--checkpoint", d / "broken.json"}).code == cli::kFormatError);

  json future = json::parse(slurp(d / "ck.json"));
  future["version"] = kCheckpointFormatVersion + 1;
  std::ofstream(d / "future.json") << future.dump();
  const Result v = vonctl_run({"stress", "--checkpoint", d / "future.json"});
  CHECK(v.code == cli::kVersionMismatch);
  CHECK(v.err.find("version") != std::string::npos);

  CHECK(vonctl_run({"stress", "--checkpoint", d / "ck.json", "--test", "ramp", "--target", "1,2,x,4"}).code ==
        cli::kInvalidInput);
  CHECK(vonctl_run({"gen-data", "--duration", "3", "--out", d / "short.scrd"}).code == cli::kInvalidInput);
}

TEST_CASE("an exported waypoint file feeds optimize and execute") {
  TempDir d("opt");
  const Checkpoint ck = session_checkpoint(2);
  save_checkpoint(d / "ck.json", ck);
  const WaypointExport e = session_export(ck);
  REQUIRE(e.waypoints.size() == 3);
  write_text_file(d / "wp.json", waypoints_to_json(e));

  const Result r = vonctl_run({"--json", "optimize", "--checkpoint", d / "ck.json", "--waypoints", d / "wp.json",
                               "--iterations", "20", "--out", d / "sol.json"});
  REQUIRE_MESSAGE(r.code == 0, r.err);
  const json j = json::parse(r.out);
  CHECK(j.at("T") == 100);
  CHECK(j.at("K") == 3);
  CHECK(j.at("tau") == json(schedule_waypoints(3, 100)));
  CHECK(j.at("suite") == "Dyn. custom");

  const SolutionRecord s = solution_from_json(read_text_file(d / "sol.json"));
  CHECK(s.u.size() == 100);
  CHECK(s.targets.size() == 3);
  CHECK(s.u0 == e.waypoints.front().u);
  CHECK(s.plant_initial.p_act == e.waypoints.front().u);
  for (std::size_t i = 0; i < 3; ++i) CHECK(s.targets[i] == e.waypoints[i].observation);

  const Result x = vonctl_run({"--json", "execute", "--solution", d / "sol.json", "--out", d / "rec.scrd"});
  REQUIRE_MESSAGE(x.code == 0, x.err);
  const TrajectoryResult direct = score_solution(s, execute_solution(s, PlantParams{}));
  CHECK(json::parse(x.out).at("mse").get<double>() == direct.mse);
  CHECK(load_dataset(d / "rec.scrd").size() == 101);

  // A preset fixes the horizon; a waypoint count that differs is only noted.
  const Result p = vonctl_run({"--json", "optimize", "--checkpoint", d / "ck.json", "--waypoints", d / "wp.json",
                               "--suite", "Dyn. Fast", "--iterations", "5", "--out", d / "fast.json"});
  REQUIRE(p.code == 0);
  CHECK(json::parse(p.out).at("T") == 150);
  CHECK(p.err.find("K=8") != std::string::npos);
}

TEST_CASE("suite artifacts and report recomputation") {
  TempDir d("suite");
  save_checkpoint(d / "fixture.json", session_checkpoint(3));
  const Result r = vonctl_run({"--json", "suite", "--checkpoint", d / "fixture.json", "--suite", "Dyn. Fast",
                               "--iterations", "10", "--out-dir", d / "run"});
  REQUIRE_MESSAGE(r.code == 0, r.err);

  const TrajectorySuite& fast = trajectory_suite("Dyn. Fast");
  int solutions = 0;
  for (const auto& f : fs::directory_iterator(d.path / "run" / "fixture")) {
    if (f.path().string().ends_with(".solution.json")) {
      const SolutionRecord s = solution_from_json(read_text_file(f.path()));
      CHECK(static_cast<int>(s.u.size()) == fast.T);
      CHECK(static_cast<int>(s.tau.size()) == fast.K);
      ++solutions;
    }
  }
  CHECK(solutions == fast.n);

  const RunReport stored = report_from_json(read_text_file(d / "run/report.json"));
  const Result rep = vonctl_run({"--json", "report", "--input", d / "run", "--check", "--out", d / "merged.json",
                                 "--table", d / "table.tsv"});
  REQUIRE_MESSAGE(rep.code == 0, rep.err);
  const json agg = json::parse(rep.out).at("aggregates");
  const auto expected = aggregate(stored);
  REQUIRE(agg.size() == expected.size());
  for (std::size_t i = 0; i < expected.size(); ++i) {
    CHECK(agg[i].at("suite") == expected[i].suite);
    CHECK(agg[i].at("mean_mse").get<double>() == expected[i].mean_mse);
  }
  CHECK(report_from_json(read_text_file(d / "merged.json")).trajectories == stored.trajectories);
  CHECK(slurp(d / "table.tsv") == report_table(stored));

  // Edited results no longer match the artifacts.
  json edited = json::parse(slurp(d / "run/report.json"));
  edited["trajectories"][0]["mse"] = edited["trajectories"][0]["mse"].get<double>() * 1.01;
  std::ofstream(d / "run/report.json") << edited.dump();
  CHECK(vonctl_run({"report", "--input", d / "run", "--check"}).code == cli::kCheckFailed);
  CHECK(vonctl_run({"report", "--input", d / "run"}).code == cli::kOk);
}

TEST_CASE("stress writes its series") {
  TempDir d("stress");
  save_checkpoint(d / "ck.json", session_checkpoint(4));
  REQUIRE(vonctl_run({"gen-data", "--kind", "step", "--duration", "60", "--out", d / "step.scrd"}).code == 0);
  const Result r = vonctl_run({"--json", "stress", "--checkpoint", d / "ck.json", "--data", d / "step.scrd",
                               "--states", "5", "--out", d / "stress.json"});
  REQUIRE_MESSAGE(r.code == 0, r.err);
  const json j = json::parse(r.out);
  CHECK(j.at("static_hold").at("states") == 5);
  CHECK(j.contains("release"));
  CHECK(j.contains("ramp"));
  const RunReport rep = report_from_json(read_text_file(d / "stress.json"));
  CHECK(rep.series.size() >= 7);
}

TEST_CASE("train from the command line") {
  TempDir d("train");
  REQUIRE(vonctl_run({"gen-data", "--duration", "20", "--out", d / "train.scrd"}).code == 0);
  REQUIRE(vonctl_run({"gen-data", "--kind", "step", "--duration", "10", "--seed", "2", "--out", d / "val.scrd"})
              .code == 0);
  const Result r = vonctl_run({"--json", "train", "--family", "koopman", "--data", d / "train.scrd", "--validation",
                               d / "val.scrd", "--epochs", "2", "--steps-per-epoch", "2", "--quiet", "--out",
                               d / "k.json"});
  REQUIRE_MESSAGE(r.code == 0, r.err);
  const Checkpoint ck = load_checkpoint(d / "k.json");
  CHECK(ck.config.family == ModelFamily::koopman);
  CHECK(ck.config.epochs == 2);
  CHECK(ck.history.size() == 2);
  CHECK(json::parse(r.out).at("reconstruction_floor").get<double>() == ck.reconstruction_floor);
}

TEST_CASE("serve answers hello and stops") {
  TempDir d("serve");
  save_checkpoint(d / "fixture.json", session_checkpoint(5));
  LockedBuf buf;
  std::ostream out(&buf);
  std::ostringstream err;
  std::thread t([&] {
    cli::run({"vonctl", "serve", "--checkpoints", d.path.string(), "--port", "0", "--duration", "1.0"}, out, err);
  });
  std::string line;
  for (int i = 0; i < 100 && line.empty(); ++i) {
    std::this_thread::sleep_for(std::chrono::milliseconds(10));
    const std::string s = buf.str();
    if (s.find('\n') != std::string::npos) line = s.substr(0, s.find('\n'));
  }
  REQUIRE_FALSE(line.empty());
  const json info = json::parse(line);
  CHECK(info.at("models") == json::array({"fixture"}));
  ProtocolClient c("127.0.0.1", info.at("port").get<int>());
  const auto hello = c.receive_type("hello", std::chrono::milliseconds(2000));
  REQUIRE(hello.has_value());
  CHECK(hello->at("model") == "fixture");
  t.join();
}
