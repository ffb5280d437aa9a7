#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "fova/errors.hpp"
#include "fova/harness.hpp"

using namespace fova;
namespace fs = std::filesystem;

namespace {

std::string config_error(const std::string& text) {
  try {
    parse_config(text);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

int count_lines(const fs::path& p) {
  std::ifstream in(p);
  std::string line;
  int n = 0;
  while (std::getline(in, line)) ++n;
  return n;
}

ExperimentConfig small_config() {
  return parse_config(R"({
    "mdp": {"kind": "gridworld", "width": 3, "height": 2, "slip": 0.1},
    "federation": {"n_clients": 2, "qualities": [1.0, 0.0], "n_transitions": 300, "horizon": 20},
    "rounds": 2,
    "seeds": [3, 4]
  })");
}

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("fova_test_harness_" + name);
  fs::remove_all(dir);
  return dir;
}

}  // namespace

TEST_CASE("a minimal config takes the defaults") {
  const ExperimentConfig c = parse_config("{}");
  CHECK(c.hyper.lambda == 5.0);
  CHECK(c.hyper.beta == 5.0);
  CHECK(c.hyper.gamma == c.mdp.gamma);
  CHECK(c.rounds == 30);
  CHECK(c.algo == Algo::Fova);
  CHECK(c.vote_mode == VoteKind::ExpectedQ);
  CHECK(c.seeds == std::vector<std::uint64_t>{0});
  CHECK_FALSE(c.continual());
  CHECK(c.n_phases() == 1);
}

TEST_CASE("config errors name the offending field") {
  CHECK(config_error(R"({"hyper": {"gamma": 1.2}})").find("hyper.gamma") != std::string::npos);
  CHECK(config_error(R"({"hyper": {"gama": 0.5}})").find("hyper.gama: unknown key") != std::string::npos);
  CHECK(config_error(R"({"rounds": 0})") == "rounds must be at least 1");
  CHECK(config_error(R"({"algo": "sarsa"})").rfind("algo:", 0) == 0);
  CHECK(config_error(R"({"vote_mode": "max"})").find("vote_mode") != std::string::npos);
  CHECK(config_error(R"({"seeds": [1, 1]})") == "seeds: duplicate entries");
  CHECK(config_error(R"({"seeds": [-1]})").find("seeds[0]") != std::string::npos);
  CHECK(config_error("{").rfind("config: malformed JSON", 0) == 0);
  CHECK(config_error(R"({"federation": {"n_clients": 2}, "quality_schedule": [[1.0]]})")
            .find("quality_schedule[0]") != std::string::npos);
  CHECK_THROWS_AS(load_config("/nonexistent/config.json"), IoError);
}

TEST_CASE("serialization round trip is idempotent") {
  ExperimentConfig c = small_config();
  c.quality_schedule = std::vector<std::vector<double>>{{1.0, 1.0}, {0.5, 0.0}};
  c.hyper.alpha = 0.3;
  c.vote_mode = VoteKind::SampledQ;
  const Json once = serialize_config(c);
  const Json twice = serialize_config(parse_config(once.dump()));
  CHECK(once == twice);
  const ExperimentConfig back = parse_config(once.dump());
  CHECK(back.n_phases() == 2);
  CHECK(back.phase_qualities(1) == std::vector<double>{0.5, 0.0});
  CHECK(back.hyper.alpha == 0.3);

  const ExperimentConfig random = parse_config(R"({"mdp": {"kind": "random", "n_states": 6, "n_actions": 2}})");
  CHECK(build_mdp(random.mdp).n_states == 6);
  CHECK(serialize_config(parse_config(serialize_config(random).dump())) == serialize_config(random));
}

TEST_CASE("continual summary statistics") {
  Matrix a(3, 3);
  a << 1.0, 0.0, 0.0,  //
      0.5, 2.0, 0.0,   //
      0.25, 1.0, 3.0;
  const PerBwt r = per_bwt(a);
  CHECK(r.per == doctest::Approx((0.25 + 1.0 + 3.0) / 3.0));
  CHECK(r.bwt == doctest::Approx(((0.25 - 1.0) + (1.0 - 2.0)) / 2.0));

  const PerBwt flat = per_bwt(Matrix::Constant(3, 3, 4.0));
  CHECK(flat.per == 4.0);
  CHECK(flat.bwt == 0.0);

  Matrix kept(2, 2);
  kept << 1.0, 0.0, 1.0, 2.0;
  CHECK(per_bwt(kept).bwt == 0.0);

  const PerBwt single = per_bwt(Matrix::Constant(1, 1, 7.0));
  CHECK(single.per == 7.0);
  CHECK(std::isnan(single.bwt));
  CHECK_THROWS_AS(per_bwt(Matrix::Zero(2, 3)), ArgumentError);
}

TEST_CASE("per-column statistics") {
  const ColumnStats one = column_stats({{1.0, 2.0}});
  CHECK(one.mean == std::vector<double>{1.0, 2.0});
  CHECK(one.stddev == std::vector<double>{0.0, 0.0});
  const ColumnStats two = column_stats({{1.0, 2.0}, {3.0, 2.0}});
  CHECK(two.mean == std::vector<double>{2.0, 2.0});
  CHECK(two.stddev[0] == doctest::Approx(1.0));
  CHECK(two.stddev[1] == 0.0);
  CHECK_THROWS_AS(column_stats({{1.0}, {1.0, 2.0}}), ArgumentError);
}

TEST_CASE("generate writes every dataset reproducibly") {
  const ExperimentConfig c = small_config();
  const fs::path a = scratch("gen_a");
  const fs::path b = scratch("gen_b");
  const Json manifest = cmd_generate(c, a);
  cmd_generate(c, b);

  int csv = 0;
  for (const auto& e : fs::recursive_directory_iterator(a))
    if (e.path().extension() == ".csv") {
      ++csv;
      const fs::path twin = b / fs::relative(e.path(), a);
      CHECK(slurp(e.path()) == slurp(twin));
    }
  CHECK(csv == 4);
  CHECK(fs::exists(a / "mdp.json"));
  CHECK(slurp(a / "manifest.json") == slurp(b / "manifest.json"));

  REQUIRE(manifest.at("seeds").size() == 2);
  const Json& clients = manifest["seeds"][0]["phases"][0]["clients"];
  REQUIRE(clients.size() == 2);
  CHECK(clients[0]["quality_label"] == 1.0);
  CHECK(clients[1]["quality_label"] == 0.0);
  CHECK(clients[0]["n"] == 300);
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST_CASE("train, audit and report") {
  const ExperimentConfig c = small_config();
  const fs::path out = scratch("pipeline");
  CHECK_THROWS_AS(cmd_train(c, out), IoError);
  cmd_generate(c, out);
  cmd_train(c, out);
  for (std::uint64_t s : c.seeds) {
    const fs::path dir = out / "fova" / ("seed_" + std::to_string(s));
    CHECK(count_lines(dir / "metrics.csv") == 1 + c.rounds);
    CHECK(fs::exists(dir / "checkpoint.json"));
  }
  cmd_audit(c, out);
  const Json audit = read_json_file(out / "fova" / "seed_3" / "audit.json");
  CHECK(audit.at("bound_reports").size() == 2);
  CHECK(audit.at("safe_improvement").size() == static_cast<std::size_t>(c.rounds));
  CHECK(audit.at("summary").contains("heterogeneity_max_norm"));

  cmd_report(out);
  CHECK(count_lines(out / "report" / "curves_fova.csv") == 1 + c.rounds);
  CHECK(count_lines(out / "report" / "comparison.csv") == 2);

  fs::remove(out / "fova" / "seed_3" / "checkpoint.json");
  CHECK_THROWS_AS(cmd_audit(c, out), IoError);
  fs::remove_all(out);
  CHECK_THROWS_AS(cmd_report(out), IoError);
}

TEST_CASE("mismatched MDP on disk is rejected") {
  ExperimentConfig c = small_config();
  const fs::path out = scratch("mismatch");
  cmd_generate(c, out);
  c.mdp.width = 4;
  CHECK_THROWS_AS(cmd_train(c, out), ConfigError);
  fs::remove_all(out);
}
