#include <gtest/gtest.h>

#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <thread>

#include "sgfuse/app.h"
#include "sgfuse/backend.h"
#include "sgfuse/config.h"
#include "sgfuse/metrics.h"
#include "sgfuse/pipeline.h"
#include "sgfuse/serialization.h"
#include "sgfuse/simulator.h"
#include "test_util.h"

namespace sgfuse {
namespace {

namespace fs = std::filesystem;

Json scenario_json(const std::string& name) {
  return parse_json(read_file(std::string(SGFUSE_SCENARIOS) + "/" + name), name);
}

std::string parse_error(const Json& doc) {
  try {
    scenario_from_json(doc);
  } catch (const ParseError& e) {
    return e.what();
  }
  return "";
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("sgfuse_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

int run_cli(const std::string& args) {
  const int rc = std::system((std::string(SGFUSE_CLI) + " " + args + " >/dev/null 2>&1").c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

TEST(Config, ScenariosRoundTrip) {
  for (const char* name : {"two_robot_overlap.json", "square_loop_drift.json"}) {
    const ScenarioConfig s = scenario_from_json(scenario_json(name));
    const Json again = scenario_to_json(s);
    EXPECT_EQ(canonical_dump(scenario_to_json(scenario_from_json(again))), canonical_dump(again));
  }
}

TEST(Config, ErrorsNameTheField) {
  Json doc = scenario_json("two_robot_overlap.json");
  Json unknown = doc;
  unknown["robots"][0]["bogus"] = 1;
  EXPECT_NE(parse_error(unknown).find("$.robots[0].bogus"), std::string::npos)
      << parse_error(unknown);

  Json missing = doc;
  missing["world"].erase("bounds");
  EXPECT_NE(parse_error(missing).find("$.world.bounds"), std::string::npos)
      << parse_error(missing);

  Json negative = doc;
  negative["world"]["places"]["spacing"] = -2.0;
  EXPECT_NE(parse_error(negative).find("$.world.places.spacing"), std::string::npos)
      << parse_error(negative);

  Json wrong_type = doc;
  wrong_type["backend_period"] = "often";
  EXPECT_NE(parse_error(wrong_type).find("$.backend_period"), std::string::npos);

  Json assignment = doc;
  assignment["loop_closures"]["outlier_assignment"] = "sometimes";
  EXPECT_NE(parse_error(assignment).find("outlier_assignment"), std::string::npos);
}

TEST(Config, SeedOverride) {
  ScenarioConfig s = scenario_from_json(scenario_json("two_robot_overlap.json"));
  ::setenv("SGFUSE_SEED", "4242", 1);
  apply_seed_override(s);
  EXPECT_EQ(s.seed, 4242u);
  ::setenv("SGFUSE_SEED", "12x", 1);
  EXPECT_THROW(apply_seed_override(s), ParseError);
  ::unsetenv("SGFUSE_SEED");
  apply_seed_override(s);
  EXPECT_EQ(s.seed, 4242u);
}

TEST(Simulator, ZeroNoiseSnapshotsMatchOracle) {
  const ScenarioConfig s = scenario_from_json(scenario_json("two_robot_overlap.json"));
  const SimulationOutput sim = simulate(s);
  std::size_t checked = 0;
  for (const Event& e : sim.events) {
    const auto* u = std::get_if<GraphUpdate>(&e);
    if (u == nullptr) {
      continue;
    }
    const RobotTruth& rt = sim.truth.robots.at(u->robot);
    std::map<double, Pose> world;
    for (const TimedPose& tp : rt.trajectory) {
      world.emplace(tp.timestamp, tp.pose);
    }
    const Pose t0 = rt.trajectory.front().pose;
    EXPECT_LT(test::pose_gap(rt.frame, t0), 1e-15);
    for (const NodeId& id : u->graph.live_nodes(Layer::Agent)) {
      const AgentNode& a = u->graph.get<AgentNode>(id);
      EXPECT_LT(test::pose_gap(a.pose, t0.inverse() * world.at(a.timestamp)), 1e-9);
      ++checked;
    }
  }
  EXPECT_GT(checked, 100u);
}

TEST(Simulator, BernoulliOutlierRate) {
  Json doc = scenario_json("square_loop_drift.json");
  doc["loop_closures"]["outlier_rate"] = 0.8;
  std::size_t total = 0;
  std::size_t outliers = 0;
  for (std::uint64_t seed : {1, 2, 3}) {
    ScenarioConfig s = scenario_from_json(doc);
    s.seed = seed;
    const SimulationOutput sim = simulate(s);
    for (const auto& [id, out] : sim.truth.loop_closure_outlier) {
      ++total;
      outliers += out;
    }
  }
  ASSERT_GE(total, 100u);
  const double rate = double(outliers) / double(total);
  EXPECT_GT(rate, 0.7);
  EXPECT_LT(rate, 0.9);
}

TEST(Simulator, ExactOutlierAssignment) {
  Json doc = scenario_json("two_robot_overlap.json");
  doc["loop_closures"]["outlier_rate"] = 0.8;
  doc["loop_closures"]["outlier_assignment"] = "exact";
  doc["loop_closures"]["inter_rate"] = 1.0;
  const ScenarioConfig s = scenario_from_json(doc);
  const SimulationOutput sim = simulate(s);
  std::size_t inter = 0;
  std::size_t outliers = 0;
  for (const Event& e : sim.events) {
    if (const auto* lc = std::get_if<LoopClosure>(&e); lc && !lc->intra_robot()) {
      ++inter;
      outliers += sim.truth.loop_closure_outlier.at(lc->id);
    }
  }
  ASSERT_EQ(inter, s.loop_closures.max_per_pair);
  EXPECT_EQ(outliers, 24u);
}

TEST(Simulator, RobotWithoutSemanticsHasNoObjects) {
  Json doc = scenario_json("two_robot_overlap.json");
  doc["robots"][1]["has_semantics"] = false;
  const SimulationOutput sim = simulate(scenario_from_json(doc));
  std::size_t objects0 = 0;
  for (const Event& e : sim.events) {
    if (const auto* u = std::get_if<GraphUpdate>(&e)) {
      const std::size_t n = u->graph.live_nodes(Layer::Object).size();
      if (u->robot == 1) {
        EXPECT_EQ(n, 0u);
      } else {
        objects0 = std::max(objects0, n);
      }
    }
  }
  EXPECT_GT(objects0, 0u);
}

std::vector<TimedPosition> line(std::size_t n) {
  std::vector<TimedPosition> out;
  for (std::size_t i = 0; i < n; ++i) {
    out.push_back({double(i), Vector3(double(i), 0.5 * double(i), 0)});
  }
  return out;
}

TEST(Metrics, AteClosedForms) {
  const auto gt = line(50);
  EXPECT_EQ(evaluate_ate(gt, gt), 0.0);
  auto shifted = gt;
  for (auto& p : shifted) {
    p.position += Vector3(0, 0.6, 0.8);
  }
  EXPECT_NEAR(evaluate_ate(shifted, gt), 1.0, 1e-12);

  std::mt19937_64 rng(1);
  const double sigma = 0.1;
  std::normal_distribution<double> n(0.0, sigma);
  const auto big = line(20000);
  auto noisy = big;
  for (auto& p : noisy) {
    p.position += Vector3(n(rng), n(rng), n(rng));
  }
  EXPECT_NEAR(evaluate_ate(noisy, big), sigma * std::sqrt(3.0), 0.01 * sigma);

  std::vector<TimedPosition> disjoint{{100.5, Vector3::Zero()}};
  EXPECT_THROW(evaluate_ate(disjoint, gt), std::invalid_argument);
}

TEST(Metrics, AlignRigidRecoversTransform) {
  std::mt19937_64 rng(2);
  const Pose t = exp_map(test::random_twist(rng, 2.0));
  std::vector<Vector3> src;
  std::vector<Vector3> dst;
  std::uniform_real_distribution<double> u(-5, 5);
  for (int i = 0; i < 30; ++i) {
    src.emplace_back(u(rng), u(rng), u(rng));
    dst.push_back(t * src.back());
  }
  EXPECT_LT(test::pose_gap(align_rigid(src, dst), t), 1e-9);
}

TEST(Metrics, ObjectPercentages) {
  std::vector<LabeledPoint> gt;
  for (int i = 0; i < 10; ++i) {
    gt.push_back({i % 3, Vector3(3.0 * i, 0, 0)});
  }
  const ObjectMetrics same = evaluate_objects(gt, gt, 1.0);
  EXPECT_EQ(same.found, 100.0);
  EXPECT_EQ(same.correct, 100.0);

  const ObjectMetrics none = evaluate_objects({}, gt, 1.0);
  EXPECT_EQ(none.found, 0.0);
  EXPECT_TRUE(none.found_defined);
  EXPECT_FALSE(none.correct_defined);

  const std::vector<LabeledPoint> one{{0, Vector3::Zero()}};
  EXPECT_EQ(evaluate_objects(one, {{0, Vector3(0.9, 0, 0)}}, 1.0).found, 100.0);
  EXPECT_EQ(evaluate_objects(one, {{0, Vector3(1.1, 0, 0)}}, 1.0).found, 0.0);
  EXPECT_EQ(evaluate_objects(one, {{1, Vector3(0.1, 0, 0)}}, 1.0).correct, 0.0);
}

TEST(Metrics, ObjectScoresGrowWithThreshold) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0, 20);
  std::normal_distribution<double> n(0, 0.7);
  std::vector<LabeledPoint> gt;
  std::vector<LabeledPoint> est;
  for (int i = 0; i < 60; ++i) {
    gt.push_back({i % 4, Vector3(u(rng), u(rng), 0)});
    if (i % 5 != 0) {
      est.push_back({i % 4, gt.back().position + Vector3(n(rng), n(rng), 0)});
    }
  }
  double found = 0.0;
  double correct = 0.0;
  for (double th = 0.1; th < 5.0; th += 0.1) {
    const ObjectMetrics m = evaluate_objects(est, gt, th);
    EXPECT_GE(m.found, found);
    EXPECT_GE(m.correct, correct);
    found = m.found;
    correct = m.correct;
  }
}

TEST(Metrics, PlaceErrors) {
  std::vector<Vector3> grid;
  for (int x = 0; x < 10; ++x) {
    for (int y = 0; y < 10; ++y) {
      grid.emplace_back(2.0 * x, 2.0 * y, 1.0);
    }
  }
  std::vector<Vector3> shifted;
  for (const auto& p : grid) {
    shifted.push_back(p + Vector3(0.5, 0, 0));
  }
  const PlaceMetrics m = evaluate_places(shifted, grid);
  EXPECT_EQ(m.count, grid.size());
  EXPECT_NEAR(m.mean, 0.5, 1e-12);
  EXPECT_NEAR(m.median, 0.5, 1e-12);
  EXPECT_NEAR(m.max, 0.5, 1e-12);

  std::mt19937_64 rng(4);
  const double sigma = 0.05;
  std::normal_distribution<double> n(0.0, sigma);
  std::vector<Vector3> noisy;
  for (int rep = 0; rep < 100; ++rep) {
    for (const auto& p : grid) {
      noisy.push_back(p + Vector3(n(rng), n(rng), n(rng)));
    }
  }
  // Mean norm of an isotropic 3-D Gaussian.
  EXPECT_NEAR(evaluate_places(noisy, grid).mean, sigma * 2.0 * std::sqrt(2.0 / M_PI),
              0.01 * sigma);
}

TEST(Pipeline, ReadersOnlySeeWholeGraphs) {
  const ScenarioConfig s = scenario_from_json(scenario_json("two_robot_overlap.json"));
  const SimulationOutput sim = simulate(s);
  Backend backend(s.solver);
  std::atomic<bool> done{false};
  std::atomic<std::size_t> reads{0};
  std::atomic<std::size_t> bad{0};
  std::thread reader([&] {
    while (!done.load()) {
      if (const auto g = backend.graph()) {
        try {
          g->check_invariants();
        } catch (const std::exception&) {
          ++bad;
        }
        ++reads;
      }
      std::this_thread::yield();
    }
  });
  std::vector<std::string> published;
  const PipelineResult r =
      run_pipeline(sim.events, backend, PipelineOptions{false},
                   [&](const IterationOutput& out, const Backend& b) {
                     if (out.report.ok()) {
                       published.push_back(serialize(*b.graph()));
                     }
                   });
  done = true;
  reader.join();
  EXPECT_EQ(bad.load(), 0u);
  EXPECT_GT(reads.load(), 0u);
  EXPECT_EQ(r.failed_iterations, 0u);
  ASSERT_FALSE(published.empty());
  EXPECT_EQ(serialize(*r.graph), published.back());
}

TEST(Cli, ExitCodes) {
  const fs::path dir = scratch("cli");
  const std::string scenario = std::string(SGFUSE_SCENARIOS) + "/two_robot_overlap.json";
  EXPECT_EQ(run_cli("run " + scenario + " -o " + (dir / "a").string()), 0);
  EXPECT_TRUE(fs::exists(dir / "a" / "metrics.csv"));
  EXPECT_TRUE(fs::exists(dir / "a" / "final_graph.json"));
  EXPECT_FALSE(fs::exists(dir / "a" / "timing.csv"));
  EXPECT_EQ(run_cli("run /nonexistent.json -o " + (dir / "b").string()), 1);
  EXPECT_NE(run_cli("frobnicate"), 0);
  {
    std::ofstream bad(dir / "bad.json");
    bad << "{\"name\": \"x\"";
  }
  EXPECT_EQ(run_cli("run " + (dir / "bad.json").string() + " -o " + (dir / "c").string()), 1);
  EXPECT_EQ(run_cli("eval " + (dir / "a" / "final_graph.json").string() + " " +
                    (dir / "a" / "ground_truth.json").string()),
            0);
}

TEST(Cli, RunsAreDeterministic) {
  const fs::path dir = scratch("determinism");
  const std::string scenario = std::string(SGFUSE_SCENARIOS) + "/two_robot_overlap.json";
  for (const char* sub : {"x", "y"}) {
    ASSERT_EQ(run_cli("run " + scenario + " -o " + (dir / sub).string() + " --dump-dir " +
                      (dir / sub / "dumps").string()),
              0);
  }
  EXPECT_EQ(read_file((dir / "x" / "metrics.csv").string()),
            read_file((dir / "y" / "metrics.csv").string()));
  std::size_t dumps = 0;
  for (const auto& entry : fs::directory_iterator(dir / "x" / "dumps")) {
    const fs::path other = dir / "y" / "dumps" / entry.path().filename();
    ASSERT_TRUE(fs::exists(other));
    EXPECT_EQ(read_file(entry.path().string()), read_file(other.string()));
    ++dumps;
  }
  EXPECT_GT(dumps, 0u);
}

}  // namespace
}  // namespace sgfuse
