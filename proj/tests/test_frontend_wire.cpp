#include <gtest/gtest.h>

#include <future>
#include <random>
#include <sstream>

#include "sgfuse/frontend.h"
#include "sgfuse/serialization.h"
#include "sgfuse/wire.h"
#include "test_util.h"

using namespace sgfuse;

namespace {

// Snapshot of one robot with n agents chained through places.
SceneGraph robot_snapshot(RobotId r, std::uint64_t n, double shift = 0.0) {
  SceneGraph g;
  RobotInfo info;
  info.id = r;
  for (std::uint64_t k = 0; k < n; ++k) {
    info.mesh_vertices.push_back(Vector3(static_cast<double>(k), 0.5, 0.0));
  }
  g.add_robot(info);
  for (std::uint64_t k = 0; k < n; ++k) {
    const double x = static_cast<double>(k) + shift;
    g.add_node({r, Layer::Agent, k}, AgentNode{Pose::Translation(Vector3(x, r, 0)), double(k)});
    g.add_node({r, Layer::Place, k}, PlaceNode{Vector3(x, r, 1), 0.5});
    g.add_node({r, Layer::Mesh, k}, MeshNode{Vector3(x, r, 0)});
    g.add_edge(Edge::Inclusion({r, Layer::Agent, k}, {r, Layer::Place, k}));
    if (k > 0) {
      g.add_edge(Edge::Adjacent({r, Layer::Place, k - 1}, {r, Layer::Place, k}));
    }
  }
  return g;
}

// Independent oracle: the union of the latest snapshot per robot.
SceneGraph union_of_latest(const std::map<RobotId, SceneGraph>& latest) {
  SceneGraph out;
  for (const auto& [r, g] : latest) {
    out.add_robot(g.robot(r));
  }
  for (const auto& [r, g] : latest) {
    for (const auto& [id, node] : g.nodes()) {
      out.add_node(id, node.payload);
    }
  }
  for (const auto& [r, g] : latest) {
    for (const Edge& e : g.edges()) {
      out.add_edge(e);
    }
  }
  return out;
}

LoopClosure make_lc(std::uint64_t id) {
  LoopClosure lc;
  lc.id = id;
  lc.from = {0, Layer::Agent, 1};
  lc.to = {1, Layer::Agent, 2};
  lc.measurement = Pose::RotZ(0.3, Vector3(1, 2, 3));
  lc.covariance = Covariance6::FromInformationDiagonal(100, 25);
  return lc;
}

}  // namespace

TEST(Frontend, DiffCountsAndStaleUpdates) {
  Frontend f;
  DiffStats s = f.ingest({0, 1, robot_snapshot(0, 3)});
  EXPECT_EQ(s.nodes_added, 9u);
  EXPECT_EQ(s.edges_added, 5u);
  s = f.ingest({0, 2, robot_snapshot(0, 3)});
  EXPECT_TRUE(s.zero());
  EXPECT_EQ(s.nodes_unchanged, 9u);
  s = f.ingest({0, 3, robot_snapshot(0, 4, 0.25)});
  EXPECT_EQ(s.nodes_added, 3u);
  EXPECT_EQ(s.nodes_changed, 9u);
  s = f.ingest({0, 3, robot_snapshot(0, 1)});
  EXPECT_TRUE(s.stale);
  EXPECT_EQ(f.stale_count(), 1u);
  EXPECT_EQ(f.snapshot().graph->live_nodes(Layer::Agent).size(), 4u);
}

TEST(Frontend, SnapshotEqualsUnionOfLatestOracle) {
  std::mt19937_64 rng(9);
  Frontend f;
  std::map<RobotId, SceneGraph> latest;
  std::map<RobotId, std::uint64_t> seq;
  for (int t = 0; t < 40; ++t) {
    const RobotId r = static_cast<RobotId>(rng() % 3);
    const std::uint64_t n = 1 + rng() % 6;
    const SceneGraph g = robot_snapshot(r, n, 0.1 * static_cast<double>(t));
    const bool stale = seq[r] > 0 && rng() % 5 == 0;
    const std::uint64_t s = stale ? seq[r] : ++seq[r];
    f.ingest({r, s, g});
    if (!stale) {
      latest[r] = g;
    }
    EXPECT_TRUE(*f.snapshot().graph == union_of_latest(latest)) << "step " << t;
  }
}

TEST(Frontend, RejectsForeignContent) {
  Frontend f;
  SceneGraph g = robot_snapshot(0, 2);
  EXPECT_THROW(f.ingest({1, 1, g}), ParseError);
  g.robot(0).frame = FrameStatus::Global;
  EXPECT_THROW(f.ingest({0, 1, g}), ParseError);
}

TEST(Frontend, LoopClosuresDedupedById) {
  Frontend f;
  f.add_loop_closure(make_lc(4));
  f.add_loop_closure(make_lc(4));
  f.add_loop_closure(make_lc(5));
  EXPECT_EQ(f.snapshot().loop_closures->size(), 2u);
}

TEST(Frontend, SnapshotsAreImmutableCopies) {
  Frontend f;
  f.ingest({0, 1, robot_snapshot(0, 2)});
  const FrontendSnapshot a = f.snapshot();
  f.ingest({0, 2, robot_snapshot(0, 5)});
  EXPECT_EQ(a.graph->live_nodes(Layer::Agent).size(), 2u);
  EXPECT_EQ(a.sequences.at(0), 1u);
}

TEST(Frontend, BandwidthSplitsMeshFromGraph) {
  const GraphUpdate u{0, 1, robot_snapshot(0, 5)};
  const std::string bytes = encode_event(Event{u});
  const auto split = update_channel_bytes(u, bytes.size());
  EXPECT_EQ(split[0] + split[1], bytes.size());
  EXPECT_GT(split[1], 0u);
  EXPECT_GT(split[0], split[1]);
}

TEST(Wire, EventsRoundtrip) {
  const std::vector<Event> events = {
      SessionHeader{Json{{"solver", Json::object()}}},
      GraphUpdate{0, 3, robot_snapshot(0, 2)},
      make_lc(7),
      BackendTick{2},
  };
  for (const Event& e : events) {
    const std::string s = encode_event(e);
    EXPECT_EQ(encode_event(decode_event(s, "t")), s);
  }
  std::stringstream nd;
  write_ndjson(nd, events);
  const auto back = read_ndjson(nd, "nd");
  ASSERT_EQ(back.size(), events.size());
  std::stringstream fr;
  write_frames(fr, events);
  EXPECT_EQ(read_frames(fr, "fr").size(), events.size());
}

TEST(Wire, NdjsonErrorsNameTheLine) {
  std::stringstream nd;
  nd << encode_event(Event{BackendTick{1}}) << "\n" << "{\"type\": \"bogus\"}\n";
  try {
    read_ndjson(nd, "stream");
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("stream:2"), std::string::npos) << e.what();
  }
}

TEST(Wire, FrameDecoderHandlesSplitsAndTruncation) {
  const std::string a = encode_frame("hello");
  const std::string b = encode_frame(std::string(300, 'x'));
  const std::string all = a + b;
  FrameDecoder d;
  std::vector<std::string> got;
  for (char c : all) {
    d.feed(&c, 1);
    while (auto f = d.next()) {
      got.push_back(*f);
    }
  }
  ASSERT_EQ(got.size(), 2u);
  EXPECT_EQ(got[0], "hello");
  EXPECT_EQ(got[1].size(), 300u);
  EXPECT_TRUE(d.idle());
  EXPECT_EQ(static_cast<unsigned char>(a[3]), 5u);  // big-endian length

  std::stringstream cut(all.substr(0, all.size() - 3));
  EXPECT_THROW(read_frames(cut, "cut"), ParseError);
}

TEST(Wire, InputSourceParsing) {
  const auto tcp = parse_input_source("tcp://127.0.0.1:7000");
  EXPECT_EQ(tcp.kind, InputSource::Kind::Tcp);
  EXPECT_EQ(tcp.port, 7000);
  EXPECT_EQ(parse_input_source("file:/tmp/x.ndjson").path, "/tmp/x.ndjson");
  EXPECT_EQ(parse_input_source("run.ndjson").path, "run.ndjson");
  EXPECT_THROW(parse_input_source("tcp://host"), std::invalid_argument);
  EXPECT_THROW(parse_input_source("tcp://host:99999"), std::invalid_argument);
}

TEST(Wire, TcpStreamRoundtrip) {
  const std::vector<Event> events = {GraphUpdate{0, 1, robot_snapshot(0, 20)}, make_lc(1),
                                     BackendTick{1}};
  TcpFrameListener listener("127.0.0.1", 0);
  const std::uint16_t port = listener.port();
  auto received = std::async(std::launch::async, [&] { return listener.receive_all(); });
  send_frames_tcp("127.0.0.1", port, events);
  const auto got = received.get();
  ASSERT_EQ(got.size(), events.size());
  for (std::size_t i = 0; i < got.size(); ++i) {
    EXPECT_EQ(encode_event(got[i]), encode_event(events[i]));
  }
}
