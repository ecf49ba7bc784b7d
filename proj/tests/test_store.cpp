#include <gtest/gtest.h>

#include <array>
#include <cmath>
#include <fstream>
#include <set>

#include "latmap/binary_io.hpp"
#include "latmap/config.hpp"
#include "latmap/error.hpp"
#include "latmap/store.hpp"
#include "test_util.hpp"

using namespace latmap;
using latmap::testing::TempDir;

namespace {

LatentMap make_map(std::uint64_t table_size = std::uint64_t{1} << 18) {
  GridConfig g;
  g.bounds = {Vec3(-1, 0, 0), Vec3(1, 1, 0.5)};
  g.cell_sizes = {0.5, 0.125};
  g.table_size = table_size;
  LatentMap m{LatentGrid(g), init_decoder(4, std::array<int, 1>{16}, 16, 8), 17};
  Rng rng(2);
  for (int l = 0; l < 2; ++l) {
    std::vector<double> f(m.grid.level(l).features.size());
    for (double& v : f) v = round_f32(rng.normal());
    m.grid.set_level_features(l, f);
  }
  for (int i = 0; i < 5; ++i) m.grid.mark_occupied(Vec3(rng.uniform(-1, 1), rng.uniform(), rng.uniform(0, 0.5)));
  return m;
}

void expect_same(const LatentMap& a, const LatentMap& b) {
  EXPECT_TRUE(a.grid == b.grid);
  EXPECT_EQ(a.grid.occupancy(), b.grid.occupancy());
  EXPECT_TRUE(a.decoder == b.decoder);
  EXPECT_EQ(a.revision, b.revision);
}

template <typename F>
ErrorKind kind_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  ADD_FAILURE() << "no exception";
  return ErrorKind::kState;
}

}  // namespace

TEST(MapFile, RoundTripDenseAndHashed) {
  for (std::uint64_t table : {std::uint64_t{1} << 18, std::uint64_t{64}}) {
    const LatentMap m = make_map(table);
    const auto bytes = serialize_map(m);
    EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "LMAP");
    expect_same(deserialize_map(bytes), m);
    EXPECT_EQ(serialize_map(deserialize_map(bytes)), bytes);
  }
  EXPECT_EQ(make_map(64).grid.level(1).mode, StorageMode::kHashed);
}

TEST(MapFile, SaveLoad) {
  TempDir dir("store_saveload");
  const LatentMap m = make_map();
  save_map(m, dir / "m.lmap");
  expect_same(load_map(dir / "m.lmap"), m);
  EXPECT_EQ(kind_of([&] { load_map(dir / "missing.lmap"); }), ErrorKind::kIo);
}

TEST(MapFile, WrongMagic) {
  auto bytes = serialize_map(make_map());
  bytes[0] = 'X';
  try {
    deserialize_map(bytes);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kFormat);
    EXPECT_NE(std::string(e.what()).find("magic"), std::string::npos);
  }
}

TEST(MapFile, TruncationReportsOffset) {
  const auto bytes = serialize_map(make_map());
  for (std::size_t n : {std::size_t{0}, std::size_t{3}, std::size_t{10}, bytes.size() / 2, bytes.size() - 1}) {
    try {
      deserialize_map(std::span(bytes).first(n));
      FAIL() << n;
    } catch (const Error& e) {
      EXPECT_EQ(e.kind(), ErrorKind::kFormat);
      EXPECT_NE(std::string(e.what()).find("offset"), std::string::npos) << e.what();
    }
  }
}

TEST(MapFile, VersionMismatch) {
  auto bytes = serialize_map(make_map());
  bytes[4] = 99;  // version follows the magic
  EXPECT_EQ(kind_of([&] { deserialize_map(bytes); }), ErrorKind::kFormat);
}

TEST(MapFile, FuzzedBytesRejected) {
  const auto bytes = serialize_map(make_map(64));
  Rng rng(12);
  for (int trial = 0; trial < 300; ++trial) {
    auto b = bytes;
    const int flips = 1 + static_cast<int>(rng.below(4));
    for (int f = 0; f < flips; ++f) b[rng.below(b.size())] ^= static_cast<std::uint8_t>(1 + rng.below(255));
    if (b == bytes) continue;
    EXPECT_EQ(kind_of([&] { deserialize_map(b); }), ErrorKind::kFormat);
  }
  auto extended = bytes;
  extended.push_back(0);
  EXPECT_EQ(kind_of([&] { deserialize_map(extended); }), ErrorKind::kFormat);
}

TEST(DecoderFile, RoundTripAndMagic) {
  const Mlp d = init_decoder(3, std::array<int, 2>{8, 4}, 16, 5);
  const auto bytes = serialize_decoder(d);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "LMDC");
  EXPECT_TRUE(deserialize_decoder(bytes) == d);
  auto bad = bytes;
  bad[1] = 'Z';
  EXPECT_EQ(kind_of([&] { deserialize_decoder(bad); }), ErrorKind::kFormat);
  EXPECT_EQ(kind_of([&] { deserialize_decoder(std::span(bytes).first(bytes.size() - 2)); }), ErrorKind::kFormat);
}

TEST(AggregatorFile, RoundTrip) {
  AggregatorConfig cfg;
  cfg.hidden = {8};
  cfg.token_dim = 4;
  cfg.num_frequencies = 2;
  const AggregatorWeights w = AggregatorWeights::init(cfg, 3);
  const auto bytes = serialize_aggregator(w);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "LMAG");
  const AggregatorWeights r = deserialize_aggregator(bytes);
  EXPECT_TRUE(r.mlp == w.mlp);
  EXPECT_EQ(r.num_frequencies, 2);
  auto bad = bytes;
  bad[bad.size() / 2] ^= 0x10;
  EXPECT_EQ(kind_of([&] { deserialize_aggregator(bad); }), ErrorKind::kFormat);
}

TEST(TokenFile, BinaryAndText) {
  MapToken t;
  t.values = Eigen::Vector3d(0.5, -1.25, 3.0);
  t.vertex_count = 7;
  const auto bytes = serialize_token(t);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "LMTK");
  EXPECT_EQ(deserialize_token(bytes).values, t.values);
  EXPECT_EQ(token_to_text(t), "0.5\n-1.25\n3\n");
  EXPECT_EQ(kind_of([&] { deserialize_token(std::span(bytes).first(9)); }), ErrorKind::kFormat);
}

TEST(FrameFiles, RoundTrip) {
  const CameraFrame f = latmap::testing::make_frame(3, 4, 5, 1.5f, 3);
  EXPECT_EQ(deserialize_depth(serialize_depth(f.depth)).data, f.depth.data);
  const EmbeddingGrid e = deserialize_embeddings(serialize_embeddings(f.embeddings));
  EXPECT_EQ(e.data, f.embeddings.data);
  EXPECT_EQ(e.dim, 5);
  PatchMask m(3, 4, 0);
  m.at(2, 1) = 1;
  EXPECT_EQ(deserialize_mask(serialize_mask(m)).data, m.data);
  auto bad = serialize_mask(m);
  bad.back() = 7;  // mask values are 0/1
  EXPECT_EQ(kind_of([&] { deserialize_mask(bad); }), ErrorKind::kFormat);
  EXPECT_EQ(kind_of([&] { deserialize_depth(serialize_mask(m)); }), ErrorKind::kFormat);
}

TEST(TextFiles, PoseAndIntrinsics) {
  Rng rng(4);
  CameraPose p{latmap::testing::random_rotation(rng), Vec3(0.1, -2, 3.5)};
  const CameraPose q = pose_from_text(pose_to_text(p));
  EXPECT_EQ(q.rotation, p.rotation);
  EXPECT_EQ(q.translation, p.translation);
  const CameraIntrinsics k{100.5, 99, 80, 79.5, 5};
  const CameraIntrinsics k2 = intrinsics_from_text(intrinsics_to_text(k));
  EXPECT_EQ(k2.fx, k.fx);
  EXPECT_EQ(k2.cy, k.cy);
  EXPECT_EQ(k2.patch_stride, 5);
  EXPECT_EQ(kind_of([&] { pose_from_text("1 2 3"); }), ErrorKind::kFormat);
  EXPECT_EQ(kind_of([&] { intrinsics_from_text("1 2 3 x 5"); }), ErrorKind::kFormat);
}

TEST(Manifest, DatasetRoundTrip) {
  TempDir dir("store_manifest");
  DatasetManifest m;
  m.root = dir.path();
  m.bounds = Aabb{Vec3(-1, -1, 0), Vec3(1, 1, 1)};
  CameraFrame f = latmap::testing::make_frame(2, 3, 4, 0.5f, 1);
  f.id = "a";
  f.dynamic_mask = PatchMask(2, 3, 0);
  m.frames.push_back(write_frame(dir.path(), f));
  f.id = "b";
  f.dynamic_mask.reset();
  m.heldout.push_back(write_frame(dir.path(), f));
  save_dataset_manifest(m);

  const DatasetManifest r = load_dataset_manifest(dir.path());
  ASSERT_EQ(r.frames.size(), 1u);
  ASSERT_EQ(r.heldout.size(), 1u);
  EXPECT_TRUE(r.frames[0].mask.has_value());
  EXPECT_FALSE(r.heldout[0].mask.has_value());
  ASSERT_TRUE(r.bounds.has_value());
  EXPECT_EQ(r.bounds->max, Vec3(1, 1, 1));
  const CameraFrame g = load_frame(r, r.find("b"));
  EXPECT_EQ(g.embeddings.data, f.embeddings.data);
  EXPECT_EQ(g.depth.data, f.depth.data);
  EXPECT_THROW(r.find("zzz"), Error);
  const SampleBatch s = load_samples(r, r.frames, nullptr);
  EXPECT_EQ(s.size(), 6);
}

TEST(Manifest, MalformedJsonRejected) {
  TempDir dir("store_badmanifest");
  {
    std::ofstream(dir / "manifest.json") << "{\"frames\": [{\"id\": 3}]}";
  }
  EXPECT_EQ(kind_of([&] { load_dataset_manifest(dir.path()); }), ErrorKind::kFormat);
  {
    std::ofstream(dir / "manifest.json") << "{not json";
  }
  EXPECT_EQ(kind_of([&] { load_dataset_manifest(dir.path()); }), ErrorKind::kFormat);
}

TEST(Manifest, StreamRoundTrip) {
  TempDir dir("store_stream");
  StreamManifest s;
  s.dataset = dir.path();
  s.steps = {{std::string("f0"), false}, {std::nullopt, false}, {std::string("f2"), true}};
  save_stream_manifest(s, dir / "stream.json");
  const StreamManifest r = load_stream_manifest(dir / "stream.json");
  ASSERT_EQ(r.steps.size(), 3u);
  EXPECT_EQ(r.steps[0].frame_id, std::optional<std::string>("f0"));
  EXPECT_FALSE(r.steps[1].frame_id.has_value());
  EXPECT_TRUE(r.steps[2].grasping);
}

TEST(Config, DefaultsAndOverrides) {
  const PipelineConfig d = parse_pipeline_config(nlohmann::json::object());
  EXPECT_EQ(d.train.steps, 3000);
  EXPECT_EQ(d.online.t_update, 5);
  EXPECT_EQ(d.online.k_update, 20);
  EXPECT_EQ(d.grid.cell_sizes, (std::vector<double>{0.24, 0.12}));
  const PipelineConfig c = parse_pipeline_config(
      nlohmann::json::parse(R"({"train": {"steps": 10, "lr_grid": 0.5}, "online": {"k_update": 3}})"));
  EXPECT_EQ(c.train.steps, 10);
  EXPECT_EQ(c.train.lr_grid, 0.5);
  EXPECT_EQ(c.online.k_update, 3);
  const PipelineConfig rt = parse_pipeline_config(to_json(c));
  EXPECT_EQ(rt.train.steps, 10);
  EXPECT_EQ(rt.online.k_update, 3);
}

TEST(Config, UnknownAndInvalidKeysRejected) {
  EXPECT_THROW(parse_pipeline_config(nlohmann::json::parse(R"({"trian": {}})")), Error);
  EXPECT_THROW(parse_pipeline_config(nlohmann::json::parse(R"({"train": {"stepz": 1}})")), Error);
  EXPECT_THROW(parse_pipeline_config(nlohmann::json::parse(R"({"train": {"steps": "many"}})")), Error);
  EXPECT_THROW(parse_pipeline_config(nlohmann::json::parse(R"({"train": {"lr_grid": -1}})")), Error);
  EXPECT_THROW(parse_synth_spec(nlohmann::json::parse(R"({"regions": 3})")), Error);
  const SynthSpec s = parse_synth_spec(nlohmann::json::parse(R"({"seed": 4, "stream": {"length": 12}})"));
  EXPECT_EQ(s.seed, 4u);
  ASSERT_TRUE(s.stream.has_value());
  EXPECT_EQ(s.stream->length, 12);
}

TEST(Pca, TwoOrthogonalRegionsTwoColors) {
  // Grid whose decoded field is the identity on the encoding: decoder = [I 0]
  // and features constant per half-space.
  GridConfig g;
  g.bounds = {Vec3::Zero(), Vec3(2, 1, 1)};
  g.cell_sizes = {0.25};
  g.feature_dim = 4;
  LatentMap m{LatentGrid(g), Mlp({DenseLayer{Eigen::MatrixXd::Identity(4, 4), Eigen::VectorXd::Zero(4)}}), 0};
  const auto dims = m.grid.level(0).dims;
  for (int z = 0; z < dims[2]; ++z) {
    for (int y = 0; y < dims[1]; ++y) {
      for (int x = 0; x < dims[0]; ++x) {
        std::vector<double> f(4, 0.0);
        f[x < dims[0] / 2 ? 0 : 1] = 1.0;
        m.grid.set_vertex_feature(0, {x, y, z}, f);
      }
    }
  }
  m.grid.mark_occupied(Vec3(0.1, 0.5, 0.5));
  m.grid.mark_occupied(Vec3(1.9, 0.5, 0.5));
  const auto pts = pca_colored_points(m);
  ASSERT_EQ(pts.size(), 16u);
  std::set<std::array<std::uint8_t, 3>> colors;
  for (const auto& p : pts) colors.insert(p.rgb);
  ASSERT_EQ(colors.size(), 2u);
  const auto a = *colors.begin(), b = *colors.rbegin();
  EXPECT_EQ(std::abs(int(a[0]) - int(b[0])), 255);  // first component separates them
  for (const auto& p : pts) {
    const bool left = p.position.x() < 1.0;
    const bool left_color = p.rgb == pts.front().rgb;
    EXPECT_EQ(left, left_color == (pts.front().position.x() < 1.0));
  }

  const Eigen::MatrixXd pcs = principal_components(decode_occupied(m.grid, m.decoder).features, 3, 0);
  Eigen::Vector4d expected(1, -1, 0, 0);
  EXPECT_NEAR(std::abs(pcs.col(0).dot(expected.normalized())), 1.0, 1e-9);
  EXPECT_EQ(pcs.col(1), Eigen::Vector4d::Zero());
}

TEST(Pca, SingleRegionOneColor) {
  LatentMap m = make_map();
  for (int l = 0; l < 2; ++l) {
    std::vector<double> f;
    for (std::int64_t s = 0; s < m.grid.level(l).num_slots; ++s) {
      for (int i = 0; i < 8; ++i) f.push_back(0.1 * (i + 1));
    }
    m.grid.set_level_features(l, f);
  }
  const auto pts = pca_colored_points(m);
  ASSERT_EQ(pts.size(), m.grid.occupancy().size());
  for (const auto& p : pts) EXPECT_EQ(p.rgb, pts[0].rgb);
}

TEST(Pca, PlyExport) {
  TempDir dir("store_ply");
  const LatentMap m = make_map();
  const std::size_t n = export_pca_ply(m, dir / "m.ply");
  EXPECT_EQ(n, m.grid.occupied_vertices().size());
  const std::string text = io::read_text_file(dir / "m.ply");
  EXPECT_EQ(text.rfind("ply\nformat ascii 1.0\n", 0), 0u);
  EXPECT_NE(text.find("element vertex " + std::to_string(n) + "\n"), std::string::npos);
  EXPECT_EQ(export_pca_ply(m, dir / "m.ply", 0), n);
  EXPECT_EQ(io::read_text_file(dir / "m.ply"), text);  // deterministic

  LatentMap empty = make_map();
  empty.grid.clear_occupancy();
  EXPECT_EQ(kind_of([&] { export_pca_ply(empty, dir / "e.ply"); }), ErrorKind::kEmptyMap);
}
