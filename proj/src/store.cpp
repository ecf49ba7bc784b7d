#include "latmap/store.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "json.hpp"
#include "latmap/binary_io.hpp"
#include "latmap/error.hpp"
#include "latmap/random.hpp"

namespace latmap {

using io::ByteReader;
using io::ByteWriter;
using json = nlohmann::json;

namespace {

constexpr std::uint32_t kMaxLayers = 64;
constexpr std::uint32_t kMaxLayerWidth = 1u << 20;
constexpr std::uint32_t kMaxLevels = 32;

void write_mlp_body(ByteWriter& w, const Mlp& mlp) {
  const auto dims = mlp.dims();
  w.put<std::uint32_t>(static_cast<std::uint32_t>(mlp.num_layers()));
  for (int d : dims) w.put<std::uint32_t>(static_cast<std::uint32_t>(d));
  for (const auto& l : mlp.layers()) {
    for (Eigen::Index r = 0; r < l.weight.rows(); ++r) {
      for (Eigen::Index c = 0; c < l.weight.cols(); ++c) w.put(static_cast<float>(l.weight(r, c)));
    }
    for (Eigen::Index r = 0; r < l.bias.size(); ++r) w.put(static_cast<float>(l.bias[r]));
  }
}

Mlp read_mlp_body(ByteReader& r) {
  const auto num_layers = r.get<std::uint32_t>("layer count");
  if (num_layers < 1 || num_layers > kMaxLayers) r.fail("invalid layer count " + std::to_string(num_layers));
  std::vector<std::uint32_t> dims(num_layers + 1);
  for (auto& d : dims) {
    d = r.get<std::uint32_t>("layer width");
    if (d < 1 || d > kMaxLayerWidth) r.fail("invalid layer width " + std::to_string(d));
  }
  std::vector<DenseLayer> layers;
  for (std::uint32_t i = 0; i < num_layers; ++i) {
    const auto in = static_cast<Eigen::Index>(dims[i]);
    const auto out = static_cast<Eigen::Index>(dims[i + 1]);
    const auto w = r.get_f32_array(static_cast<std::size_t>(in * out), "weights");
    const auto b = r.get_f32_array(static_cast<std::size_t>(out), "bias");
    DenseLayer l;
    l.weight.resize(out, in);
    for (Eigen::Index row = 0; row < out; ++row) {
      for (Eigen::Index col = 0; col < in; ++col) l.weight(row, col) = w[static_cast<std::size_t>(row * in + col)];
    }
    l.bias = Eigen::Map<const Eigen::VectorXd>(b.data(), out);
    if (!l.weight.allFinite() || !l.bias.allFinite()) r.fail("non-finite parameters");
    layers.push_back(std::move(l));
  }
  return Mlp(std::move(layers));
}

void write_decoder_block(ByteWriter& w, const Mlp& mlp) {
  w.magic("LMDC");
  w.put<std::uint32_t>(kDecoderFormatVersion);
  write_mlp_body(w, mlp);
}

Mlp read_decoder_block(ByteReader& r) {
  r.expect_magic("LMDC");
  const auto version = r.get<std::uint32_t>("decoder version");
  if (version != kDecoderFormatVersion) r.fail("unsupported decoder version " + std::to_string(version));
  return read_mlp_body(r);
}

void append_crc(ByteWriter& w) { w.put<std::uint32_t>(io::crc32(w.bytes())); }

void check_crc(ByteReader& r, std::span<const std::uint8_t> bytes) {
  const std::size_t body = r.offset();
  const auto stored = r.get<std::uint32_t>("checksum");
  r.expect_end();
  if (stored != io::crc32(bytes.first(body))) r.fail("checksum mismatch");
}

}  // namespace

// ---- map -------------------------------------------------------------------

std::vector<std::uint8_t> serialize_map(const LatentMap& map) {
  const LatentGrid& g = map.grid;
  const GridConfig& cfg = g.config();
  ByteWriter w;
  w.magic("LMAP");
  w.put<std::uint32_t>(kMapFormatVersion);
  w.put<std::uint64_t>(map.revision);
  for (int a = 0; a < 3; ++a) w.put<double>(cfg.bounds.min[a]);
  for (int a = 0; a < 3; ++a) w.put<double>(cfg.bounds.max[a]);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(cfg.num_levels()));
  for (double h : cfg.cell_sizes) w.put<double>(h);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(cfg.feature_dim));
  w.put<std::uint64_t>(cfg.table_size);
  w.put<std::uint64_t>(cfg.seed);
  for (int l = 0; l < g.num_levels(); ++l) {
    const GridLevel& lv = g.level(l);
    w.put<std::uint8_t>(static_cast<std::uint8_t>(lv.mode));
    for (auto d : lv.dims) w.put<std::int32_t>(d);
    w.put<std::int64_t>(lv.num_slots);
    w.put_f32_array(lv.features);
  }
  w.put<std::uint64_t>(g.occupancy().size());
  for (const auto& v : g.occupancy()) {
    for (auto c : v) w.put<std::int32_t>(c);
  }
  const bool has_decoder = map.decoder.num_layers() > 0;
  w.put<std::uint8_t>(has_decoder ? 1 : 0);
  if (has_decoder) write_decoder_block(w, map.decoder);
  append_crc(w);
  return w.take();
}

LatentMap deserialize_map(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes, "map");
  r.expect_magic("LMAP");
  const auto version = r.get<std::uint32_t>("version");
  if (version != kMapFormatVersion) {
    r.fail("unsupported map version " + std::to_string(version) + " (expected " +
           std::to_string(kMapFormatVersion) + ")");
  }
  LatentMap map;
  map.revision = r.get<std::uint64_t>("revision");
  GridConfig cfg;
  for (int a = 0; a < 3; ++a) cfg.bounds.min[a] = r.get<double>("bounds");
  for (int a = 0; a < 3; ++a) cfg.bounds.max[a] = r.get<double>("bounds");
  const auto levels = r.get<std::uint32_t>("level count");
  if (levels < 1 || levels > kMaxLevels) r.fail("invalid level count " + std::to_string(levels));
  cfg.cell_sizes.resize(levels);
  for (auto& h : cfg.cell_sizes) h = r.get<double>("cell size");
  const auto c = r.get<std::uint32_t>("feature dim");
  if (c < 1 || c > 4096) r.fail("invalid feature dim " + std::to_string(c));
  cfg.feature_dim = static_cast<int>(c);
  cfg.table_size = r.get<std::uint64_t>("table size");
  cfg.seed = r.get<std::uint64_t>("seed");
  try {
    cfg.validate();
  } catch (const Error& e) {
    r.fail(std::string("invalid grid config: ") + e.what());
  }

  // Read every payload before building the grid so a corrupt header cannot
  // trigger a large allocation.
  std::vector<std::vector<double>> payloads;
  for (std::uint32_t l = 0; l < levels; ++l) {
    const auto mode = r.get<std::uint8_t>("level mode");
    std::array<std::int32_t, 3> dims{};
    for (auto& d : dims) d = r.get<std::int32_t>("level dims");
    const auto slots = r.get<std::int64_t>("slot count");
    const auto expect_dims = level_dims(cfg.bounds, cfg.cell_sizes[l]);
    const std::int64_t m = static_cast<std::int64_t>(expect_dims[0]) * expect_dims[1] * expect_dims[2];
    const bool dense = static_cast<std::uint64_t>(m) <= cfg.table_size;
    const auto expect_mode = dense ? StorageMode::kDense : StorageMode::kHashed;
    const std::int64_t expect_slots = dense ? m : static_cast<std::int64_t>(cfg.table_size);
    if (dims != expect_dims || mode != static_cast<std::uint8_t>(expect_mode) || slots != expect_slots) {
      r.fail("level " + std::to_string(l) + " header inconsistent with grid config");
    }
    payloads.push_back(r.get_f32_array(static_cast<std::size_t>(slots) * c, "level features"));
    for (double f : payloads.back()) {
      if (!std::isfinite(f)) r.fail("non-finite feature in level " + std::to_string(l));
    }
  }
  const auto occ_count = r.get<std::uint64_t>("occupancy count");
  if (occ_count > r.remaining() / 12) r.fail("occupancy count exceeds payload");
  std::vector<VertexCoord> occ(static_cast<std::size_t>(occ_count));
  for (auto& v : occ) {
    for (auto& x : v) x = r.get<std::int32_t>("occupancy coord");
  }
  const auto has_decoder = r.get<std::uint8_t>("decoder flag");
  if (has_decoder > 1) r.fail("invalid decoder flag");
  Mlp decoder;
  if (has_decoder) decoder = read_decoder_block(r);
  check_crc(r, bytes);

  LatentGrid grid(cfg);
  for (std::uint32_t l = 0; l < levels; ++l) grid.set_level_features(static_cast<int>(l), std::move(payloads[l]));
  const auto fine = level_dims(cfg.bounds, cfg.cell_sizes.back());
  for (std::size_t i = 0; i < occ.size(); ++i) {
    const auto& v = occ[i];
    for (int a = 0; a < 3; ++a) {
      if (v[static_cast<std::size_t>(a)] < 0 || v[static_cast<std::size_t>(a)] >= fine[static_cast<std::size_t>(a)]) {
        throw Error(ErrorKind::kFormat, "map: occupancy coordinate outside finest level");
      }
    }
    if (i > 0 && !(occ[i - 1] < v)) throw Error(ErrorKind::kFormat, "map: occupancy list not strictly sorted");
    grid.insert_occupied(v);
  }
  if (has_decoder && decoder.in_dim() != grid.encoded_dim()) {
    throw Error(ErrorKind::kFormat, "map: decoder input width does not match grid encoding");
  }
  map.grid = std::move(grid);
  map.decoder = std::move(decoder);
  return map;
}

void save_map(const LatentMap& map, const std::filesystem::path& path) {
  io::write_file(path, serialize_map(map));
}

LatentMap load_map(const std::filesystem::path& path) {
  const auto bytes = io::read_file(path);
  try {
    return deserialize_map(bytes);
  } catch (const Error& e) {
    throw Error(e.kind(), path.string() + ": " + e.what());
  }
}

// ---- decoder / aggregator / token -----------------------------------------

std::vector<std::uint8_t> serialize_decoder(const Mlp& decoder) {
  ByteWriter w;
  write_decoder_block(w, decoder);
  append_crc(w);
  return w.take();
}

Mlp deserialize_decoder(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes, "decoder");
  Mlp m = read_decoder_block(r);
  check_crc(r, bytes);
  return m;
}

void save_decoder(const Mlp& decoder, const std::filesystem::path& path) {
  io::write_file(path, serialize_decoder(decoder));
}

Mlp load_decoder(const std::filesystem::path& path) { return deserialize_decoder(io::read_file(path)); }

std::vector<std::uint8_t> serialize_aggregator(const AggregatorWeights& weights) {
  ByteWriter w;
  w.magic("LMAG");
  w.put<std::uint32_t>(kAggregatorFormatVersion);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(weights.num_frequencies));
  write_mlp_body(w, weights.mlp);
  append_crc(w);
  return w.take();
}

AggregatorWeights deserialize_aggregator(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes, "aggregator");
  r.expect_magic("LMAG");
  const auto version = r.get<std::uint32_t>("version");
  if (version != kAggregatorFormatVersion) r.fail("unsupported aggregator version " + std::to_string(version));
  AggregatorWeights w;
  const auto b = r.get<std::uint32_t>("num frequencies");
  if (b < 1 || b > 32) r.fail("invalid num frequencies " + std::to_string(b));
  w.num_frequencies = static_cast<int>(b);
  w.mlp = read_mlp_body(r);
  if (w.mlp.in_dim() <= 6 * w.num_frequencies) r.fail("aggregator input narrower than positional encoding");
  check_crc(r, bytes);
  return w;
}

void save_aggregator(const AggregatorWeights& weights, const std::filesystem::path& path) {
  io::write_file(path, serialize_aggregator(weights));
}

AggregatorWeights load_aggregator(const std::filesystem::path& path) {
  return deserialize_aggregator(io::read_file(path));
}

std::vector<std::uint8_t> serialize_token(const MapToken& token) {
  ByteWriter w;
  w.magic("LMTK");
  w.put<std::uint32_t>(static_cast<std::uint32_t>(token.values.size()));
  w.put_f32_array({token.values.data(), static_cast<std::size_t>(token.values.size())});
  return w.take();
}

MapToken deserialize_token(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes, "token");
  r.expect_magic("LMTK");
  const auto m = r.get<std::uint32_t>("token dim");
  const auto v = r.get_f32_array(m, "token values");
  r.expect_end();
  MapToken t;
  t.values = Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
  return t;
}

std::string token_to_text(const MapToken& token) {
  std::string out;
  char buf[32];
  for (Eigen::Index i = 0; i < token.values.size(); ++i) {
    std::snprintf(buf, sizeof(buf), "%.9g\n", static_cast<double>(static_cast<float>(token.values[i])));
    out += buf;
  }
  return out;
}

// ---- frame files -----------------------------------------------------------

std::vector<std::uint8_t> serialize_depth(const DepthImage& depth) {
  ByteWriter w;
  w.magic("LMDP");
  w.put<std::uint32_t>(static_cast<std::uint32_t>(depth.rows));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(depth.cols));
  for (float v : depth.data) w.put(v);
  return w.take();
}

DepthImage deserialize_depth(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes, "depth");
  r.expect_magic("LMDP");
  const auto rows = r.get<std::uint32_t>("rows");
  const auto cols = r.get<std::uint32_t>("cols");
  if (rows > (1u << 16) || cols > (1u << 16)) r.fail("depth image too large");
  if (static_cast<std::uint64_t>(rows) * cols * 4 != r.remaining()) {
    r.fail("payload size does not match " + std::to_string(rows) + "x" + std::to_string(cols));
  }
  DepthImage d(static_cast<int>(rows), static_cast<int>(cols));
  for (auto& v : d.data) v = r.get<float>("depth");
  return d;
}

std::vector<std::uint8_t> serialize_embeddings(const EmbeddingGrid& grid) {
  ByteWriter w;
  w.magic("LMFT");
  w.put<std::uint32_t>(static_cast<std::uint32_t>(grid.rows));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(grid.cols));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(grid.dim));
  for (float v : grid.data) w.put(v);
  return w.take();
}

EmbeddingGrid deserialize_embeddings(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes, "embeddings");
  r.expect_magic("LMFT");
  const auto h = r.get<std::uint32_t>("H");
  const auto wdt = r.get<std::uint32_t>("W");
  const auto k = r.get<std::uint32_t>("k");
  if (h > (1u << 16) || wdt > (1u << 16) || k > (1u << 16)) r.fail("embedding grid too large");
  if (static_cast<std::uint64_t>(h) * wdt * k * 4 != r.remaining()) r.fail("payload size does not match header");
  EmbeddingGrid g;
  g.rows = static_cast<int>(h);
  g.cols = static_cast<int>(wdt);
  g.dim = static_cast<int>(k);
  g.data.resize(static_cast<std::size_t>(h) * wdt * k);
  for (auto& v : g.data) v = r.get<float>("embedding");
  return g;
}

std::vector<std::uint8_t> serialize_mask(const PatchMask& mask) {
  ByteWriter w;
  w.magic("LMMK");
  w.put<std::uint32_t>(static_cast<std::uint32_t>(mask.rows));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(mask.cols));
  w.raw(mask.data.data(), mask.data.size());
  return w.take();
}

PatchMask deserialize_mask(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes, "mask");
  r.expect_magic("LMMK");
  const auto rows = r.get<std::uint32_t>("rows");
  const auto cols = r.get<std::uint32_t>("cols");
  if (rows > (1u << 16) || cols > (1u << 16)) r.fail("mask too large");
  if (static_cast<std::uint64_t>(rows) * cols != r.remaining()) r.fail("payload size does not match header");
  PatchMask m(static_cast<int>(rows), static_cast<int>(cols));
  for (auto& v : m.data) {
    v = r.get<std::uint8_t>("mask");
    if (v > 1) r.fail("mask values must be 0 or 1");
  }
  return m;
}

namespace {

std::vector<double> parse_numbers(const std::string& text, std::size_t expected, const char* what) {
  std::istringstream in(text);
  std::vector<double> out;
  std::string tok;
  while (in >> tok) {
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(tok, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != tok.size()) throw Error(ErrorKind::kFormat, std::string(what) + ": bad number \"" + tok + "\"");
    out.push_back(v);
  }
  if (out.size() != expected) {
    throw Error(ErrorKind::kFormat, std::string(what) + ": expected " + std::to_string(expected) +
                                        " values, got " + std::to_string(out.size()));
  }
  return out;
}

}  // namespace

std::string pose_to_text(const CameraPose& pose) {
  std::string out;
  char buf[40];
  for (int r = 0; r < 4; ++r) {
    for (int c = 0; c < 4; ++c) {
      double v;
      if (r < 3) {
        v = c < 3 ? pose.rotation(r, c) : pose.translation[r];
      } else {
        v = c < 3 ? 0.0 : 1.0;
      }
      std::snprintf(buf, sizeof(buf), "%.17g", v);
      out += buf;
      out += c < 3 ? ' ' : '\n';
    }
  }
  return out;
}

CameraPose pose_from_text(const std::string& text) {
  const auto v = parse_numbers(text, 16, "pose");
  CameraPose p;
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) p.rotation(r, c) = v[static_cast<std::size_t>(r * 4 + c)];
    p.translation[r] = v[static_cast<std::size_t>(r * 4 + 3)];
  }
  if (v[12] != 0.0 || v[13] != 0.0 || v[14] != 0.0 || v[15] != 1.0) {
    throw Error(ErrorKind::kFormat, "pose: last row must be 0 0 0 1");
  }
  return p;
}

std::string intrinsics_to_text(const CameraIntrinsics& k) {
  char buf[160];
  std::snprintf(buf, sizeof(buf), "%.17g %.17g %.17g %.17g %d\n", k.fx, k.fy, k.cx, k.cy, k.patch_stride);
  return buf;
}

CameraIntrinsics intrinsics_from_text(const std::string& text) {
  const auto v = parse_numbers(text, 5, "intrinsics");
  CameraIntrinsics k{v[0], v[1], v[2], v[3], static_cast<int>(v[4])};
  if (static_cast<double>(k.patch_stride) != v[4]) throw Error(ErrorKind::kFormat, "intrinsics: patch_stride must be an integer");
  return k;
}

// ---- dataset manifest ------------------------------------------------------

namespace {

json entry_to_json(const FrameEntry& e) {
  json j{{"id", e.id}, {"depth", e.depth}, {"embeddings", e.embeddings}, {"pose", e.pose},
         {"intrinsics", e.intrinsics}};
  if (e.mask) j["mask"] = *e.mask;
  return j;
}

FrameEntry entry_from_json(const json& j) {
  FrameEntry e;
  e.id = j.at("id").get<std::string>();
  e.depth = j.at("depth").get<std::string>();
  e.embeddings = j.at("embeddings").get<std::string>();
  e.pose = j.at("pose").get<std::string>();
  e.intrinsics = j.at("intrinsics").get<std::string>();
  if (j.contains("mask") && !j["mask"].is_null()) e.mask = j["mask"].get<std::string>();
  return e;
}

json parse_json_file(const std::filesystem::path& path) {
  try {
    return json::parse(io::read_text_file(path));
  } catch (const json::exception& e) {
    throw Error(ErrorKind::kFormat, path.string() + ": " + e.what());
  }
}

Vec3 vec3_from_json(const json& j) {
  if (!j.is_array() || j.size() != 3) throw Error(ErrorKind::kFormat, "expected a 3-element array");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

}  // namespace

const FrameEntry& DatasetManifest::find(const std::string& id) const {
  for (const auto* list : {&frames, &heldout, &stream}) {
    for (const auto& e : *list) {
      if (e.id == id) return e;
    }
  }
  throw Error(ErrorKind::kFormat, "dataset: unknown frame id \"" + id + "\"");
}

DatasetManifest load_dataset_manifest(const std::filesystem::path& dir) {
  const auto path = dir / "manifest.json";
  const json j = parse_json_file(path);
  DatasetManifest m;
  m.root = dir;
  try {
    if (j.at("format").get<std::string>() != "latmap-dataset") {
      throw Error(ErrorKind::kFormat, "not a latmap-dataset manifest");
    }
    if (j.at("version").get<int>() != 1) throw Error(ErrorKind::kFormat, "unsupported dataset version");
    if (j.contains("bounds")) {
      m.bounds = Aabb{vec3_from_json(j["bounds"].at("min")), vec3_from_json(j["bounds"].at("max"))};
    }
    for (const auto& e : j.at("frames")) m.frames.push_back(entry_from_json(e));
    if (j.contains("heldout")) {
      for (const auto& e : j["heldout"]) m.heldout.push_back(entry_from_json(e));
    }
    if (j.contains("stream")) {
      for (const auto& e : j["stream"]) m.stream.push_back(entry_from_json(e));
    }
  } catch (const json::exception& e) {
    throw Error(ErrorKind::kFormat, path.string() + ": " + e.what());
  } catch (const Error& e) {
    throw Error(ErrorKind::kFormat, path.string() + ": " + e.what());
  }
  return m;
}

void save_dataset_manifest(const DatasetManifest& m) {
  json j{{"format", "latmap-dataset"}, {"version", 1}};
  if (m.bounds) {
    j["bounds"] = {{"min", {m.bounds->min.x(), m.bounds->min.y(), m.bounds->min.z()}},
                   {"max", {m.bounds->max.x(), m.bounds->max.y(), m.bounds->max.z()}}};
  }
  j["frames"] = json::array();
  for (const auto& e : m.frames) j["frames"].push_back(entry_to_json(e));
  if (!m.heldout.empty()) {
    j["heldout"] = json::array();
    for (const auto& e : m.heldout) j["heldout"].push_back(entry_to_json(e));
  }
  if (!m.stream.empty()) {
    j["stream"] = json::array();
    for (const auto& e : m.stream) j["stream"].push_back(entry_to_json(e));
  }
  io::write_text_file(m.root / "manifest.json", j.dump(2) + "\n");
}

CameraFrame load_frame(const DatasetManifest& manifest, const FrameEntry& e) {
  const auto& root = manifest.root;
  CameraFrame f;
  f.id = e.id;
  try {
    f.depth = deserialize_depth(io::read_file(root / e.depth));
    f.embeddings = deserialize_embeddings(io::read_file(root / e.embeddings));
    f.pose = pose_from_text(io::read_text_file(root / e.pose));
    f.intrinsics = intrinsics_from_text(io::read_text_file(root / e.intrinsics));
    if (e.mask) f.dynamic_mask = deserialize_mask(io::read_file(root / *e.mask));
  } catch (const Error& err) {
    throw Error(err.kind(), "frame " + e.id + ": " + err.what());
  }
  return f;
}

FrameEntry write_frame(const std::filesystem::path& dir, const CameraFrame& frame) {
  FrameEntry e;
  e.id = frame.id;
  e.depth = frame.id + ".depth";
  e.embeddings = frame.id + ".feat";
  e.pose = frame.id + ".pose.txt";
  e.intrinsics = frame.id + ".intrinsics.txt";
  io::write_file(dir / e.depth, serialize_depth(frame.depth));
  io::write_file(dir / e.embeddings, serialize_embeddings(frame.embeddings));
  io::write_text_file(dir / e.pose, pose_to_text(frame.pose));
  io::write_text_file(dir / e.intrinsics, intrinsics_to_text(frame.intrinsics));
  if (frame.dynamic_mask) {
    e.mask = frame.id + ".mask";
    io::write_file(dir / *e.mask, serialize_mask(*frame.dynamic_mask));
  }
  return e;
}

SampleBatch load_samples(const DatasetManifest& manifest, const std::vector<FrameEntry>& entries,
                         const Aabb* bounds, SkipCounts* skipped) {
  std::vector<SampleBatch> batches;
  for (const auto& e : entries) {
    BackProjection bp = back_project(load_frame(manifest, e), bounds);
    if (skipped) {
      skipped->invalid_depth += bp.skipped.invalid_depth;
      skipped->masked += bp.skipped.masked;
      skipped->zero_embedding += bp.skipped.zero_embedding;
      skipped->out_of_bounds += bp.skipped.out_of_bounds;
    }
    batches.push_back(std::move(bp.batch));
  }
  return concat(batches);
}

// ---- stream manifest -------------------------------------------------------

StreamManifest load_stream_manifest(const std::filesystem::path& path) {
  const json j = parse_json_file(path);
  StreamManifest s;
  try {
    if (j.at("format").get<std::string>() != "latmap-stream") {
      throw Error(ErrorKind::kFormat, "not a latmap-stream manifest");
    }
    if (j.at("version").get<int>() != 1) throw Error(ErrorKind::kFormat, "unsupported stream version");
    s.dataset = path.parent_path() / j.at("dataset").get<std::string>();
    for (const auto& st : j.at("steps")) {
      StreamStep step;
      if (st.contains("frame") && !st["frame"].is_null()) step.frame_id = st["frame"].get<std::string>();
      step.grasping = st.value("grasping", false);
      s.steps.push_back(std::move(step));
    }
  } catch (const json::exception& e) {
    throw Error(ErrorKind::kFormat, path.string() + ": " + e.what());
  } catch (const Error& e) {
    throw Error(ErrorKind::kFormat, path.string() + ": " + e.what());
  }
  return s;
}

void save_stream_manifest(const StreamManifest& stream, const std::filesystem::path& path) {
  json j{{"format", "latmap-stream"}, {"version", 1}};
  j["dataset"] = std::filesystem::relative(stream.dataset, path.parent_path()).generic_string();
  j["steps"] = json::array();
  for (const auto& s : stream.steps) {
    json st{{"grasping", s.grasping}};
    st["frame"] = s.frame_id ? json(*s.frame_id) : json(nullptr);
    j["steps"].push_back(st);
  }
  io::write_text_file(path, j.dump(1) + "\n");
}

// ---- PCA export ------------------------------------------------------------

Eigen::MatrixXd principal_components(const Eigen::MatrixXd& features, int components, std::uint64_t seed,
                                     int iterations) {
  const Eigen::Index k = features.rows();
  const Eigen::Index n = features.cols();
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(k, components);
  if (n == 0) return out;
  const Eigen::VectorXd mean = features.rowwise().mean();
  const Eigen::MatrixXd centered = features.colwise() - mean;
  Eigen::MatrixXd cov = (centered * centered.transpose()) / static_cast<double>(n);
  const double scale = std::max(cov.diagonal().cwiseAbs().maxCoeff(), 1e-300);
  Rng rng(seed);
  for (int c = 0; c < components; ++c) {
    Eigen::VectorXd v(k);
    for (Eigen::Index i = 0; i < k; ++i) v[i] = rng.normal();
    v.normalize();
    bool vanished = false;
    for (int it = 0; it < iterations; ++it) {
      Eigen::VectorXd next = cov * v;
      const double norm = next.norm();
      if (norm <= 1e-12 * scale) {
        vanished = true;
        break;
      }
      v = next / norm;
    }
    if (vanished) break;
    const double lambda = v.dot(cov * v);
    out.col(c) = v;
    cov -= lambda * v * v.transpose();
  }
  return out;
}

std::vector<ColoredPoint> pca_colored_points(const LatentMap& map, std::uint64_t seed) {
  const DecodedSet set = decode_occupied(map.grid, map.decoder);
  if (set.size() == 0) throw Error(ErrorKind::kEmptyMap, "export: map has no occupied vertices");
  const Eigen::MatrixXd pcs = principal_components(set.features, 3, seed);
  const Eigen::VectorXd mean = set.features.rowwise().mean();
  const Eigen::MatrixXd scores = pcs.transpose() * (set.features.colwise() - mean);  // 3 x n
  const double feature_scale = std::max(1.0, set.features.cwiseAbs().maxCoeff());
  std::vector<ColoredPoint> out(static_cast<std::size_t>(set.size()));
  for (int ch = 0; ch < 3; ++ch) {
    const double lo = scores.row(ch).minCoeff();
    const double hi = scores.row(ch).maxCoeff();
    const bool flat = (hi - lo) <= 1e-9 * feature_scale;
    for (Eigen::Index i = 0; i < set.size(); ++i) {
      auto& p = out[static_cast<std::size_t>(i)];
      p.position = set.positions.col(i);
      const double t = flat ? 0.5 : (scores(ch, i) - lo) / (hi - lo);
      p.rgb[static_cast<std::size_t>(ch)] = static_cast<std::uint8_t>(std::lround(std::clamp(t, 0.0, 1.0) * 255.0));
    }
  }
  return out;
}

std::string to_ply(const std::vector<ColoredPoint>& points) {
  std::string out = "ply\nformat ascii 1.0\nelement vertex " + std::to_string(points.size()) +
                    "\nproperty float x\nproperty float y\nproperty float z\n"
                    "property uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n";
  char buf[128];
  for (const auto& p : points) {
    std::snprintf(buf, sizeof(buf), "%.7g %.7g %.7g %u %u %u\n", p.position.x(), p.position.y(), p.position.z(),
                  p.rgb[0], p.rgb[1], p.rgb[2]);
    out += buf;
  }
  return out;
}

std::size_t export_pca_ply(const LatentMap& map, const std::filesystem::path& path, std::uint64_t seed) {
  const auto points = pca_colored_points(map, seed);
  io::write_text_file(path, to_ply(points));
  return points.size();
}

}  // namespace latmap
