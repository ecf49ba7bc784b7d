#include "latmap/config.hpp"

#include <set>

#include "latmap/binary_io.hpp"
#include "latmap/error.hpp"

namespace latmap {

using json = nlohmann::json;

namespace {

void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& section) {
  if (!j.is_object()) throw Error(ErrorKind::kFormat, "config: section \"" + section + "\" must be an object");
  for (const auto& [key, _] : j.items()) {
    if (!allowed.contains(key)) throw Error(ErrorKind::kFormat, "config: unknown key \"" + section + "." + key + "\"");
  }
}

template <typename T>
void read(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

Vec3 vec3(const json& j) {
  if (!j.is_array() || j.size() != 3) throw Error(ErrorKind::kFormat, "config: expected a 3-element array");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

json vec3_json(const Vec3& v) { return json::array({v.x(), v.y(), v.z()}); }

Aabb aabb(const json& j) {
  check_keys(j, {"min", "max"}, "bounds");
  return {vec3(j.at("min")), vec3(j.at("max"))};
}

json aabb_json(const Aabb& b) { return {{"min", vec3_json(b.min)}, {"max", vec3_json(b.max)}}; }

template <typename F>
auto guarded(F&& f) {
  try {
    return f();
  } catch (const json::exception& e) {
    throw Error(ErrorKind::kFormat, std::string("config: ") + e.what());
  }
}

}  // namespace

PipelineConfig parse_pipeline_config(const json& j) {
  return guarded([&] {
    PipelineConfig cfg;
    check_keys(j, {"grid", "decoder", "train", "online", "aggregator"}, "<root>");
    if (j.contains("grid")) {
      const auto& g = j["grid"];
      check_keys(g, {"bounds", "cell_sizes", "feature_dim", "table_size", "seed"}, "grid");
      if (g.contains("bounds")) cfg.bounds = aabb(g["bounds"]);
      read(g, "cell_sizes", cfg.grid.cell_sizes);
      read(g, "feature_dim", cfg.grid.feature_dim);
      read(g, "table_size", cfg.grid.table_size);
      read(g, "seed", cfg.grid.seed);
    }
    if (j.contains("decoder")) {
      const auto& d = j["decoder"];
      check_keys(d, {"hidden", "seed"}, "decoder");
      read(d, "hidden", cfg.decoder.hidden);
      read(d, "seed", cfg.decoder.seed);
    }
    if (j.contains("train")) {
      const auto& t = j["train"];
      check_keys(t, {"batch_size", "lr_grid", "lr_decoder", "beta1", "beta2", "eps", "steps", "epochs",
                     "freeze_decoder", "seed", "loss"},
                 "train");
      auto& c = cfg.train;
      read(t, "batch_size", c.batch_size);
      read(t, "lr_grid", c.lr_grid);
      read(t, "lr_decoder", c.lr_decoder);
      read(t, "beta1", c.adam.beta1);
      read(t, "beta2", c.adam.beta2);
      read(t, "eps", c.adam.eps);
      read(t, "steps", c.steps);
      read(t, "epochs", c.epochs);
      read(t, "freeze_decoder", c.freeze_decoder);
      read(t, "seed", c.seed);
      if (t.contains("loss")) {
        const auto s = t["loss"].get<std::string>();
        if (s == "cosine") {
          c.loss = LossKind::kCosine;
        } else if (s == "l2") {
          c.loss = LossKind::kL2;
        } else {
          throw Error(ErrorKind::kFormat, "config: train.loss must be \"cosine\" or \"l2\"");
        }
      }
      c.validate();
    }
    // eta defaults to the offline grid learning rate.
    cfg.online.eta = cfg.train.lr_grid;
    cfg.online.batch_size = cfg.train.batch_size;
    if (j.contains("online")) {
      const auto& o = j["online"];
      check_keys(o, {"t_update", "k_update", "eta", "lr_decoder", "freeze_decoder", "batch_size", "seed"}, "online");
      auto& c = cfg.online;
      read(o, "t_update", c.t_update);
      read(o, "k_update", c.k_update);
      read(o, "eta", c.eta);
      read(o, "lr_decoder", c.lr_decoder);
      read(o, "freeze_decoder", c.freeze_decoder);
      read(o, "batch_size", c.batch_size);
      read(o, "seed", c.seed);
      c.validate();
    }
    cfg.online.adam = cfg.train.adam;
    if (j.contains("aggregator")) {
      const auto& a = j["aggregator"];
      check_keys(a, {"hidden", "token_dim", "num_frequencies", "seed"}, "aggregator");
      read(a, "hidden", cfg.aggregator.hidden);
      read(a, "token_dim", cfg.aggregator.token_dim);
      read(a, "num_frequencies", cfg.aggregator.num_frequencies);
      read(a, "seed", cfg.aggregator.seed);
    }
    return cfg;
  });
}

PipelineConfig load_pipeline_config(const std::filesystem::path& path) {
  const std::string text = io::read_text_file(path);
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw Error(ErrorKind::kFormat, path.string() + ": " + e.what());
  }
  return parse_pipeline_config(j);
}

json to_json(const PipelineConfig& cfg) {
  json g{{"cell_sizes", cfg.grid.cell_sizes},
         {"feature_dim", cfg.grid.feature_dim},
         {"table_size", cfg.grid.table_size},
         {"seed", cfg.grid.seed}};
  if (cfg.bounds) g["bounds"] = aabb_json(*cfg.bounds);
  const auto& t = cfg.train;
  const auto& o = cfg.online;
  return {{"grid", g},
          {"decoder", {{"hidden", cfg.decoder.hidden}, {"seed", cfg.decoder.seed}}},
          {"train",
           {{"batch_size", t.batch_size},
            {"lr_grid", t.lr_grid},
            {"lr_decoder", t.lr_decoder},
            {"beta1", t.adam.beta1},
            {"beta2", t.adam.beta2},
            {"eps", t.adam.eps},
            {"steps", t.steps},
            {"epochs", t.epochs},
            {"freeze_decoder", t.freeze_decoder},
            {"seed", t.seed},
            {"loss", t.loss == LossKind::kCosine ? "cosine" : "l2"}}},
          {"online",
           {{"t_update", o.t_update},
            {"k_update", o.k_update},
            {"eta", o.eta},
            {"lr_decoder", o.lr_decoder},
            {"freeze_decoder", o.freeze_decoder},
            {"batch_size", o.batch_size},
            {"seed", o.seed}}},
          {"aggregator",
           {{"hidden", cfg.aggregator.hidden},
            {"token_dim", cfg.aggregator.token_dim},
            {"num_frequencies", cfg.aggregator.num_frequencies},
            {"seed", cfg.aggregator.seed}}}};
}

SynthSpec parse_synth_spec(const json& j) {
  return guarded([&] {
    SynthSpec s;
    check_keys(j,
               {"seed", "embedding_dim", "num_regions", "vocabulary_size", "vocabulary_seed", "classes", "noise",
                "n_frames", "n_heldout", "image_rows", "image_cols", "patch_stride", "focal", "orbit_radius",
                "orbit_height", "look_at", "bounds", "slots_x", "slots_y", "dynamic_box", "relocation", "stream"},
               "<root>");
    read(j, "seed", s.seed);
    read(j, "embedding_dim", s.embedding_dim);
    read(j, "num_regions", s.num_regions);
    read(j, "vocabulary_size", s.vocabulary_size);
    read(j, "vocabulary_seed", s.vocabulary_seed);
    read(j, "classes", s.classes);
    read(j, "noise", s.noise);
    read(j, "n_frames", s.n_frames);
    read(j, "n_heldout", s.n_heldout);
    read(j, "image_rows", s.image_rows);
    read(j, "image_cols", s.image_cols);
    read(j, "patch_stride", s.patch_stride);
    read(j, "focal", s.focal);
    read(j, "orbit_radius", s.orbit_radius);
    read(j, "orbit_height", s.orbit_height);
    if (j.contains("look_at")) s.look_at = vec3(j["look_at"]);
    if (j.contains("bounds")) s.bounds = aabb(j["bounds"]);
    read(j, "slots_x", s.slots_x);
    read(j, "slots_y", s.slots_y);
    if (j.contains("dynamic_box")) s.dynamic_box = aabb(j["dynamic_box"]);
    if (j.contains("relocation")) {
      const auto& r = j["relocation"];
      check_keys(r, {"region", "to_slot"}, "relocation");
      RelocationSpec rel;
      read(r, "region", rel.region);
      read(r, "to_slot", rel.to_slot);
      s.relocation = rel;
    }
    if (j.contains("stream")) {
      const auto& st = j["stream"];
      check_keys(st, {"length", "move_at", "grasp", "orbit_period"}, "stream");
      StreamSpec ss;
      read(st, "length", ss.length);
      read(st, "move_at", ss.move_at);
      read(st, "orbit_period", ss.orbit_period);
      if (st.contains("grasp")) {
        for (const auto& g : st["grasp"]) {
          if (!g.is_array() || g.size() != 2) throw Error(ErrorKind::kFormat, "config: stream.grasp entries are [lo, hi]");
          ss.grasp.emplace_back(g[0].get<int>(), g[1].get<int>());
        }
      }
      s.stream = ss;
    }
    s.validate();
    return s;
  });
}

SynthSpec load_synth_spec(const std::filesystem::path& path) {
  const std::string text = io::read_text_file(path);
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw Error(ErrorKind::kFormat, path.string() + ": " + e.what());
  }
  return parse_synth_spec(j);
}

json to_json(const SynthSpec& s) {
  json j{{"seed", s.seed},
         {"embedding_dim", s.embedding_dim},
         {"num_regions", s.num_regions},
         {"vocabulary_size", s.vocabulary_size},
         {"vocabulary_seed", s.vocabulary_seed},
         {"noise", s.noise},
         {"n_frames", s.n_frames},
         {"n_heldout", s.n_heldout},
         {"image_rows", s.image_rows},
         {"image_cols", s.image_cols},
         {"patch_stride", s.patch_stride},
         {"focal", s.focal},
         {"orbit_radius", s.orbit_radius},
         {"orbit_height", s.orbit_height},
         {"look_at", vec3_json(s.look_at)},
         {"bounds", aabb_json(s.bounds)},
         {"slots_x", s.slots_x},
         {"slots_y", s.slots_y}};
  if (!s.classes.empty()) j["classes"] = s.classes;
  if (s.dynamic_box) j["dynamic_box"] = aabb_json(*s.dynamic_box);
  if (s.relocation) j["relocation"] = {{"region", s.relocation->region}, {"to_slot", s.relocation->to_slot}};
  if (s.stream) {
    json g = json::array();
    for (const auto& [lo, hi] : s.stream->grasp) g.push_back({lo, hi});
    j["stream"] = {{"length", s.stream->length},
                   {"move_at", s.stream->move_at},
                   {"orbit_period", s.stream->orbit_period},
                   {"grasp", g}};
  }
  return j;
}

}  // namespace latmap
