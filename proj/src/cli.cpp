#include "latmap/cli.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>

#include "CLI11.hpp"
#include "latmap/binary_io.hpp"
#include "latmap/config.hpp"
#include "latmap/error.hpp"
#include "latmap/gradcheck.hpp"
#include "latmap/parallel.hpp"
#include "latmap/pipeline.hpp"
#include "latmap/store.hpp"
#include "latmap/synth.hpp"
#include "latmap/token.hpp"
#include "latmap/trainer.hpp"

namespace latmap::cli {

namespace {

namespace fs = std::filesystem;

struct Options {
  std::optional<std::uint64_t> seed;
  std::string config;
  bool verbose = false;
  int threads = 0;

  // build
  std::string build_dataset, build_out, build_decoder, build_loss_csv;
  int build_steps = -1;
  bool build_freeze = false;

  // pretrain
  std::vector<std::string> pretrain_scenes;
  std::string pretrain_out, pretrain_maps_dir, pretrain_loss_csv;
  int pretrain_steps = -1;

  // replay
  std::string replay_map, replay_stream, replay_out, replay_report;

  // query
  std::string query_map, query_points, query_reference, query_out;
  double query_min_cosine = -2.0;

  // token
  std::string token_map, token_weights, token_save_weights, token_out, token_format = "binary";
  bool token_allow_empty = false;

  // export
  std::string export_map, export_out;

  // synth
  std::string synth_spec, synth_out;

  // gradcheck
  int gradcheck_cases = 100;
};

class Logger {
 public:
  Logger(std::ostream& err, bool verbose) : err_(err), verbose_(verbose) {}
  template <typename... A>
  void info(const A&... parts) const {
    if (!verbose_) return;
    err_ << "[latmap] ";
    (err_ << ... << parts);
    err_ << '\n';
  }

 private:
  std::ostream& err_;
  bool verbose_;
};

std::unique_ptr<CLI::App> make_app(Options& o) {
  auto app = std::make_unique<CLI::App>("Incremental 3D latent feature maps from posed depth + patch embeddings.",
                                        "latmap");
  app->require_subcommand(1);
  app->option_defaults()->always_capture_default();
  app->add_option("--seed", o.seed, "Seed for sampling, optimization and exports (overrides config seeds)");
  app->add_option("--config", o.config, "Pipeline config (JSON); missing keys keep their defaults")
      ->check(CLI::ExistingFile);
  app->add_flag("--verbose,-v", o.verbose, "Progress logging on stderr");
  app->add_option("--threads", o.threads, "Worker threads (0: LMAP_THREADS or hardware concurrency)")
      ->check(CLI::NonNegativeNumber);

  auto* build = app->add_subcommand("build", "Fit a latent map to a dataset's training frames");
  build->add_option("--dataset", o.build_dataset, "Dataset directory containing manifest.json")->required();
  build->add_option("--out", o.build_out, "Output map file")->required();
  build->add_option("--decoder", o.build_decoder, "Start from this decoder file instead of a fresh one");
  build->add_flag("--freeze-decoder", o.build_freeze, "Optimize grid features only");
  build->add_option("--steps", o.build_steps, "Optimizer steps (overrides train.steps)");
  build->add_option("--loss-csv", o.build_loss_csv, "Write per-step losses as CSV");

  auto* pre = app->add_subcommand("pretrain", "Jointly fit a shared decoder over several scenes");
  pre->add_option("--scene", o.pretrain_scenes, "Dataset directory (repeatable)")->required();
  pre->add_option("--out", o.pretrain_out, "Output decoder file")->required();
  pre->add_option("--maps-dir", o.pretrain_maps_dir, "Also write each scene's map as <dir>/scene<i>.lmap");
  pre->add_option("--steps", o.pretrain_steps, "Optimizer steps (overrides train.steps)");
  pre->add_option("--loss-csv", o.pretrain_loss_csv, "Write per-step losses as CSV");

  auto* replay = app->add_subcommand("replay", "Update a map online from a recorded stream");
  replay->add_option("--map", o.replay_map, "Input map file")->required();
  replay->add_option("--stream", o.replay_stream, "Stream manifest (JSON)")->required();
  replay->add_option("--out", o.replay_out, "Output map file")->required();
  replay->add_option("--report", o.replay_report, "Write the per-step report as CSV");

  auto* query = app->add_subcommand("query", "Decode features at 3D points");
  query->add_option("--map", o.query_map, "Map file")->required();
  query->add_option("--points", o.query_points, "Text file, one 'x y z' per line")->required();
  query->add_option("--reference", o.query_reference, "Reference features, one row per point, for cosine scores");
  query->add_option("--out", o.query_out, "Write decoded rows here instead of stdout");
  query->add_option("--min-cosine", o.query_min_cosine,
                    "With --reference: exit 4 when the mean cosine is below this value");

  auto* token = app->add_subcommand("token", "Aggregate a map into a fixed-size token");
  token->add_option("--map", o.token_map, "Map file")->required();
  token->add_option("--out", o.token_out, "Output token file")->required();
  token->add_option("--weights", o.token_weights, "Aggregator weights file (default: seeded initialization)");
  token->add_option("--save-weights", o.token_save_weights, "Write the aggregator weights used");
  token->add_option("--format", o.token_format, "Output format")->check(CLI::IsMember({"binary", "text"}));
  token->add_flag("--allow-empty", o.token_allow_empty, "Emit a zero token for a map without occupied vertices");

  auto* exp = app->add_subcommand("export", "Write occupied vertices as a PCA-colored PLY point cloud");
  exp->add_option("--map", o.export_map, "Map file")->required();
  exp->add_option("--out", o.export_out, "Output .ply file")->required();

  auto* synth = app->add_subcommand("synth", "Generate a synthetic dataset");
  synth->add_option("--spec", o.synth_spec, "Scene spec (JSON); missing keys keep their defaults");
  synth->add_option("--out", o.synth_out, "Output directory")->required();

  auto* grad = app->add_subcommand("gradcheck", "Compare analytic gradients to finite differences");
  grad->add_option("--cases", o.gradcheck_cases, "Random cases")->check(CLI::PositiveNumber);
  return app;
}

PipelineConfig pipeline_config(const Options& o) {
  PipelineConfig cfg = o.config.empty() ? parse_pipeline_config(nlohmann::json::object())
                                        : load_pipeline_config(o.config);
  if (o.seed) apply_seed(cfg, *o.seed);
  return cfg;
}

void write_loss_csv(const std::string& path, const std::vector<double>& losses) {
  std::string s = "step,loss\n";
  char buf[64];
  for (std::size_t i = 0; i < losses.size(); ++i) {
    std::snprintf(buf, sizeof(buf), "%zu,%.9g\n", i + 1, losses[i]);
    s += buf;
  }
  io::write_text_file(path, s);
}

StepCallback progress(const Logger& log, int total) {
  const int every = std::max(1, total / 20);
  return [&log, every, total](int step, double loss) {
    if (step % every == 0 || step == total) log.info("step ", step, "/", total, " loss ", loss);
  };
}

std::vector<Vec3> read_points(const std::string& path) {
  std::istringstream in(io::read_text_file(path));
  std::vector<Vec3> pts;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos || line[line.find_first_not_of(" \t")] == '#') continue;
    std::istringstream ls(line);
    Vec3 p;
    std::string extra;
    if (!(ls >> p.x() >> p.y() >> p.z()) || (ls >> extra)) {
      throw Error(ErrorKind::kFormat, path + ":" + std::to_string(lineno) + ": expected 'x y z'");
    }
    pts.push_back(p);
  }
  return pts;
}

Eigen::MatrixXd read_rows(const std::string& path, int cols) {
  std::istringstream in(io::read_text_file(path));
  std::vector<Eigen::VectorXd> rows;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream ls(line);
    std::vector<double> v;
    double d;
    while (ls >> d) v.push_back(d);
    if (!ls.eof() || static_cast<int>(v.size()) != cols) {
      throw Error(ErrorKind::kFormat,
                  path + ":" + std::to_string(lineno) + ": expected " + std::to_string(cols) + " numbers");
    }
    rows.emplace_back(Eigen::Map<Eigen::VectorXd>(v.data(), cols));
  }
  Eigen::MatrixXd m(cols, static_cast<Eigen::Index>(rows.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) m.col(static_cast<Eigen::Index>(i)) = rows[i];
  return m;
}

int cmd_build(const Options& o, std::ostream& out, const Logger& log) {
  PipelineConfig cfg = pipeline_config(o);
  if (o.build_steps >= 0) cfg.train.steps = o.build_steps;
  if (o.build_freeze) cfg.train.freeze_decoder = true;
  const auto manifest = load_dataset_manifest(o.build_dataset);
  std::optional<Mlp> decoder;
  if (!o.build_decoder.empty()) decoder = load_decoder(o.build_decoder);
  const BuildResult r = build_map(manifest, cfg, decoder ? &*decoder : nullptr, progress(log, cfg.train.steps));
  log.info("samples ", r.num_samples, " from ", manifest.frames.size(), " frames (skipped: depth ",
           r.skipped.invalid_depth, ", masked ", r.skipped.masked, ", zero ", r.skipped.zero_embedding,
           ", outside ", r.skipped.out_of_bounds, ")");
  save_map(r.map, o.build_out);
  if (!o.build_loss_csv.empty()) write_loss_csv(o.build_loss_csv, r.losses);
  out << "steps=" << r.losses.size() << " samples=" << r.num_samples
      << " final_loss=" << (r.losses.empty() ? std::nan("") : r.losses.back()) << " train_cosine=" << r.train_cosine
      << " heldout_cosine=" << r.heldout_cosine.value_or(std::nan("")) << " occupied=" << r.map.grid.occupancy().size()
      << '\n';
  return kExitOk;
}

int cmd_pretrain(const Options& o, std::ostream& out, const Logger& log) {
  PipelineConfig cfg = pipeline_config(o);
  if (o.pretrain_steps >= 0) cfg.train.steps = o.pretrain_steps;
  cfg.train.freeze_decoder = false;
  cfg.train.validate();
  std::vector<SampleBatch> scenes;
  std::vector<GridConfig> grids;
  for (const auto& dir : o.pretrain_scenes) {
    const auto manifest = load_dataset_manifest(dir);
    GridConfig g = cfg.grid;
    g.bounds = resolve_bounds(cfg, manifest);
    scenes.push_back(load_samples(manifest, manifest.frames, &g.bounds));
    if (scenes.back().size() == 0) throw Error(ErrorKind::kInvalidFrame, dir + ": no valid samples");
    if (scenes.back().dim() != scenes.front().dim()) {
      throw Error(ErrorKind::kInvalidArgument, dir + ": embedding dimension differs from the first scene");
    }
    log.info(dir, ": ", scenes.back().size(), " samples");
    grids.push_back(g);
  }
  auto decoder = init_decoder(cfg.decoder.seed, cfg.decoder.hidden, cfg.grid.encoded_dim(),
                              static_cast<int>(scenes.front().dim()));
  auto result = pretrain_decoder(scenes, grids, std::move(decoder), cfg.train, progress(log, cfg.train.steps));
  save_decoder(result.decoder, o.pretrain_out);
  if (!o.pretrain_maps_dir.empty()) {
    fs::create_directories(o.pretrain_maps_dir);
    for (std::size_t i = 0; i < result.grids.size(); ++i) {
      save_map({result.grids[i], result.decoder, result.losses.size()},
               fs::path(o.pretrain_maps_dir) / ("scene" + std::to_string(i) + ".lmap"));
    }
  }
  if (!o.pretrain_loss_csv.empty()) write_loss_csv(o.pretrain_loss_csv, result.losses);
  out << "steps=" << result.losses.size() << " scenes=" << scenes.size();
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    out << " cosine" << i << "=" << mean_cosine(result.grids[i], result.decoder, scenes[i]);
  }
  out << '\n';
  return kExitOk;
}

int cmd_replay(const Options& o, std::ostream& out, const Logger& log) {
  PipelineConfig cfg = pipeline_config(o);
  const auto stream = load_stream_manifest(o.replay_stream);
  const auto t0 = std::chrono::steady_clock::now();
  const ReplayResult r = replay_map(load_map(o.replay_map), stream, cfg.online);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  for (const auto& rep : r.reports) {
    if (rep.updated) {
      log.info("tau ", rep.tau, ": ", rep.optimization_steps(), " steps, loss ", rep.losses.front(), " -> ",
               rep.losses.back());
    }
  }
  save_map(r.map, o.replay_out);
  if (!o.replay_report.empty()) io::write_text_file(o.replay_report, reports_to_csv(r.reports));
  out << "steps=" << r.reports.size() << " updates=" << r.updates << " optimization_steps=" << r.optimization_steps
      << " revision=" << r.map.revision << " seconds=" << secs << '\n';
  return kExitOk;
}

int cmd_query(const Options& o, std::ostream& out, std::ostream& err) {
  const LatentMap map = load_map(o.query_map);
  const auto pts = read_points(o.query_points);
  const int k = map.decoder.out_dim();
  std::optional<Eigen::MatrixXd> ref;
  if (!o.query_reference.empty()) {
    ref = read_rows(o.query_reference, k);
    if (ref->cols() != static_cast<Eigen::Index>(pts.size())) {
      throw Error(ErrorKind::kFormat, "reference has " + std::to_string(ref->cols()) + " rows for " +
                                          std::to_string(pts.size()) + " points");
    }
  }
  std::string body;
  char buf[64];
  double sum = 0.0;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    const Eigen::VectorXd f = decode_point(map.grid, map.decoder, pts[i]);
    for (int j = 0; j < k; ++j) {
      std::snprintf(buf, sizeof(buf), j + 1 < k ? "%.9g " : "%.9g", f[j]);
      body += buf;
    }
    if (ref) {
      const double c = 1.0 - cosine_loss(f, ref->col(static_cast<Eigen::Index>(i))).loss;
      sum += c;
      std::snprintf(buf, sizeof(buf), " %.9g", c);
      body += buf;
    }
    body += '\n';
  }
  std::ostream* summary = &err;
  if (o.query_out.empty()) {
    out << body;
  } else {
    io::write_text_file(o.query_out, body);
    summary = &out;
  }
  if (ref) {
    const double mean = pts.empty() ? std::nan("") : sum / static_cast<double>(pts.size());
    *summary << "points=" << pts.size() << " mean_cosine=" << mean << '\n';
    if (!(mean >= o.query_min_cosine)) {
      err << "error: kind=check_failed message=mean cosine " << mean << " below " << o.query_min_cosine << '\n';
      return kExitCheckFailed;
    }
  }
  return kExitOk;
}

int cmd_token(const Options& o, std::ostream& out, const Logger& log) {
  PipelineConfig cfg = pipeline_config(o);
  const LatentMap map = load_map(o.token_map);
  AggregatorWeights w = o.token_weights.empty()
                            ? AggregatorWeights::init(cfg.aggregator, map.decoder.out_dim())
                            : load_aggregator(o.token_weights);
  if (!o.token_save_weights.empty()) save_aggregator(w, o.token_save_weights);
  if (!map.grid.occupancy().empty()) log.info("aggregating ", map.grid.occupancy().size(), " vertices");
  const MapToken token = map_token(map, w, o.token_allow_empty);
  if (o.token_format == "text") {
    io::write_text_file(o.token_out, token_to_text(token));
  } else {
    io::write_file(o.token_out, serialize_token(token));
  }
  out << "token_dim=" << token.values.size() << " vertices=" << token.vertex_count << '\n';
  return kExitOk;
}

int cmd_export(const Options& o, std::ostream& out) {
  const LatentMap map = load_map(o.export_map);
  const std::size_t n = export_pca_ply(map, o.export_out, o.seed.value_or(0));
  out << "points=" << n << '\n';
  return kExitOk;
}

int cmd_synth(const Options& o, std::ostream& out) {
  SynthSpec spec = o.synth_spec.empty() ? parse_synth_spec(nlohmann::json::object()) : load_synth_spec(o.synth_spec);
  if (o.seed) spec.seed = *o.seed;
  const SynthScene scene(spec);
  const SynthDataset data = synth_dataset(scene);
  write_synth_dataset(scene, data, o.synth_out);
  out << "train=" << data.train.size() << " heldout=" << data.heldout.size()
      << " stream=" << data.stream.size() << '\n';
  return kExitOk;
}

int cmd_gradcheck(const Options& o, std::ostream& out, std::ostream& err) {
  GradcheckConfig cfg;
  cfg.cases = o.gradcheck_cases;
  const auto r = run_gradcheck(o.seed.value_or(0), cfg);
  out << "cases=" << r.cases << " grid_params=" << r.grid_params_checked
      << " decoder_params=" << r.decoder_params_checked << " failures=" << r.failures
      << " max_rel_error=" << r.max_rel_error << '\n';
  if (!r.ok()) {
    err << "error: kind=check_failed message=" << r.first_failure << '\n';
    return kExitCheckFailed;
  }
  return kExitOk;
}

std::string one_line(std::string s) {
  for (char& c : s) {
    if (c == '\n' || c == '\r') c = ' ';
  }
  return s;
}

int exit_code(ErrorKind kind) {
  return kind == ErrorKind::kInvalidArgument ? kExitUsage : kExitBadInput;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  Options o;
  auto app = make_app(o);
  try {
    app->parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app->help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << full_help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: kind=usage message=" << one_line(e.what()) << '\n';
    return kExitUsage;
  }
  if (o.threads > 0) set_max_threads(o.threads);
  const Logger log(err, o.verbose);
  const std::string sub = app->get_subcommands().front()->get_name();
  try {
    if (sub == "build") return cmd_build(o, out, log);
    if (sub == "pretrain") return cmd_pretrain(o, out, log);
    if (sub == "replay") return cmd_replay(o, out, log);
    if (sub == "query") return cmd_query(o, out, err);
    if (sub == "token") return cmd_token(o, out, log);
    if (sub == "export") return cmd_export(o, out);
    if (sub == "synth") return cmd_synth(o, out);
    if (sub == "gradcheck") return cmd_gradcheck(o, out, err);
  } catch (const Error& e) {
    err << "error: kind=" << to_string(e.kind()) << " message=" << one_line(e.what()) << '\n';
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    err << "error: kind=internal message=" << one_line(e.what()) << '\n';
    return kExitBadInput;
  }
  err << "error: kind=usage message=unknown subcommand " << sub << '\n';
  return kExitUsage;
}

std::string full_help() {
  Options o;
  auto app = make_app(o);
  std::string s = app->help();
  for (const auto* sub : app->get_subcommands({})) {
    s += "\n";
    s += sub->help();
  }
  return s;
}

}  // namespace latmap::cli
