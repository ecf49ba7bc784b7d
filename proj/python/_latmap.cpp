// Python bindings for the latent map library.

#include <pybind11/eigen.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

#include "latmap/cli.hpp"
#include "latmap/config.hpp"
#include "latmap/error.hpp"
#include "latmap/gradcheck.hpp"
#include "latmap/parallel.hpp"
#include "latmap/pipeline.hpp"
#include "latmap/store.hpp"
#include "latmap/synth.hpp"
#include "latmap/token.hpp"
#include "latmap/trainer.hpp"

namespace py = pybind11;
using namespace latmap;

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Points = Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor>;

PipelineConfig config_from(const std::string& json_text, std::optional<std::uint64_t> seed) {
  PipelineConfig cfg;
  try {
    cfg = parse_pipeline_config(nlohmann::json::parse(json_text.empty() ? "{}" : json_text));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::kFormat, std::string("config: ") + e.what());
  }
  if (seed) apply_seed(cfg, *seed);
  return cfg;
}

py::tuple bounds_tuple(const Aabb& b) {
  return py::make_tuple(Eigen::Vector3d(b.min), Eigen::Vector3d(b.max));
}

py::bytes to_pybytes(const std::vector<std::uint8_t>& v) {
  return py::bytes(reinterpret_cast<const char*>(v.data()), v.size());
}

RowMatrix query(const LatentMap& map, const Eigen::Ref<const Points>& pts) {
  RowMatrix out(pts.rows(), map.decoder.out_dim());
  Eigen::Matrix3Xd cols = pts.transpose();
  Eigen::MatrixXd encoded;
  {
    py::gil_scoped_release release;
    map.grid.encode_batch(cols, encoded);
    out = map.decoder.forward_batch(encoded).transpose();
  }
  return out;
}

py::dict report_dict(const StepReport& r) {
  py::dict d;
  d["tau"] = r.tau;
  d["updated"] = r.updated;
  d["skip"] = to_string(r.skip);
  d["num_samples"] = r.num_samples;
  d["losses"] = r.losses;
  return d;
}

}  // namespace

PYBIND11_MODULE(_latmap, m) {
  m.doc() = "Incremental 3D latent feature maps";

  static py::exception<Error> error(m, "LatmapError", PyExc_RuntimeError);
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      py::object inst = py::handle(error.ptr())(std::string(to_string(e.kind())) + ": " + e.what());
      inst.attr("kind") = to_string(e.kind());
      PyErr_SetObject(error.ptr(), inst.ptr());
    }
  });

  py::class_<LatentMap>(m, "Map", "Latent grid plus the decoder it was fit with.")
      .def_static("load", &load_map, py::arg("path"))
      .def_static(
          "from_bytes",
          [](py::bytes b) {
            const std::string s = b;
            return deserialize_map(std::span(reinterpret_cast<const std::uint8_t*>(s.data()), s.size()));
          },
          py::arg("data"))
      .def("save", [](const LatentMap& self, const std::filesystem::path& p) { save_map(self, p); }, py::arg("path"))
      .def("to_bytes", [](const LatentMap& self) { return to_pybytes(serialize_map(self)); })
      .def_readonly("revision", &LatentMap::revision)
      .def_property_readonly("feature_dim", [](const LatentMap& self) { return self.decoder.out_dim(); })
      .def_property_readonly("encoded_dim", [](const LatentMap& self) { return self.grid.encoded_dim(); })
      .def_property_readonly("cell_sizes", [](const LatentMap& self) { return self.grid.config().cell_sizes; })
      .def_property_readonly("bounds", [](const LatentMap& self) { return bounds_tuple(self.grid.config().bounds); })
      .def_property_readonly("num_occupied",
                             [](const LatentMap& self) { return self.grid.occupancy().size(); })
      .def("query", &query, py::arg("points"), "Decoded features (n, k) at points (n, 3).")
      .def(
          "occupied_vertices",
          [](const LatentMap& self) {
            const auto verts = self.grid.occupied_vertices();
            Points out(static_cast<Eigen::Index>(verts.size()), 3);
            for (std::size_t i = 0; i < verts.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = verts[i].position;
            return out;
          },
          "Positions (n, 3) of occupied finest-level vertices, sorted by grid coordinate.")
      .def(
          "token",
          [](const LatentMap& self, std::uint64_t seed, const std::optional<std::filesystem::path>& weights,
             bool allow_empty) {
            AggregatorConfig cfg;
            cfg.seed = seed;
            const AggregatorWeights w =
                weights ? load_aggregator(*weights) : AggregatorWeights::init(cfg, self.decoder.out_dim());
            py::gil_scoped_release release;
            return Eigen::VectorXd(map_token(self, w, allow_empty).values);
          },
          py::arg("seed") = 0, py::arg("weights") = py::none(), py::arg("allow_empty") = false,
          "Max-pooled map token from seeded or loaded aggregator weights.")
      .def(
          "export_ply",
          [](const LatentMap& self, const std::filesystem::path& p, std::uint64_t seed) {
            return export_pca_ply(self, p, seed);
          },
          py::arg("path"), py::arg("seed") = 0);

  m.def(
      "synth",
      [](const std::filesystem::path& out, const std::string& spec_json, std::optional<std::uint64_t> seed) {
        SynthSpec spec;
        try {
          spec = parse_synth_spec(nlohmann::json::parse(spec_json.empty() ? "{}" : spec_json));
        } catch (const nlohmann::json::exception& e) {
          throw Error(ErrorKind::kFormat, std::string("synth spec: ") + e.what());
        }
        if (seed) spec.seed = *seed;
        py::gil_scoped_release release;
        const SynthScene scene(spec);
        const SynthDataset data = synth_dataset(scene);
        write_synth_dataset(scene, data, out);
        return std::make_tuple(data.train.size(), data.heldout.size(), data.stream.size());
      },
      py::arg("out_dir"), py::arg("spec_json") = "{}", py::arg("seed") = py::none(),
      "Writes a synthetic dataset; returns (train, heldout, stream) frame counts.");

  m.def(
      "build",
      [](const std::filesystem::path& dataset, const std::string& config_json, std::optional<int> steps,
         std::optional<std::uint64_t> seed, const std::optional<std::filesystem::path>& decoder) {
        PipelineConfig cfg = config_from(config_json, seed);
        if (steps) cfg.train.steps = *steps;
        std::optional<Mlp> dec;
        if (decoder) {
          dec = load_decoder(*decoder);
          cfg.train.freeze_decoder = true;
        }
        BuildResult r;
        {
          py::gil_scoped_release release;
          r = build_map(load_dataset_manifest(dataset), cfg, dec ? &*dec : nullptr);
        }
        py::dict info;
        info["losses"] = r.losses;
        info["samples"] = r.num_samples;
        info["train_cosine"] = r.train_cosine;
        info["heldout_cosine"] = r.heldout_cosine ? py::cast(*r.heldout_cosine) : py::none();
        return py::make_tuple(std::move(r.map), info);
      },
      py::arg("dataset"), py::arg("config_json") = "{}", py::arg("steps") = py::none(), py::arg("seed") = py::none(),
      py::arg("decoder") = py::none(),
      "Fits a map to a dataset directory; a given decoder file is kept frozen. Returns (Map, info).");

  m.def(
      "replay",
      [](const LatentMap& map, const std::filesystem::path& stream_path, const std::string& config_json,
         std::optional<std::uint64_t> seed) {
        const PipelineConfig cfg = config_from(config_json, seed);
        const StreamManifest stream = load_stream_manifest(stream_path);
        ReplayResult r;
        {
          py::gil_scoped_release release;
          r = replay_map(map, stream, cfg.online);
        }
        py::list reports;
        for (const auto& rep : r.reports) reports.append(report_dict(rep));
        return py::make_tuple(std::move(r.map), reports);
      },
      py::arg("map"), py::arg("stream"), py::arg("config_json") = "{}", py::arg("seed") = py::none(),
      "Online updates over a stream manifest. Returns (updated Map, per-step reports).");

  m.def(
      "back_project",
      [](py::array_t<float, py::array::c_style | py::array::forcecast> depth,
         py::array_t<float, py::array::c_style | py::array::forcecast> embeddings, const Eigen::Matrix3d& rotation,
         const Eigen::Vector3d& translation, double fx, double fy, double cx, double cy, int stride) {
        if (depth.ndim() != 2) throw Error(ErrorKind::kInvalidArgument, "depth must be (H, W)");
        if (embeddings.ndim() != 3) throw Error(ErrorKind::kInvalidArgument, "embeddings must be (rows, cols, k)");
        CameraFrame f;
        f.intrinsics = {fx, fy, cx, cy, stride};
        f.pose = {rotation, translation};
        f.depth = DepthImage(static_cast<int>(depth.shape(0)), static_cast<int>(depth.shape(1)));
        std::copy_n(depth.data(), depth.size(), f.depth.data.begin());
        f.embeddings = {static_cast<int>(embeddings.shape(0)), static_cast<int>(embeddings.shape(1)),
                        static_cast<int>(embeddings.shape(2)),
                        std::vector<float>(embeddings.data(), embeddings.data() + embeddings.size())};
        const BackProjection bp = back_project(f);
        return py::make_tuple(Points(bp.batch.points.transpose()), RowMatrix(bp.batch.targets.transpose()));
      },
      py::arg("depth"), py::arg("embeddings"), py::arg("rotation"), py::arg("translation"), py::arg("fx"),
      py::arg("fy"), py::arg("cx"), py::arg("cy"), py::arg("stride") = 1,
      "Lifts patches with valid depth to world points; returns (points (n, 3), unit targets (n, k)).");

  m.def(
      "gradcheck",
      [](std::uint64_t seed, int cases) {
        GradcheckConfig cfg;
        cfg.cases = cases;
        GradcheckReport r;
        {
          py::gil_scoped_release release;
          r = run_gradcheck(seed, cfg);
        }
        py::dict d;
        d["ok"] = r.ok();
        d["cases"] = r.cases;
        d["failures"] = r.failures;
        d["max_rel_error"] = r.max_rel_error;
        return d;
      },
      py::arg("seed") = 2024, py::arg("cases") = 100);

  m.def(
      "run_cli",
      [](std::vector<std::string> args) {
        args.insert(args.begin(), "latmap");
        std::vector<const char*> argv;
        for (const auto& a : args) argv.push_back(a.c_str());
        std::ostringstream out, err;
        int code;
        {
          py::gil_scoped_release release;
          code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
        }
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"), "Runs the command-line tool in-process; returns (exit code, stdout, stderr).");

  m.def("set_threads", &set_max_threads, py::arg("n"));
  m.def("max_threads", &max_threads);
}
