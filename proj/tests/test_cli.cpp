#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "latmap/binary_io.hpp"
#include "latmap/cli.hpp"
#include "latmap/store.hpp"
#include "test_util.hpp"

using namespace latmap;
using latmap::testing::TempDir;

namespace {

struct Result {
  int code;
  std::string out;
  std::string err;
};

Result run(std::vector<std::string> args) {
  args.insert(args.begin(), "latmap");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

const std::filesystem::path kGolden = std::filesystem::path(LATMAP_TEST_DATA_DIR) / "golden" / "help.txt";

// Small synthetic scene shared by the end-to-end tests.
void write_spec(const std::filesystem::path& path) {
  std::ofstream(path) << R"({"embedding_dim": 16, "n_frames": 12, "n_heldout": 2,
    "image_rows": 80, "image_cols": 80, "focal": 50.0,
    "stream": {"length": 10, "move_at": 5}})";
}

}  // namespace

TEST(Cli, HelpMatchesGolden) {
  const std::string help = cli::full_help();
  if (std::getenv("LATMAP_UPDATE_GOLDEN")) {
    io::write_text_file(kGolden, help);
    GTEST_SKIP() << "golden file regenerated";
  }
  EXPECT_EQ(help, io::read_text_file(kGolden));
  for (const char* flag : {"--seed", "--config", "--verbose", "--threads", "--dataset", "--freeze-decoder",
                           "--scene", "--maps-dir", "--stream", "--report", "--points", "--reference",
                           "--min-cosine", "--weights", "--save-weights", "--format", "--allow-empty", "--spec",
                           "--cases", "--loss-csv", "--steps", "--decoder"}) {
    EXPECT_NE(help.find(flag), std::string::npos) << flag;
  }
}

TEST(Cli, HelpFlag) {
  const Result r = run({"--help"});
  EXPECT_EQ(r.code, 0);
  EXPECT_NE(r.out.find("build"), std::string::npos);
  const Result sub = run({"query", "--help"});
  EXPECT_EQ(sub.code, 0);
  EXPECT_NE(sub.out.find("--min-cosine"), std::string::npos);
}

TEST(Cli, UsageErrorsExitTwo) {
  for (const auto& args : std::vector<std::vector<std::string>>{
           {}, {"frobnicate"}, {"build"}, {"build", "--dataset", "x", "--out", "y", "--bogus"},
           {"token", "--map", "m", "--out", "o", "--format", "xml"}}) {
    const Result r = run(args);
    EXPECT_EQ(r.code, cli::kExitUsage) << r.err;
    EXPECT_EQ(r.err.rfind("error: kind=", 0), 0u) << r.err;
    EXPECT_EQ(std::count(r.err.begin(), r.err.end(), '\n'), 1) << r.err;
  }
}

TEST(Cli, BadInputExitsThree) {
  TempDir dir("cli_bad");
  const Result missing = run({"build", "--dataset", (dir / "nope").string(), "--out", (dir / "m").string()});
  EXPECT_EQ(missing.code, cli::kExitBadInput) << missing.err;
  std::ofstream(dir / "bad.lmap") << "LMAPgarbage";
  const Result corrupt = run({"token", "--map", (dir / "bad.lmap").string(), "--out", (dir / "t").string()});
  EXPECT_EQ(corrupt.code, cli::kExitBadInput);
  EXPECT_NE(corrupt.err.find("kind=format"), std::string::npos) << corrupt.err;
}

TEST(Cli, Gradcheck) {
  const Result r = run({"gradcheck", "--cases", "10"});
  EXPECT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("cases=10"), std::string::npos);
}

TEST(Cli, SynthBuildQueryReplayTokenExport) {
  TempDir dir("cli_e2e");
  write_spec(dir / "spec.json");
  const std::string data = (dir / "data").string();
  const std::string map = (dir / "m.lmap").string();

  Result r = run({"--seed", "3", "synth", "--spec", (dir / "spec.json").string(), "--out", data});
  ASSERT_EQ(r.code, 0) << r.err;

  r = run({"--seed", "3", "build", "--dataset", data, "--out", map, "--steps", "800", "--loss-csv",
           (dir / "loss.csv").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("steps=800"), std::string::npos) << r.out;
  EXPECT_EQ(std::count_if(std::istreambuf_iterator<char>(*std::make_unique<std::ifstream>(dir / "loss.csv")),
                          std::istreambuf_iterator<char>(), [](char c) { return c == '\n'; }),
            801);

  // Query at region centers against the oracle prototypes.
  r = run({"query", "--map", map, "--points", data + "/region_centers.txt", "--reference",
           data + "/region_centers.ref", "--out", (dir / "q.txt").string(), "--min-cosine", "0.99"});
  EXPECT_EQ(r.code, 0) << r.err << r.out;
  EXPECT_NE(r.out.find("mean_cosine="), std::string::npos);

  // An impossible threshold is an acceptance-check failure.
  r = run({"query", "--map", map, "--points", data + "/region_centers.txt", "--reference",
           data + "/region_centers.ref", "--min-cosine", "1.5"});
  EXPECT_EQ(r.code, cli::kExitCheckFailed);

  // Empty stream: output map equals input map.
  StreamManifest empty;
  empty.dataset = data;
  save_stream_manifest(empty, dir / "empty.json");
  r = run({"replay", "--map", map, "--stream", (dir / "empty.json").string(), "--out",
           (dir / "same.lmap").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(io::read_text_file(dir / "same.lmap"), io::read_text_file(map));

  r = run({"replay", "--map", map, "--stream", data + "/stream.json", "--out", (dir / "r.lmap").string(),
           "--report", (dir / "r.csv").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("updates=2"), std::string::npos) << r.out;

  r = run({"token", "--map", (dir / "r.lmap").string(), "--out", (dir / "t.txt").string(), "--format", "text"});
  ASSERT_EQ(r.code, 0) << r.err;
  const std::string tok = io::read_text_file(dir / "t.txt");
  EXPECT_EQ(std::count(tok.begin(), tok.end(), '\n'), 256);

  r = run({"export", "--map", map, "--out", (dir / "m.ply").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(io::read_text_file(dir / "m.ply").rfind("ply\n", 0), 0u);
}

TEST(Cli, TokenOfEmptyMap) {
  TempDir dir("cli_empty");
  GridConfig g;
  g.bounds = {Vec3::Zero(), Vec3::Ones()};
  const LatentMap m{LatentGrid(g), init_decoder(1, std::array<int, 1>{8}, 16, 4), 0};
  save_map(m, dir / "m.lmap");
  Result r = run({"token", "--map", (dir / "m.lmap").string(), "--out", (dir / "t").string()});
  EXPECT_EQ(r.code, cli::kExitBadInput);
  EXPECT_NE(r.err.find("kind=empty_map"), std::string::npos) << r.err;
  r = run({"token", "--map", (dir / "m.lmap").string(), "--out", (dir / "t").string(), "--allow-empty"});
  EXPECT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(deserialize_token(io::read_file(dir / "t")).values, Eigen::VectorXd::Zero(256));
}

TEST(Cli, StandaloneBinaryRuns) {
  const std::string cmd = std::string(LATMAP_CLI_PATH) + " --help > /dev/null";
  EXPECT_EQ(std::system(cmd.c_str()), 0);
}
