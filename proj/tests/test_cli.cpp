#include "fixtures.hpp"
#include "kmatch/cli.hpp"
#include "kmatch/evaluation.hpp"
#include "kmatch/synth.hpp"

#include <doctest.h>

#include <fstream>
#include <sstream>

using namespace kmatch;

namespace {

struct Result {
  int code;
  std::string out, err;
};

Result cli(std::vector<std::string> args) {
  args.insert(args.begin(), "kmatch");
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// Asymmetric mesh so that the self-match has a unique answer.
std::filesystem::path lumpy(const std::filesystem::path& dir) {
  const auto path = dir / "lumpy.off";
  save_off(fixture::grid(8, 6, 0.25, 3), path);
  return path;
}

}  // namespace

TEST_CASE("self match is the identity") {
  const auto dir = fixture::scratch_dir("cli_self");
  const auto mesh = lumpy(dir);
  const auto corr = dir / "c.txt";
  const Result r = cli({"--quiet", "match", mesh.string(), mesh.string(), "--descriptor", "hks", "--times", "1",
                        "--num-eigs", "40", "--out", corr.string()});
  REQUIRE(r.code == kExitOk);
  const Assignment a = read_assignment(corr, 63, 63);
  CHECK(a.same_map(Assignment::identity(63)));
  CHECK(std::filesystem::exists(dir / "c.trace.csv"));
  CHECK(std::filesystem::exists(dir / "c.manifest.json"));
}

TEST_CASE("validation exits") {
  const auto dir = fixture::scratch_dir("cli_bad");
  const auto mesh = lumpy(dir);
  const Result r = cli({"match", mesh.string(), mesh.string(), "--times", "-1", "--out", (dir / "c.txt").string()});
  CHECK(r.code == kExitInvalid);
  CHECK(r.err.find("times must be positive") != std::string::npos);

  CHECK(cli({"match", (dir / "nope.off").string(), mesh.string()}).code == kExitInvalid);
  CHECK(cli({"match", mesh.string()}).code == kExitInvalid);
  CHECK(cli({"bogus"}).code == kExitInvalid);
  CHECK(cli({"match", mesh.string(), mesh.string(), "--kernel", "cubic"}).code == kExitInvalid);
  CHECK(cli({"spectrum", mesh.string(), "-k", "64", "--out", (dir / "b.kmsb").string()}).code == kExitInvalid);
  CHECK(cli({"spectrum", mesh.string(), "-k", "0", "--out", (dir / "b.kmsb").string()}).code == kExitInvalid);
}

TEST_CASE("help for every subcommand") {
  for (const char* sub : {"match", "eval", "synth", "spectrum"}) {
    const Result r = cli({sub, "--help"});
    CHECK(r.code == kExitOk);
    CHECK(r.out.find("--") != std::string::npos);
  }
  const Result m = cli({"match", "--help"});
  for (const char* flag : {"--alpha", "--times", "--iters-per-time", "--num-eigs", "--descriptor", "--kernel",
                           "--multiscale", "--n0", "--maxp", "--branch", "--anchors", "--partial", "--seed", "--out"})
    CHECK(m.out.find(flag) != std::string::npos);
  CHECK(cli({"--help"}).code == kExitOk);
}

TEST_CASE("synth") {
  const auto dir = fixture::scratch_dir("cli_synth");
  REQUIRE(cli({"synth", "--shape", "cycle:32", "--swap", "8,16", "--out", (dir / "swap").string()}).code == kExitOk);
  // The cycle is a 32 x 4 torus; vertices 0..31 form the first ring.
  const Assignment init = read_assignment(dir / "swap" / "init.txt", 128, 128);
  for (Index i = 0; i < 128; ++i) CHECK(init.target_of[i] == (i == 8 ? 16 : i == 16 ? 8 : i));

  REQUIRE(cli({"synth", "--shape", "icosphere:162", "--permute", "--noise-rho", "0", "--seed", "3", "--out",
               (dir / "clean").string()})
              .code == kExitOk);
  CHECK(slurp(dir / "clean" / "init.txt") == slurp(dir / "clean" / "gt.txt"));

  for (const char* run : {"a", "b"})
    REQUIRE(cli({"synth", "--shape", "icosphere:162", "--permute", "--seed", "7", "--out", (dir / run).string()}).code ==
            kExitOk);
  for (const char* f : {"source.off", "target.off", "gt.txt"}) CHECK(slurp(dir / "a" / f) == slurp(dir / "b" / f));
  CHECK(cli({"synth", "--shape", "cube:8", "--out", (dir / "x").string()}).code == kExitInvalid);
}

TEST_CASE("eval") {
  const auto dir = fixture::scratch_dir("cli_eval");
  REQUIRE(cli({"synth", "--shape", "icosphere:162", "--permute", "--seed", "2", "--out", dir.string()}).code == kExitOk);
  const auto gt = (dir / "gt.txt").string(), target = (dir / "target.off").string();
  const Result same = cli({"eval", gt, gt, target, "--curve", (dir / "curve.csv").string(), "--svg",
                           (dir / "curve.svg").string()});
  REQUIRE(same.code == kExitOk);
  CHECK(same.out.find("mean_error 0\n") != std::string::npos);
  CHECK(std::filesystem::exists(dir / "curve.csv"));
  CHECK(std::filesystem::exists(dir / "curve.svg"));
  CHECK(cli({"eval", gt, (dir / "missing.txt").string(), target}).code == kExitInvalid);

  // Uniform random correspondence against the library oracle.
  const TriMesh mesh = load_mesh(dir / "target.off");
  std::mt19937_64 rng(9);
  const Assignment random = Assignment::from_targets(random_permutation(162, rng), 162);
  write_assignment(random, dir / "random.txt");
  const Result r = cli({"eval", (dir / "random.txt").string(), gt, target});
  REQUIRE(r.code == kExitOk);
  const double printed = std::stod(r.out.substr(r.out.find("mean_error ") + 11));
  const GroundTruth truth = read_ground_truth(dir / "gt.txt", 162, 162);
  const VertexErrors e = geodesic_error(random, truth, mesh);
  double mean = 0.0;
  for (double x : e.errors) mean += x;
  mean /= static_cast<double>(e.errors.size());
  CHECK(std::abs(printed - mean) <= 0.1 * mean);
}

TEST_CASE("cached basis gives the same correspondence") {
  const auto dir = fixture::scratch_dir("cli_basis");
  REQUIRE(cli({"synth", "--shape", "icosphere:162", "--permute", "--noise-rho", "0.3", "--seed", "4", "--out",
               dir.string()})
              .code == kExitOk);
  const auto src = (dir / "source.off").string(), tgt = (dir / "target.off").string();
  REQUIRE(cli({"spectrum", src, "-k", "50", "--out", (dir / "s.kmsb").string()}).code == kExitOk);
  REQUIRE(cli({"spectrum", tgt, "-k", "50", "--out", (dir / "t.kmsb").string()}).code == kExitOk);
  const std::vector<std::string> common{"--quiet", "match", src, tgt, "--num-eigs", "50", "--descriptor", "none",
                                        "--init", (dir / "init.txt").string()};
  auto fresh = common, cached = common;
  fresh.insert(fresh.end(), {"--out", (dir / "fresh.txt").string()});
  cached.insert(cached.end(), {"--basis", (dir / "s.kmsb").string(), (dir / "t.kmsb").string(), "--out",
                               (dir / "cached.txt").string()});
  REQUIRE(cli(fresh).code == kExitOk);
  REQUIRE(cli(cached).code == kExitOk);
  CHECK(slurp(dir / "fresh.txt") == slurp(dir / "cached.txt"));
  CHECK(slurp(dir / "fresh.trace.csv") == slurp(dir / "cached.trace.csv"));

  // A basis of the wrong mesh is rejected.
  auto wrong = common;
  wrong.insert(wrong.end(), {"--basis", (dir / "t.kmsb").string(), "--num-eigs", "60"});
  CHECK(cli(wrong).code == kExitInvalid);
}
