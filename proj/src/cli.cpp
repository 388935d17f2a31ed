#include "kmatch/cli.hpp"

#include "kmatch/descriptors.hpp"
#include "kmatch/evaluation.hpp"
#include "kmatch/multiscale.hpp"
#include "kmatch/synth.hpp"

#include <CLI11.hpp>
#include <json.hpp>
#include <Eigen/Core>

#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <optional>
#include <sstream>

namespace kmatch {

namespace {

constexpr const char* kVersion = "0.3.0";

std::vector<double> parse_times(const std::string& text) {
  std::vector<double> times;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::size_t used = 0;
    double t = 0.0;
    try {
      t = std::stod(item, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != item.size()) throw ValidationError("invalid time '" + item + "' in --times");
    times.push_back(t);
  }
  if (times.empty()) throw ValidationError("--times needs at least one value");
  return times;
}

std::pair<Index, Index> parse_swap(const std::string& text) {
  const auto comma = text.find(',');
  if (comma == std::string::npos) throw ValidationError("--swap expects i,j");
  try {
    std::size_t a = 0, b = 0;
    const Index i = std::stoll(text.substr(0, comma), &a);
    const Index j = std::stoll(text.substr(comma + 1), &b);
    if (a == comma && b == text.size() - comma - 1) return {i, j};
  } catch (const std::exception&) {
  }
  throw ValidationError("--swap expects i,j, got '" + text + "'");
}

std::filesystem::path sibling(const std::filesystem::path& out, const std::string& suffix) {
  std::filesystem::path p = out;
  p.replace_extension();
  return p.string() + suffix;
}

struct MatchArgs {
  std::string source, target, out = "correspondence.txt";
  double alpha = MatchConfig{}.alpha;
  std::string times;
  int iters_per_time = MatchConfig{}.iters_per_time;
  Index num_eigs = MatchConfig{}.num_eigs;
  std::string descriptor = "hks";
  std::string kernel = "heat";
  std::string init;
  std::vector<std::string> basis;
  bool multiscale = false;
  Index n0 = MultiscaleConfig{}.n0;
  Index maxp = MultiscaleConfig{}.max_problem;
  Index branch = MultiscaleConfig{}.branch;
  Index anchors = MultiscaleConfig{}.anchor_count;
  int sweeps = MultiscaleConfig{}.sweeps;
  std::string dump_levels;
  bool partial = false;
  bool no_normalize = false;
  std::uint64_t seed = 0;
};

MatchConfig resolve_match_config(const MatchArgs& a) {
  MatchConfig c;
  c.alpha = a.alpha;
  if (!a.times.empty()) c.time_schedule = parse_times(a.times);
  c.iters_per_time = a.iters_per_time;
  c.num_eigs = a.num_eigs;
  if (a.kernel == "heat") {
    c.kernel_kind = KernelKind::heat;
  } else if (a.kernel.rfind("gaussian", 0) == 0) {
    c.kernel_kind = KernelKind::gaussian_geodesic;
    if (a.kernel.size() > 8) {
      if (a.kernel[8] != ':') throw ValidationError("--kernel must be heat, gaussian or gaussian:<sigma>");
      const std::string s = a.kernel.substr(9);
      std::size_t used = 0;
      try {
        c.gaussian_sigma = std::stod(s, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used == 0 || used != s.size()) throw ValidationError("invalid gaussian sigma '" + s + "'");
    }
  } else {
    throw ValidationError("--kernel must be heat, gaussian or gaussian:<sigma>");
  }
  c.validate();
  return c;
}

// Unit area per shape by default; a partial pair shares the source's scale so
// the missing part is not blown up.
std::pair<TriMesh, TriMesh> normalize_pair(TriMesh x, TriMesh y, bool normalize, bool partial) {
  if (!normalize) return {std::move(x), std::move(y)};
  if (partial) {
    const double s = 1.0 / std::sqrt(x.total_area());
    return {x.scaled(s), y.scaled(s)};
  }
  return {x.normalized_to_unit_area(), y.normalized_to_unit_area()};
}

std::shared_ptr<const SpectralBasis> cached_basis(const std::string& path, const TriMesh& mesh, Index k) {
  auto basis = std::make_shared<SpectralBasis>(load_basis(path));
  if (basis->num_vertices() != mesh.num_vertices())
    throw ValidationError("basis " + path + " has " + std::to_string(basis->num_vertices()) +
                          " vertices, mesh has " + std::to_string(mesh.num_vertices()));
  if (basis->size() < std::min(k, mesh.num_vertices()))
    throw ValidationError("basis " + path + " holds " + std::to_string(basis->size()) +
                          " eigenpairs, --num-eigs asks for " + std::to_string(k));
  const double area = basis->mass.sum();
  if (std::abs(area - mesh.total_area()) > 1e-9 * mesh.total_area())
    throw ValidationError("basis " + path + " was computed at a different scale (mass " +
                          std::to_string(area) + ", mesh area " + std::to_string(mesh.total_area()) + ")");
  if (basis->size() > k) {
    auto trimmed = std::make_shared<SpectralBasis>(*basis);
    trimmed->eigenvalues.conservativeResize(k);
    trimmed->eigenvectors.conservativeResize(Eigen::NoChange, k);
    return trimmed;
  }
  return basis;
}

std::pair<DescriptorField, DescriptorField> make_descriptors(const std::string& kind, const PreparedShape& x,
                                                             const PreparedShape& y, const MatchConfig& c) {
  auto heat_sig = [&] {
    const auto times = default_hks_times(*x.basis);
    return std::pair{hks(*x.basis, times), hks(*y.basis, times)};
  };
  if (kind == "hks") return heat_sig();
  if (kind == "xyz") return {xyz_descriptors(x.mesh), xyz_descriptors(y.mesh)};
  if (kind == "stacked") {
    auto [hx, hy] = heat_sig();
    const std::vector<double> w{1.0, 1.0};
    const std::vector<DescriptorField> fx{hx, xyz_descriptors(x.mesh)}, fy{hy, xyz_descriptors(y.mesh)};
    return {stack(fx, w), stack(fy, w)};
  }
  if (kind.rfind("landmarks:", 0) == 0) {
    const std::string file = kind.substr(10);
    std::vector<Index> lx, ly;
    for (auto [s, t] : read_pairs(file)) {
      if (s < 0 || s >= x.mesh.num_vertices() || t < 0 || t >= y.mesh.num_vertices())
        throw ValidationError(file + ": landmark pair " + std::to_string(s) + " " + std::to_string(t) +
                              " out of range");
      lx.push_back(s);
      ly.push_back(t);
    }
    if (lx.empty()) throw ValidationError(file + ": no landmarks");
    const double t = c.time_schedule.back();
    return {landmark_descriptors(*x.basis, lx, t), landmark_descriptors(*y.basis, ly, t)};
  }
  if (kind == "none") {
    return {DescriptorField{MatrixXd(x.mesh.num_vertices(), 0)}, DescriptorField{MatrixXd(y.mesh.num_vertices(), 0)}};
  }
  throw ValidationError("--descriptor must be hks, xyz, stacked, none or landmarks:<file>");
}

nlohmann::ordered_json energy_summary(const MatchState& s) {
  nlohmann::ordered_json e;
  e["iterations"] = s.iterations;
  e["steps"] = s.steps;
  if (!s.trace.empty()) {
    e["initial"] = s.trace.front().energy;
    e["final"] = s.trace.back().energy;
  }
  e["iterations_per_time"] = s.iterations_per_time;
  return e;
}

void write_json(const nlohmann::ordered_json& j, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

nlohmann::ordered_json versions() {
  nlohmann::ordered_json v;
  v["kmatch"] = kVersion;
  v["eigen"] = std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
               std::to_string(EIGEN_MINOR_VERSION);
  v["cli11"] = CLI11_VERSION;
  return v;
}

int cmd_match(const MatchArgs& a, std::ostream& out) {
  const auto start = std::chrono::steady_clock::now();
  const MatchConfig config = resolve_match_config(a);
  MultiscaleConfig ms;
  ms.n0 = a.n0;
  ms.max_problem = a.maxp;
  ms.branch = a.branch;
  ms.anchor_count = a.anchors;
  ms.sweeps = a.sweeps;
  ms.partial = a.partial;
  if (!a.dump_levels.empty()) ms.dump_dir = a.dump_levels;
  if (a.multiscale) ms.validate();
  if (a.basis.size() > 2) throw ValidationError("--basis takes at most two files (source, target)");

  auto [mx, my] = normalize_pair(load_mesh(a.source), load_mesh(a.target), !a.no_normalize, a.partial);
  std::shared_ptr<const SpectralBasis> bx, by;
  if (!a.basis.empty()) bx = cached_basis(a.basis[0], mx, config.num_eigs);
  if (a.basis.size() == 2) by = cached_basis(a.basis[1], my, config.num_eigs);
  const PreparedShape sx = prepare_shape(std::move(mx), config, bx);
  const PreparedShape sy = prepare_shape(std::move(my), config, by);

  std::optional<Assignment> init;
  if (!a.init.empty()) init = read_assignment(a.init, sx.mesh.num_vertices(), sy.mesh.num_vertices());
  auto [dx, dy] = make_descriptors(a.descriptor, sx, sy, config);
  if (!init && dx.dimension() == 0) throw ValidationError("--descriptor none needs --init");

  Assignment result;
  MatchState trace_state;
  nlohmann::ordered_json levels = nlohmann::ordered_json::array();
  if (a.multiscale) {
    MultiscaleProblem problem{&sx, &sy, dx, dy};
    MultiscaleResult r = run_multiscale(problem, config, ms, init);
    result = std::move(r.assignment);
    trace_state = std::move(r.coarse);
    for (const auto& l : r.levels)
      levels.push_back({{"sampled_source", l.sampled_x}, {"sampled_target", l.sampled_y}, {"cells", l.num_cells},
                        {"matched", l.matched}, {"forbidden_source", l.forbidden_x}});
    levels.push_back({{"exchange_rounds", r.exchange_rounds}});
  } else {
    trace_state = run(sx, sy, dx, dy, config, init);
    result = trace_state.assignment;
  }

  const std::filesystem::path out_path = a.out;
  if (out_path.has_parent_path()) std::filesystem::create_directories(out_path.parent_path());
  write_assignment(result, out_path, true);
  write_trace_csv(trace_state, sibling(out_path, ".trace.csv"));

  nlohmann::ordered_json m;
  m["command"] = "match";
  m["source"] = a.source;
  m["target"] = a.target;
  m["output"] = out_path.string();
  m["versions"] = versions();
  nlohmann::ordered_json cfg;
  cfg["alpha"] = config.alpha;
  cfg["times"] = config.time_schedule;
  cfg["iters_per_time"] = config.iters_per_time;
  cfg["num_eigs"] = config.num_eigs;
  cfg["kernel"] = config.kernel_kind == KernelKind::heat ? "heat" : "gaussian";
  if (config.gaussian_sigma) cfg["gaussian_sigma"] = *config.gaussian_sigma;
  cfg["descriptor"] = a.descriptor;
  cfg["init"] = a.init;
  cfg["normalize"] = !a.no_normalize;
  cfg["partial"] = a.partial;
  cfg["seed"] = a.seed;
  m["config"] = cfg;
  if (a.multiscale) {
    m["multiscale"] = {{"n0", ms.n0}, {"maxp", ms.max_problem}, {"branch", ms.branch},
                       {"anchors", ms.anchor_count}, {"sweeps", ms.sweeps}, {"levels", levels}};
  }
  m["matched"] = result.num_matched();
  m["source_vertices"] = sx.mesh.num_vertices();
  m["target_vertices"] = sy.mesh.num_vertices();
  m["energy"] = energy_summary(trace_state);
  m["wall_clock_seconds"] =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  write_json(m, sibling(out_path, ".manifest.json"));
  out << "matched " << result.num_matched() << " of " << result.num_sources() << '\n';
  return kExitOk;
}

struct EvalArgs {
  std::string corr, gt, target, source, curve, svg;
  bool quiet_curve = false;
};

int cmd_eval(const EvalArgs& a, std::ostream& out) {
  const TriMesh y = load_mesh(a.target);
  Index ns = 0;
  if (!a.source.empty()) {
    ns = load_mesh(a.source).num_vertices();
  } else {
    for (const auto& file : {a.corr, a.gt})
      for (auto [s, t] : read_pairs(file)) ns = std::max(ns, s + 1);
  }
  const GroundTruth gt = read_ground_truth(a.gt, ns, y.num_vertices());
  const Assignment corr = read_assignment(a.corr, ns, y.num_vertices());
  const VertexErrors e = geodesic_error(corr, gt, y);
  const ErrorCurve curve = cumulative_curve(e.errors, default_thresholds());
  check_curve(curve);
  if (!a.curve.empty()) write_curve_csv(curve, a.curve);
  if (!a.svg.empty()) write_curve_svg(curve, a.svg);
  out << std::setprecision(6);
  out << "mean_error " << curve.mean_error << '\n';
  out << "matched_fraction " << curve.matched_fraction << '\n';
  out << "evaluated " << e.errors.size() << " unmatched " << e.unmatched << " false_matches " << e.false_matches
      << " true_rejections " << e.true_rejections << '\n';
  return kExitOk;
}

struct SynthArgs {
  std::string shape, out = ".", swap;
  bool permute = false;
  std::optional<double> noise_rho;
  std::uint64_t seed = 0;
};

int cmd_synth(const SynthArgs& a, std::ostream& out) {
  SynthOptions o;
  o.permute = a.permute;
  if (!a.swap.empty()) o.swap = parse_swap(a.swap);
  o.noise_rho = a.noise_rho;
  o.seed = a.seed;
  const SynthPair pair = make_synthetic_pair(parse_shape_spec(a.shape), o);
  const std::filesystem::path dir = a.out;
  std::filesystem::create_directories(dir);
  save_off(pair.source, dir / "source.off");
  save_off(pair.target, dir / "target.off");
  write_assignment(pair.ground_truth, dir / "gt.txt", true);
  if (pair.init) write_assignment(*pair.init, dir / "init.txt", true);
  out << "wrote " << (dir / "source.off").string() << ", " << (dir / "target.off").string() << ", "
      << (dir / "gt.txt").string() << (pair.init ? ", " + (dir / "init.txt").string() : std::string()) << '\n';
  return kExitOk;
}

struct SpectrumArgs {
  std::string mesh, out;
  Index k = 100;
  bool no_normalize = false;
};

int cmd_spectrum(const SpectrumArgs& a, std::ostream& out) {
  TriMesh mesh = load_mesh(a.mesh);
  if (a.k < 1 || a.k > mesh.num_vertices())
    throw ValidationError("k must be in [1, " + std::to_string(mesh.num_vertices()) + "]");
  if (!a.no_normalize) mesh = mesh.normalized_to_unit_area();
  const SpectralBasis basis = eigenbasis(cotan_laplacian(mesh), a.k);
  save_basis(basis, a.out);
  out << "wrote " << basis.size() << " eigenpairs to " << a.out << '\n';
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Dense shape correspondence by heat kernel alignment"};
  app.require_subcommand(1);
  int threads = 0;
  bool quiet = false;
  app.add_option("--threads", threads, "Cap on worker threads (0: all)")->check(CLI::NonNegativeNumber);
  app.add_flag("--quiet", quiet, "Suppress warnings");
  app.set_version_flag("--version", kVersion);

  MatchArgs m;
  auto* match = app.add_subcommand("match", "Match a source mesh to a target mesh");
  match->add_option("source", m.source, "Source mesh (.off or ASCII .ply)")->required();
  match->add_option("target", m.target, "Target mesh")->required();
  match->add_option("--out,-o", m.out, "Correspondence file; trace and manifest go beside it")->capture_default_str();
  match->add_option("--alpha", m.alpha, "Descriptor weight")->capture_default_str();
  match->add_option("--times", m.times, "Comma-separated diffusion times, run in order (default 0.005,0.0025,0.001,0.0005)");
  match->add_option("--iters-per-time", m.iters_per_time, "Iterations per diffusion time")->capture_default_str();
  match->add_option("--num-eigs", m.num_eigs, "Eigenpairs in the heat kernel basis")->capture_default_str();
  match->add_option("--descriptor", m.descriptor, "hks, xyz, stacked, none or landmarks:<file>")->capture_default_str();
  match->add_option("--kernel", m.kernel, "heat, gaussian or gaussian:<sigma>")->capture_default_str();
  match->add_option("--init", m.init, "Initial correspondence file instead of the descriptor assignment");
  match->add_option("--basis", m.basis, "Cached bases from 'spectrum': source [target]")->expected(1, 2);
  match->add_flag("--multiscale", m.multiscale, "Coarse-to-fine matching with Voronoi cells");
  match->add_option("--n0", m.n0, "Seeds on the larger shape")->capture_default_str();
  match->add_option("--maxp", m.maxp, "Largest sub-problem")->capture_default_str();
  match->add_option("--branch", m.branch, "Sample growth factor per level")->capture_default_str();
  match->add_option("--anchors", m.anchors, "Coarse matches carried into every cell")->capture_default_str();
  match->add_option("--sweeps", m.sweeps, "Exchange rounds after the last level")->capture_default_str();
  match->add_option("--dump-levels", m.dump_levels, "Directory for per-level cell CSVs");
  match->add_flag("--partial", m.partial, "Partial shapes: shared scale, forbidden cells, no completion");
  match->add_flag("--no-normalize", m.no_normalize, "Keep the input scale");
  match->add_option("--seed", m.seed, "Random seed, recorded in the manifest")->capture_default_str();

  EvalArgs e;
  auto* eval = app.add_subcommand("eval", "Score a correspondence against ground truth");
  eval->add_option("corr", e.corr, "Correspondence file")->required();
  eval->add_option("gt", e.gt, "Ground truth file ('src -1' for no counterpart)")->required();
  eval->add_option("target", e.target, "Target mesh")->required();
  eval->add_option("--source", e.source, "Source mesh, for the source vertex count");
  eval->add_option("--curve", e.curve, "Cumulative curve CSV");
  eval->add_option("--svg", e.svg, "Cumulative curve plot");

  SynthArgs s;
  auto* synth = app.add_subcommand("synth", "Write a synthetic pair with ground truth");
  synth->add_option("--shape", s.shape, "icosphere:<n>, cycle:<n> or hemisphere:<n>")->required();
  synth->add_flag("--permute", s.permute, "Relabel the target vertices at random");
  synth->add_option("--swap", s.swap, "Initial map with i and j exchanged, as i,j");
  synth->add_option("--noise-rho", s.noise_rho, "Fraction of the ground truth shuffled in init.txt");
  synth->add_option("--seed", s.seed, "Random seed")->capture_default_str();
  synth->add_option("--out,-o", s.out, "Output directory")->capture_default_str();

  SpectrumArgs sp;
  auto* spectrum = app.add_subcommand("spectrum", "Cache a Laplace-Beltrami eigenbasis");
  spectrum->add_option("mesh", sp.mesh, "Mesh")->required();
  spectrum->add_option("--k,-k", sp.k, "Eigenpairs")->capture_default_str();
  spectrum->add_option("--out,-o", sp.out, "Basis file")->required();
  spectrum->add_flag("--no-normalize", sp.no_normalize, "Keep the input scale");

  std::vector<std::string> rest(args.rbegin(), args.rend());
  if (!rest.empty()) rest.pop_back();
  try {
    app.parse(rest);
  } catch (const CLI::ParseError& ex) {
    const int code = app.exit(ex, out, err);
    return code == 0 ? kExitOk : kExitInvalid;
  }

  try {
    set_quiet(quiet);
    if (threads > 0) set_threads(threads);
    if (*match) return cmd_match(m, out);
    if (*eval) return cmd_eval(e, out);
    if (*synth) return cmd_synth(s, out);
    if (*spectrum) return cmd_spectrum(sp, out);
  } catch (const ValidationError& ex) {
    err << "error: " << ex.what() << '\n';
    return kExitInvalid;
  } catch (const NumericError& ex) {
    err << "error: " << ex.what() << '\n';
    return kExitNumeric;
  } catch (const std::exception& ex) {
    err << "error: " << ex.what() << '\n';
    return kExitNumeric;
  }
  return kExitInvalid;
}

}  // namespace kmatch
