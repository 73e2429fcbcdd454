#include "condcap/app.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>
#include <type_traits>
#include <variant>

#include <unistd.h>

#include "condcap/duality.hpp"
#include "condcap/error.hpp"
#include "condcap/oracles.hpp"

namespace condcap {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

// ---------------------------------------------------------------------------
// Schema reading
// ---------------------------------------------------------------------------

[[noreturn]] void config_fail(const std::string& path, const std::string& what) {
  throw ConfigError("config " + (path.empty() ? std::string("/") : path) + ": " + what);
}

// Reads one JSON object, remembering which keys were consumed so that
// leftovers can be rejected.
class ObjectReader {
 public:
  ObjectReader(const json& doc, std::string path) : doc_(doc), path_(std::move(path)) {
    if (!doc_.is_object()) config_fail(path_, "expected an object");
  }

  bool has(const std::string& key) const { return doc_.contains(key); }

  const json& raw(const std::string& key) {
    seen_.insert(key);
    if (!doc_.contains(key)) config_fail(where(key), "missing required key '" + key + "'");
    return doc_.at(key);
  }

  double number(const std::string& key) {
    const json& v = raw(key);
    if (!v.is_number()) config_fail(where(key), "key '" + key + "' must be a number");
    return v.get<double>();
  }
  double number(const std::string& key, double fallback) {
    return has(key) ? number(key) : fallback;
  }

  long long integer(const std::string& key) {
    const json& v = raw(key);
    if (!v.is_number_integer()) config_fail(where(key), "key '" + key + "' must be an integer");
    return v.get<long long>();
  }
  long long integer(const std::string& key, long long fallback) {
    return has(key) ? integer(key) : fallback;
  }

  std::string string(const std::string& key) {
    const json& v = raw(key);
    if (!v.is_string()) config_fail(where(key), "key '" + key + "' must be a string");
    return v.get<std::string>();
  }
  std::string string(const std::string& key, const std::string& fallback) {
    return has(key) ? string(key) : fallback;
  }

  std::vector<double> numbers(const std::string& key) {
    const json& v = raw(key);
    if (!v.is_array()) config_fail(where(key), "key '" + key + "' must be an array of numbers");
    std::vector<double> out;
    for (const json& x : v) {
      if (!x.is_number()) config_fail(where(key), "key '" + key + "' must hold numbers only");
      out.push_back(x.get<double>());
    }
    return out;
  }

  std::string where(const std::string& key) const { return path_ + "/" + key; }

  void finish() const {
    for (const auto& [key, value] : doc_.items())
      if (!seen_.count(key)) config_fail(path_, "unknown key '" + key + "'");
  }

 private:
  const json& doc_;
  std::string path_;
  std::set<std::string> seen_;
};

Eigen::Vector3d vec3(ObjectReader& r, const std::string& key) {
  if (!r.has(key)) return Eigen::Vector3d::Zero();
  const std::vector<double> v = r.numbers(key);
  if (v.size() != 3) config_fail(r.where(key), "key '" + key + "' must have 3 entries");
  return Eigen::Vector3d(v[0], v[1], v[2]);
}

KernelSpec read_kernel(const json& doc) {
  ObjectReader r(doc, "/kernel");
  const std::string family = r.string("family");
  auto build = [&]() -> KernelSpec {
    if (family == "riesz") {
      const double alpha = r.number("alpha");
      return KernelSpec::riesz(alpha, int(r.integer("dim", 3)));
    }
    if (family == "newton") return KernelSpec::newton(int(r.integer("dim", 3)));
    if (family == "gaussian") return KernelSpec::gaussian(r.number("width", 1.0));
    if (family == "green_ball") {
      const double radius = r.number("radius", 1.0);
      return KernelSpec::green_ball(radius, int(r.integer("dim", 3)));
    }
    config_fail(r.where("family"), "unknown kernel family '" + family + "'");
  };
  KernelSpec spec = [&] {
    try {
      return build();
    } catch (const ConfigError& e) {
      if (std::string(e.what()).rfind("config ", 0) == 0) throw;
      config_fail("/kernel", e.what());
    }
  }();
  r.finish();
  return spec;
}

Generator read_generator(const json& doc, const std::string& path) {
  ObjectReader r(doc, path);
  const std::string type = r.string("type");
  Generator gen;
  if (type == "sphere_shell") {
    SphereShell s;
    s.center = vec3(r, "center");
    s.radius = r.number("radius");
    gen = s;
  } else if (type == "ball_volume") {
    BallVolume b;
    b.center = vec3(r, "center");
    b.radius = r.number("radius");
    gen = b;
  } else if (type == "box") {
    const std::vector<double> lo = r.numbers("lower"), hi = r.numbers("upper");
    Box b;
    b.lower = Eigen::Map<const Eigen::VectorXd>(lo.data(), Index(lo.size()));
    b.upper = Eigen::Map<const Eigen::VectorXd>(hi.data(), Index(hi.size()));
    gen = b;
  } else if (type == "annulus") {
    Annulus a;
    a.center = vec3(r, "center");
    a.inner_radius = r.number("inner_radius");
    a.outer_radius = r.number("outer_radius");
    gen = a;
  } else if (type == "layered_shell") {
    LayeredShell l;
    l.center = vec3(r, "center");
    l.inner_radius = r.number("inner_radius");
    l.ratio = r.number("ratio");
    l.layers = int(r.integer("layers"));
    gen = l;
  } else if (type == "point_list") {
    const json& pts = r.raw("points");
    if (!pts.is_array() || pts.empty())
      config_fail(r.where("points"), "key 'points' must be a nonempty array of points");
    const std::size_t dim = pts.front().is_array() ? pts.front().size() : 0;
    if (dim == 0) config_fail(r.where("points"), "points must be arrays of coordinates");
    PointList p;
    p.points.resize(Index(dim), Index(pts.size()));
    for (std::size_t k = 0; k < pts.size(); ++k) {
      if (!pts[k].is_array() || pts[k].size() != dim)
        config_fail(r.where("points"), "every point needs " + std::to_string(dim) + " coordinates");
      for (std::size_t d = 0; d < dim; ++d) {
        if (!pts[k][d].is_number()) config_fail(r.where("points"), "coordinates must be numbers");
        p.points(Index(d), Index(k)) = pts[k][d].get<double>();
      }
    }
    gen = p;
  } else {
    config_fail(r.where("type"), "unknown generator type '" + type + "'");
  }
  r.finish();
  return gen;
}

std::vector<std::vector<Index>> read_stages(const json& v, const std::string& path,
                                            std::size_t plates) {
  if (!v.is_array() || v.empty()) config_fail(path, "stages must be a nonempty array");
  std::vector<std::vector<Index>> out;
  for (std::size_t s = 0; s < v.size(); ++s) {
    const std::string at = path + "/" + std::to_string(s);
    if (!v[s].is_array() || v[s].size() != plates)
      config_fail(at, "every stage lists one node count per plate (" + std::to_string(plates) +
                          ")");
    std::vector<Index> counts;
    for (const json& c : v[s]) {
      if (!c.is_number_integer() || c.get<long long>() < 1)
        config_fail(at, "node counts must be positive integers");
      counts.push_back(Index(c.get<long long>()));
    }
    out.push_back(std::move(counts));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Canonical writing
// ---------------------------------------------------------------------------

json vec_json(const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

// JSON has no inf / nan; they are stored as null.
json num(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

json nums(const std::vector<double>& v) {
  json out = json::array();
  for (double x : v) out.push_back(num(x));
  return out;
}

json kernel_json(const KernelSpec& spec) {
  return std::visit(
      [](const auto& k) -> json {
        using K = std::decay_t<decltype(k)>;
        if constexpr (std::is_same_v<K, RieszKernel>)
          return {{"family", "riesz"}, {"alpha", k.alpha}, {"dim", k.dim}};
        else if constexpr (std::is_same_v<K, NewtonKernel>)
          return {{"family", "newton"}, {"dim", k.dim}};
        else if constexpr (std::is_same_v<K, GaussianKernel>)
          return {{"family", "gaussian"}, {"width", k.width}};
        else
          return {{"family", "green_ball"}, {"radius", k.radius}, {"dim", k.dim}};
      },
      spec.family());
}

json generator_json(const Generator& gen) {
  return std::visit(
      [](const auto& g) -> json {
        using G = std::decay_t<decltype(g)>;
        if constexpr (std::is_same_v<G, SphereShell>)
          return {{"type", "sphere_shell"}, {"center", vec_json(g.center)}, {"radius", g.radius}};
        else if constexpr (std::is_same_v<G, BallVolume>)
          return {{"type", "ball_volume"}, {"center", vec_json(g.center)}, {"radius", g.radius}};
        else if constexpr (std::is_same_v<G, Box>)
          return {{"type", "box"}, {"lower", vec_json(g.lower)}, {"upper", vec_json(g.upper)}};
        else if constexpr (std::is_same_v<G, Annulus>)
          return {{"type", "annulus"},
                  {"center", vec_json(g.center)},
                  {"inner_radius", g.inner_radius},
                  {"outer_radius", g.outer_radius}};
        else if constexpr (std::is_same_v<G, LayeredShell>)
          return {{"type", "layered_shell"},
                  {"center", vec_json(g.center)},
                  {"inner_radius", g.inner_radius},
                  {"ratio", g.ratio},
                  {"layers", g.layers}};
        else {
          json pts = json::array();
          for (Index k = 0; k < g.points.cols(); ++k) pts.push_back(vec_json(g.points.col(k)));
          return {{"type", "point_list"}, {"points", pts}};
        }
      },
      gen);
}

std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << v;
  return os.str();
}

[[noreturn]] void rethrow_with_context(const Error& e, const std::string& context) {
  const std::string msg = context + ": " + e.what();
  switch (e.category()) {
    case ErrorCategory::configuration: throw ConfigError(msg);
    case ErrorCategory::geometry: throw GeometryError(msg);
    case ErrorCategory::nonconvergence: throw NonconvergenceError(msg);
    case ErrorCategory::io: throw IoError(msg);
    case ErrorCategory::contract: throw ContractError(msg);
    case ErrorCategory::numerical: throw NumericalError(msg);
    case ErrorCategory::degenerate: throw DegenerateError(msg);
  }
  throw Error(e.category(), msg);
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// ---------------------------------------------------------------------------
// Report sections
// ---------------------------------------------------------------------------

json solve_json(const SolveReport& r) {
  json w = json::array();
  for (const Eigen::VectorXd& v : r.minimizer.weights) w.push_back(vec_json(v));
  double sum = 0.0;
  for (double c : r.constants) sum += c;
  return {{"capacity", num(r.capacity)},
          {"min_energy", num(r.min_energy)},
          {"iterations", r.iterations},
          {"converged", r.converged},
          {"relative_decrease", num(r.relative_decrease)},
          {"certificate_gap", num(r.certificate_gap)},
          {"worst_case_gap", num(r.worst_case_gap)},
          {"eta", nums(r.eta)},
          {"constants", nums(r.constants)},
          {"sum_constants", num(sum)},
          {"weights", w}};
}

json certificate_json(const DualCertificate& c) {
  return {{"constants", nums(c.constants)},
          {"sum_constants", num(c.sum_constants)},
          {"dual_energy", num(c.dual_energy)},
          {"capacity", num(c.capacity)},
          {"gap", num(c.gap)},
          {"support_residual", num(c.support_residual)},
          {"min_residual", num(c.min_residual)},
          {"ladder", c.ladder.name},
          {"ladder_tol", c.ladder.tol}};
}

json matrix_json(const KernelMatrix& m) {
  return {{"size", m.size()},
          {"loading", num(m.loading)},
          {"min_eigenvalue", num(m.min_eigenvalue_estimate)},
          {"max_eigenvalue", num(m.max_eigenvalue_estimate)},
          {"regularized", m.regularized}};
}

json validation_json(const ValidationReport& v) {
  return {{"cross_sign_distance", num(v.cross_sign_distance)},
          {"min_intra_plate_distance", num(v.min_intra_plate_distance)},
          {"positive_plates", v.positive_plates},
          {"negative_plates", v.negative_plates},
          {"g_min", num(v.g_min)}};
}

json node_table(const Condenser& condenser, const WeightSpec& weights, const SolveReport& r) {
  json plate_index = json::array(), coords = json::array(), weight = json::array(),
       potential = json::array(), residual = json::array();
  const PlateLayout& layout = condenser.layout();
  for (std::size_t i = 0; i < condenser.size(); ++i) {
    const Eigen::MatrixXd& x = condenser.plate(i).nodes;
    for (Index k = 0; k < x.cols(); ++k) {
      const double pot = r.potentials(layout.offsets[i] + k);
      plate_index.push_back(i);
      coords.push_back(vec_json(x.col(k)));
      weight.push_back(num(r.minimizer.weights[i](k)));
      potential.push_back(num(pot));
      residual.push_back(num(layout.signs[i] * weights.a(i) * r.capacity * pot -
                             r.constants[i] * weights.g(i)(k)));
    }
  }
  return {{"plate_index", plate_index},
          {"coords", coords},
          {"weight", weight},
          {"potential", potential},
          {"residual", residual}};
}

void require_converged(const SolveReport& r, const std::string& what) {
  if (r.converged) return;
  std::ostringstream os;
  os << what << " did not converge in " << r.iterations << " iterations (relative decrease "
     << r.relative_decrease << ", worst-case gap " << r.worst_case_gap << ")";
  throw NonconvergenceError(os.str());
}

// Closed-form or brute-force reference for the configured geometry.
std::optional<OracleResult> detect_oracle(const RunConfig& cfg, const KernelMatrix& matrix,
                                          const Condenser& condenser, const WeightSpec& weights,
                                          std::string& name) {
  const bool newton3 = std::holds_alternative<NewtonKernel>(cfg.kernel.family()) &&
                       std::get<NewtonKernel>(cfg.kernel.family()).dim == 3;
  const auto* s0 = cfg.plates.empty() ? nullptr : std::get_if<SphereShell>(&cfg.plates[0].generator);
  if (newton3 && cfg.g_constant && s0) {
    const double g = *cfg.g_constant;
    if (cfg.plates.size() == 1 && cfg.plates[0].sign == 1) {
      // Unit mass a / g on the sphere: energy scales with (a / g)^2.
      const double m = cfg.a[0] / g;
      OracleResult o = ball_capacity_oracle(s0->radius);
      o.capacity /= m * m;
      o.min_energy *= m * m;
      name = "ball_capacity";
      return o;
    }
    const auto* s1 =
        cfg.plates.size() == 2 ? std::get_if<SphereShell>(&cfg.plates[1].generator) : nullptr;
    if (s1 && cfg.plates[0].sign == 1 && cfg.plates[1].sign == -1 && cfg.a[0] == cfg.a[1] &&
        s0->center == s1->center && s0->radius < s1->radius) {
      const double m = cfg.a[0] / g;
      OracleResult o = sphere_capacitor_oracle(s0->radius, s1->radius);
      o.capacity /= m * m;
      o.min_energy *= m * m;
      name = "sphere_capacitor";
      return o;
    }
  }
  const PlateLayout& layout = condenser.layout();
  bool tiny = layout.plates() <= 2;
  for (Index s : layout.sizes) tiny = tiny && s <= 3;
  if (tiny) {
    name = "grid_search";
    return grid_search_oracle(matrix, condenser, weights, 1e-3);
  }
  return std::nullopt;
}

void write_atomic(const fs::path& path, const std::string& content) {
  const fs::path tmp = path.string() + ".tmp." + std::to_string(::getpid());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + tmp.string() + " for writing");
    out << content;
    out.flush();
    if (!out) throw IoError("failed writing " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) {
    fs::remove(tmp, ec);
    throw IoError("cannot move " + tmp.string() + " to " + path.string());
  }
}

std::string csv_number(const json& v) {
  if (v.is_null()) return "nan";
  std::ostringstream os;
  os << std::setprecision(17) << v.get<double>();
  return os.str();
}

}  // namespace

// ---------------------------------------------------------------------------

std::string to_string(Mode mode) {
  switch (mode) {
    case Mode::solve: return "solve";
    case Mode::dual: return "dual";
    case Mode::exhaust: return "exhaust";
    case Mode::oracle_compare: return "oracle-compare";
    case Mode::escape: return "escape";
  }
  return "solve";
}

Mode parse_mode(const std::string& name) {
  for (Mode m : {Mode::solve, Mode::dual, Mode::exhaust, Mode::oracle_compare, Mode::escape})
    if (to_string(m) == name) return m;
  throw ConfigError("unknown mode '" + name +
                    "' (expected solve, dual, exhaust, oracle-compare or escape)");
}

RunConfig config_from_json(const json& doc, const fs::path& base_dir) {
  RunConfig cfg;
  cfg.base_dir = base_dir;
  ObjectReader top(doc, "");
  cfg.schema_version = int(top.integer("schema_version", kSchemaVersion));
  if (cfg.schema_version != kSchemaVersion)
    config_fail("/schema_version", "unsupported schema_version " +
                                       std::to_string(cfg.schema_version));
  try {
    cfg.mode = parse_mode(top.string("mode", "solve"));
  } catch (const ConfigError& e) {
    config_fail("/mode", e.what());
  }
  cfg.kernel = read_kernel(top.raw("kernel"));

  if (top.has("diagonal_rule")) {
    ObjectReader r(top.raw("diagonal_rule"), "/diagonal_rule");
    const std::string mode = r.string("mode", "effective_radius");
    if (mode == "exact") cfg.diagonal_rule.mode = DiagonalMode::exact;
    else if (mode == "effective_radius") cfg.diagonal_rule.mode = DiagonalMode::effective_radius;
    else config_fail(r.where("mode"), "unknown diagonal rule '" + mode + "'");
    cfg.diagonal_rule.loading_cap = r.number("loading_cap", cfg.diagonal_rule.loading_cap);
    cfg.diagonal_rule.smoothing_neighbours =
        int(r.integer("smoothing_neighbours", cfg.diagonal_rule.smoothing_neighbours));
    if (cfg.diagonal_rule.smoothing_neighbours < 0)
      config_fail(r.where("smoothing_neighbours"), "must be nonnegative");
    r.finish();
  }

  const json& plates = top.raw("plates");
  if (!plates.is_array() || plates.empty())
    config_fail("/plates", "key 'plates' must be a nonempty array");
  for (std::size_t i = 0; i < plates.size(); ++i) {
    const std::string path = "/plates/" + std::to_string(i);
    ObjectReader r(plates[i], path);
    PlateConfig p;
    p.sign = int(r.integer("sign"));
    if (p.sign != 1 && p.sign != -1) config_fail(r.where("sign"), "sign must be +1 or -1");
    p.generator = read_generator(r.raw("generator"), path + "/generator");
    if (const auto* pl = std::get_if<PointList>(&p.generator))
      p.count = Index(r.integer("count", pl->points.cols()));
    else
      p.count = Index(r.integer("count"));
    if (p.count < 1) config_fail(r.where("count"), "count must be positive");
    const long long seed = r.integer("seed", 0);
    if (seed < 0) config_fail(r.where("seed"), "seed must be nonnegative");
    p.seed = std::uint64_t(seed);
    r.finish();
    cfg.plates.push_back(std::move(p));
  }

  {
    ObjectReader r(top.raw("g"), "/g");
    const bool c = r.has("constant"), t = r.has("table_file");
    if (c == t) config_fail("/g", "exactly one of 'constant' and 'table_file' is required");
    if (c) cfg.g_constant = r.number("constant");
    else cfg.g_table_file = r.string("table_file");
    r.finish();
  }

  cfg.a = top.numbers("a");
  if (cfg.a.size() != cfg.plates.size())
    config_fail("/a", "key 'a' has " + std::to_string(cfg.a.size()) + " entries but there are " +
                          std::to_string(cfg.plates.size()) + " plates");

  if (top.has("solver")) {
    ObjectReader r(top.raw("solver"), "/solver");
    cfg.solver.tol = r.number("tol", cfg.solver.tol);
    cfg.solver.max_iter = int(r.integer("max_iter", cfg.solver.max_iter));
    cfg.solver.certify_trials = int(r.integer("certify_trials", cfg.solver.certify_trials));
    const long long seed = r.integer("seed", (long long)cfg.solver.seed);
    if (seed < 0) config_fail(r.where("seed"), "seed must be nonnegative");
    cfg.solver.seed = std::uint64_t(seed);
    if (!(cfg.solver.tol > 0.0)) config_fail(r.where("tol"), "tol must be positive");
    if (cfg.solver.max_iter < 1) config_fail(r.where("max_iter"), "max_iter must be positive");
    if (cfg.solver.certify_trials < 0)
      config_fail(r.where("certify_trials"), "certify_trials must be nonnegative");
    r.finish();
  }

  if (top.has("stages") && !top.raw("stages").is_null())
    cfg.stages = read_stages(top.raw("stages"), "/stages", cfg.plates.size());
  cfg.nesting = top.string("nesting", "prefix");
  if (cfg.nesting != "prefix" && cfg.nesting != "regenerate")
    config_fail("/nesting", "nesting must be 'prefix' or 'regenerate'");
  if (top.has("reference_radius") && !top.raw("reference_radius").is_null())
    cfg.reference_radius = top.number("reference_radius");

  if (top.has("output")) {
    ObjectReader r(top.raw("output"), "/output");
    if (r.has("dir") && !r.raw("dir").is_null()) cfg.output_dir = r.string("dir");
    if (r.has("formats")) {
      const json& f = r.raw("formats");
      if (!f.is_array() || f.empty()) config_fail(r.where("formats"), "formats must be a nonempty array");
      cfg.formats.clear();
      for (const json& x : f) {
        if (!x.is_string() || (x != "json" && x != "csv"))
          config_fail(r.where("formats"), "formats may only contain \"json\" and \"csv\"");
        if (std::find(cfg.formats.begin(), cfg.formats.end(), x.get<std::string>()) ==
            cfg.formats.end())
          cfg.formats.push_back(x.get<std::string>());
      }
    }
    r.finish();
  }
  top.finish();

  if ((cfg.mode == Mode::exhaust || cfg.mode == Mode::escape) && cfg.stages.empty())
    config_fail("/stages", "mode " + to_string(cfg.mode) + " needs 'stages'");
  return cfg;
}

RunConfig load_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config file " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  return config_from_json(doc, path.parent_path());
}

json config_to_json(const RunConfig& cfg) {
  json plates = json::array();
  for (const PlateConfig& p : cfg.plates)
    plates.push_back({{"sign", p.sign},
                      {"generator", generator_json(p.generator)},
                      {"count", p.count},
                      {"seed", p.seed}});
  json g = cfg.g_constant ? json{{"constant", *cfg.g_constant}}
                          : json{{"table_file", cfg.g_table_file.value_or("")}};
  json out = {
      {"schema_version", cfg.schema_version},
      {"mode", to_string(cfg.mode)},
      {"kernel", kernel_json(cfg.kernel)},
      {"diagonal_rule",
       {{"mode", cfg.diagonal_rule.mode == DiagonalMode::exact ? "exact" : "effective_radius"},
        {"loading_cap", cfg.diagonal_rule.loading_cap},
        {"smoothing_neighbours", cfg.diagonal_rule.smoothing_neighbours}}},
      {"plates", plates},
      {"g", g},
      {"a", cfg.a},
      {"solver",
       {{"tol", cfg.solver.tol},
        {"max_iter", cfg.solver.max_iter},
        {"certify_trials", cfg.solver.certify_trials},
        {"seed", cfg.solver.seed}}},
      {"nesting", cfg.nesting},
      {"output",
       {{"dir", cfg.output_dir ? json(*cfg.output_dir) : json(nullptr)}, {"formats", cfg.formats}}}};
  out["stages"] = cfg.stages.empty() ? json(nullptr) : json(cfg.stages);
  out["reference_radius"] = cfg.reference_radius ? json(*cfg.reference_radius) : json(nullptr);
  if (out["stages"].is_null()) out.erase("stages");
  if (out["reference_radius"].is_null()) out.erase("reference_radius");
  return out;
}

std::string config_hash(const RunConfig& config) {
  json doc = config_to_json(config);
  doc.erase("output");
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : doc.dump()) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return hex64(h);
}

void apply_seed_override(RunConfig& config, std::uint64_t seed) {
  for (std::size_t i = 0; i < config.plates.size(); ++i) config.plates[i].seed = seed + i;
  config.solver.seed = seed;
}

Condenser build_condenser(const RunConfig& config) {
  std::vector<Plate> plates;
  for (const PlateConfig& p : config.plates) {
    Plate plate;
    plate.sign = p.sign;
    plate.generator = p.generator;
    plate.nodes = generate_nodes(p.generator, p.count, p.seed);
    plates.push_back(std::move(plate));
  }
  return Condenser(std::move(plates));
}

WeightSpec build_weights(const RunConfig& config, const Condenser& condenser) {
  const Eigen::VectorXd a = Eigen::Map<const Eigen::VectorXd>(config.a.data(), Index(config.a.size()));
  if (config.g_constant) return WeightSpec::constant(condenser, *config.g_constant, a);
  fs::path path = *config.g_table_file;
  if (path.is_relative()) path = config.base_dir / path;
  std::ifstream in(path);
  if (!in) throw IoError("cannot read g table " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config /g/table_file: " + path.string() + " is not valid JSON");
  }
  if (!doc.is_array() || doc.size() != condenser.size())
    throw ConfigError("config /g/table_file: expected one array of g values per plate");
  std::vector<Eigen::VectorXd> g;
  for (std::size_t i = 0; i < doc.size(); ++i) {
    if (!doc[i].is_array() || Index(doc[i].size()) != condenser.plate(i).size())
      throw ConfigError("config /g/table_file: plate " + std::to_string(i) + " needs " +
                        std::to_string(condenser.plate(i).size()) + " values");
    Eigen::VectorXd gi(condenser.plate(i).size());
    for (std::size_t k = 0; k < doc[i].size(); ++k) {
      if (!doc[i][k].is_number()) throw ConfigError("config /g/table_file: values must be numbers");
      gi(Index(k)) = doc[i][k].get<double>();
    }
    g.push_back(std::move(gi));
  }
  return WeightSpec::table(condenser, std::move(g), a);
}

// ---------------------------------------------------------------------------

namespace {

RunReport run_impl(const RunConfig& cfg) {
  const auto t_start = std::chrono::steady_clock::now();
  RunReport report;
  report.config = config_to_json(cfg);
  report.config_hash = config_hash(cfg);
  json& res = report.results;
  res = json::object();
  res["mode"] = to_string(cfg.mode);

  if (cfg.mode == Mode::exhaust || cfg.mode == Mode::escape) {
    if (!cfg.g_constant)
      throw ConfigError("config /g: exhaust and escape modes need a constant g");
    ExhaustionSchedule schedule;
    if (cfg.mode == Mode::exhaust && cfg.nesting == "regenerate") {
      for (const auto& counts : cfg.stages) {
        RunConfig stage = cfg;
        for (std::size_t i = 0; i < counts.size(); ++i) stage.plates[i].count = counts[i];
        schedule.stages.push_back(build_condenser(stage));
      }
    } else {
      Condenser full = build_condenser(cfg);
      if (cfg.mode == Mode::exhaust) full = farthest_point_reordered(full);
      schedule = prefix_schedule(full, cfg.stages);
    }
    const Condenser& last = schedule.stages.back();
    const WeightSpec weights = build_weights(cfg, last);
    res["validation"] = validation_json(validate(last, weights));

    const auto t_solve = std::chrono::steady_clock::now();
    std::vector<SolveReport> reports;
    if (cfg.mode == Mode::exhaust) {
      const ExhaustionResult ex = exhaust(cfg.kernel, cfg.diagonal_rule, schedule, weights, cfg.solver);
      json stages = json::array();
      for (std::size_t s = 0; s < ex.reports.size(); ++s) {
        const SolveReport& r = ex.reports[s];
        require_converged(r, "exhaustion stage " + std::to_string(s));
        stages.push_back({{"counts", schedule.stages[s].layout().sizes},
                          {"capacity", num(r.capacity)},
                          {"constants", nums(r.constants)},
                          {"iterations", r.iterations},
                          {"worst_case_gap", num(r.worst_case_gap)},
                          {"converged", r.converged}});
      }
      res["exhaust"] = {{"stages", stages}, {"nondecreasing", ex.nondecreasing}};
      reports = ex.reports;
    } else {
      double ref = 0.0;
      Eigen::Vector3d center = Eigen::Vector3d::Zero();
      for (const PlateConfig& p : cfg.plates)
        if (const auto* l = std::get_if<LayeredShell>(&p.generator)) {
          ref = 2.0 * l->inner_radius;
          center = l->center;
          break;
        }
      if (cfg.reference_radius) ref = *cfg.reference_radius;
      if (!(ref > 0.0))
        throw ConfigError("config /reference_radius: needed when no plate is a layered_shell");
      const EscapeReport esc =
          mass_escape_experiment(cfg.kernel, cfg.diagonal_rule, schedule, weights, ref, center,
                                 cfg.solver);
      json stages = json::array();
      for (std::size_t s = 0; s < esc.stages.size(); ++s) {
        const EscapeStage& st = esc.stages[s];
        require_converged(esc.reports[s], "escape stage " + std::to_string(s));
        stages.push_back({{"counts", schedule.stages[s].layout().sizes},
                          {"capacity", num(st.capacity)},
                          {"max_radius", num(st.max_radius)},
                          {"beyond_fraction", nums(st.beyond_fraction)},
                          {"constants", nums(st.constants)},
                          {"converged", st.converged}});
      }
      json drift = json::array();
      for (bool b : esc.drift_nondecreasing) drift.push_back(b);
      res["escape"] = {{"reference_radius", esc.reference_radius},
                       {"stages", stages},
                       {"drift_nondecreasing", drift}};
      reports = esc.reports;
    }
    json trends = json::array();
    for (const SignTrend& t : sign_property_check(reports))
      trends.push_back({{"plate", t.plate},
                        {"constants", nums(t.constants)},
                        {"nonincreasing", t.nonincreasing},
                        {"stable", t.stable},
                        {"last", num(t.last)}});
    res["sign_trends"] = trends;
    res["solve"] = solve_json(reports.back());
    res["energy_trace"] = nums(reports.back().energy_trace);
    report.nodes = node_table(last, weights, reports.back());
    report.timings = {{"solve_s", seconds_since(t_solve)}, {"total_s", seconds_since(t_start)}};
    return report;
  }

  const Condenser condenser = build_condenser(cfg);
  const WeightSpec weights = build_weights(cfg, condenser);
  res["validation"] = validation_json(validate(condenser, weights));
  const auto t_assemble = std::chrono::steady_clock::now();
  const KernelMatrix matrix = assemble_matrix(cfg.kernel, condenser, cfg.diagonal_rule);
  res["matrix"] = matrix_json(matrix);
  const auto t_solve = std::chrono::steady_clock::now();
  const SolveReport sr = solve_min_energy(matrix, condenser, weights, cfg.solver);
  const double solve_s = seconds_since(t_solve);
  require_converged(sr, "solve");
  res["solve"] = solve_json(sr);
  res["energy_trace"] = nums(sr.energy_trace);

  const CapacitaryConstants cc = capacitary_constants(sr, matrix, condenser, weights);
  res["constants"] = {{"values", nums(cc.values)},
                      {"node_minimum", nums(cc.node_minimum)},
                      {"discrepancy", num(cc.discrepancy)},
                      {"sum", num(cc.sum)}};
  const DualCertificate cert = build_dual_certificate(sr, matrix, condenser, weights);
  res["certificate"] = certificate_json(cert);

  if (cfg.mode == Mode::dual) {
    if (condenser.total_nodes() <= kDualDirectMaxNodes) {
      const DualCertificate cold =
          solve_dual_direct(matrix, condenser, weights, cert.constants, sr.capacity);
      const DualCertificate warm = solve_dual_direct(matrix, condenser, weights, cert.constants,
                                                     sr.capacity, {}, &cert.candidate);
      json d = certificate_json(cold);
      d["qp_iterations"] = cold.qp_iterations;
      d["warm_start_immediate"] = warm.qp_immediate;
      res["dual_direct"] = d;
    } else {
      res["dual_direct"] = {{"skipped", "more than " + std::to_string(kDualDirectMaxNodes) +
                                            " nodes; certificate built from the primal only"}};
    }
  }

  if (cfg.mode == Mode::oracle_compare) {
    std::string name;
    const std::optional<OracleResult> oracle = detect_oracle(cfg, matrix, condenser, weights, name);
    if (!oracle)
      throw ConfigError("config: no oracle covers this geometry (need concentric Newton spheres, "
                        "a single Newton sphere, or at most 2 plates of at most 3 nodes)");
    double cerr = 0.0;
    for (std::size_t i = 0; i < oracle->constants.size() && i < sr.constants.size(); ++i)
      cerr = std::max(cerr, std::abs(oracle->constants[i] - sr.constants[i]));
    res["oracle"] = {{"name", name},
                     {"capacity", num(oracle->capacity)},
                     {"min_energy", num(oracle->min_energy)},
                     {"constants", nums(oracle->constants)},
                     {"distribution_descriptor", oracle->distribution_descriptor},
                     {"provenance", oracle->provenance},
                     {"capacity_relative_error",
                      num(std::abs(sr.capacity - oracle->capacity) / oracle->capacity)},
                     {"min_energy_abs_error", num(std::abs(sr.min_energy - oracle->min_energy))},
                     {"constants_max_abs_error", num(cerr)}};
  }

  report.nodes = node_table(condenser, weights, sr);
  report.timings = {{"assemble_s", std::chrono::duration<double>(t_solve - t_assemble).count()},
                    {"solve_s", solve_s},
                    {"total_s", seconds_since(t_start)}};
  return report;
}

}  // namespace

RunReport run(const RunConfig& config) {
  try {
    return run_impl(config);
  } catch (const Error& e) {
    rethrow_with_context(e, "mode " + to_string(config.mode));
  }
}

json report_to_json(const RunReport& r) {
  return {{"tool_version", r.tool_version},
          {"schema_version", kSchemaVersion},
          {"config_hash", r.config_hash},
          {"config", r.config},
          {"results", r.results},
          {"timings", r.timings},
          {"nodes", r.nodes}};
}

RunReport report_from_json(const json& doc) {
  try {
    RunReport r;
    r.tool_version = doc.at("tool_version").get<std::string>();
    r.config_hash = doc.at("config_hash").get<std::string>();
    r.config = doc.at("config");
    r.results = doc.at("results");
    r.timings = doc.at("timings");
    r.nodes = doc.at("nodes");
    return r;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed report: ") + e.what());
  }
}

ExportedFiles export_report(const RunReport& report, const std::vector<std::string>& formats,
                            const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw IoError("cannot create output directory " + dir.string());
  const std::string stem = report.results.value("mode", std::string("run")) + "_" + report.config_hash;
  ExportedFiles out;
  for (const std::string& f : formats) {
    if (f == "json") {
      const fs::path p = dir / (stem + ".json");
      write_atomic(p, report_to_json(report).dump(2) + "\n");
      out.paths.push_back(p);
    } else if (f == "csv") {
      const json& n = report.nodes;
      std::ostringstream os;
      const std::size_t rows = n.is_object() ? n.at("plate_index").size() : 0;
      const std::size_t dim = rows ? n.at("coords").at(0).size() : 0;
      os << "plate_index";
      const char* names[] = {"x", "y", "z"};
      for (std::size_t d = 0; d < dim; ++d)
        os << "," << (dim <= 3 ? std::string(names[d]) : "x" + std::to_string(d));
      os << ",weight,potential,residual\n";
      for (std::size_t k = 0; k < rows; ++k) {
        os << n["plate_index"][k].get<int>();
        for (std::size_t d = 0; d < dim; ++d) os << "," << csv_number(n["coords"][k][d]);
        os << "," << csv_number(n["weight"][k]) << "," << csv_number(n["potential"][k]) << ","
           << csv_number(n["residual"][k]) << "\n";
      }
      const fs::path p = dir / (stem + "_nodes.csv");
      write_atomic(p, os.str());
      out.paths.push_back(p);

      std::ostringstream tr;
      tr << "iteration,energy\n";
      if (report.results.contains("energy_trace")) {
        const json& t = report.results["energy_trace"];
        for (std::size_t k = 0; k < t.size(); ++k) tr << k << "," << csv_number(t[k]) << "\n";
      }
      const fs::path pt = dir / (stem + "_trace.csv");
      write_atomic(pt, tr.str());
      out.paths.push_back(pt);
    } else {
      throw ConfigError("unknown output format '" + f + "'");
    }
  }
  return out;
}

fs::path resolve_output_dir(const RunConfig& config, const std::optional<std::string>& override_dir) {
  if (override_dir) return *override_dir;
  if (config.output_dir) {
    fs::path p = *config.output_dir;
    return p.is_relative() ? config.base_dir / p : p;
  }
  if (const char* env = std::getenv(kOutDirEnv); env && *env) return env;
  return ".";
}

}  // namespace condcap
