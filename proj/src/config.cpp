#include "config.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

#include "errors.hpp"

namespace sofrcev::config {

namespace {

std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  std::size_t e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, sep)) out.push_back(trim(item));
  if (!s.empty() && s.back() == sep) out.push_back("");
  return out;
}

double parse_double(const std::string& where, const std::string& v) {
  try {
    std::size_t used = 0;
    double d = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ConfigError(where + ": expected a number, got '" + v + "'");
  }
}

long parse_int(const std::string& where, const std::string& v) {
  try {
    std::size_t used = 0;
    long i = std::stol(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return i;
  } catch (const std::exception&) {
    throw ConfigError(where + ": expected an integer, got '" + v + "'");
  }
}

bool parse_bool(const std::string& where, const std::string& v) {
  std::string s = lower(v);
  if (s == "true" || s == "yes" || s == "on" || s == "1") return true;
  if (s == "false" || s == "no" || s == "off" || s == "0") return false;
  throw ConfigError(where + ": expected a boolean, got '" + v + "'");
}

std::vector<double> parse_list(const std::string& where, const std::string& v) {
  std::vector<double> out;
  for (const std::string& item : split(v, ','))
    if (!item.empty()) out.push_back(parse_double(where, item));
  if (out.empty()) throw ConfigError(where + ": expected a non-empty list");
  return out;
}

asian::KillingForm parse_killing(const std::string& where, const std::string& v) {
  std::string s = lower(v);
  if (s == "full") return asian::KillingForm::full;
  if (s == "rate_only" || s == "rate-only") return asian::KillingForm::rate_only;
  if (s == "off" || s == "none") return asian::KillingForm::off;
  throw ConfigError(where + ": expected full, rate_only, or off, got '" + v + "'");
}

}  // namespace

RunConfig default_config() {
  RunConfig cfg;
  cfg.model.beta = -1.0;
  cfg.model.alpha = term::ParamCurve(-0.1);
  cfg.model.sigma = term::ParamCurve(20.0);
  cfg.model.rbar_star = term::ParamCurve(-0.01);
  cfg.model.horizon = 1.0;
  cfg.contract.strike = 100.0;
  cfg.contract.t0 = 0.0;
  cfg.contract.expiry = 0.25;
  cfg.contract.y_spot = 100.0;
  cfg.contract.style = asian::ExerciseStyle::american;
  return cfg;
}

term::ParamCurve parse_curve(const std::string& text) {
  std::string body = trim(text);
  bool linear = false;
  if (lower(body).rfind("linear", 0) == 0) {
    linear = true;
    body = trim(body.substr(6));
  }
  if (body.find(':') == std::string::npos) {
    if (linear) throw ConfigError("curve: linear form needs 't:v' knot pairs");
    return term::ParamCurve(parse_double("curve", body));
  }
  std::vector<double> knots, values;
  for (const std::string& pair : split(body, ',')) {
    if (pair.empty()) continue;
    auto parts = split(pair, ':');
    if (parts.size() != 2) throw ConfigError("curve: malformed knot pair '" + pair + "'");
    knots.push_back(parse_double("curve knot", parts[0]));
    values.push_back(parse_double("curve value", parts[1]));
  }
  if (knots.empty()) throw ConfigError("curve: no knot pairs given");
  if (knots.size() == 1) return term::ParamCurve(values[0]);
  if (linear) return term::ParamCurve::piecewise_linear(knots, values);
  // Constant-from-breakpoint segments: pad a terminal knot so the last value
  // extends; evaluation and integration clamp beyond it.
  knots.push_back(knots.back() + 1.0);
  return term::ParamCurve::piecewise_constant(knots, values);
}

RunConfig parse_config(const std::string& text) {
  RunConfig cfg = default_config();
  std::istringstream in(text);
  std::string line, section;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::size_t cut = line.find_first_of("#;");
    if (cut != std::string::npos) line = line.substr(0, cut);
    line = trim(line);
    if (line.empty()) continue;
    std::string where = "config line " + std::to_string(lineno);
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(where + ": unterminated section header");
      section = lower(trim(line.substr(1, line.size() - 2)));
      if (section != "model" && section != "contract" && section != "grid" &&
          section != "scheme" && section != "output" && section != "oracle")
        throw ConfigError(where + ": unknown section [" + section + "]");
      continue;
    }
    std::size_t eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(where + ": expected key = value");
    std::string key = lower(trim(line.substr(0, eq)));
    std::string val = trim(line.substr(eq + 1));
    if (section.empty()) throw ConfigError(where + ": key before any [section]");
    if (val.empty()) throw ConfigError(where + ": empty value for '" + key + "'");
    where += " [" + section + "] " + key;

    if (section == "model") {
      if (key == "beta") cfg.model.beta = parse_double(where, val);
      else if (key == "alpha") cfg.model.alpha = parse_curve(val);
      else if (key == "sigma") cfg.model.sigma = parse_curve(val);
      else if (key == "rbar_star") cfg.model.rbar_star = parse_curve(val);
      else if (key == "horizon") cfg.model.horizon = parse_double(where, val);
      else if (key == "discounting") {
        cfg.scheme.killing = parse_killing(where, val);
        cfg.model.discounting_enabled = cfg.scheme.killing != asian::KillingForm::off;
      } else throw ConfigError(where + ": unknown key");
    } else if (section == "contract") {
      if (key == "style") {
        std::string s = lower(val);
        if (s == "american") cfg.contract.style = asian::ExerciseStyle::american;
        else if (s == "european") cfg.contract.style = asian::ExerciseStyle::european;
        else throw ConfigError(where + ": expected american or european");
      } else if (key == "strikes") cfg.strikes = parse_list(where, val);
      else if (key == "expiry") cfg.contract.expiry = parse_double(where, val);
      else if (key == "t0") cfg.contract.t0 = parse_double(where, val);
      else if (key == "y_spot") cfg.contract.y_spot = parse_double(where, val);
      else if (key == "tenor") cfg.tenor = parse_double(where, val);
      else if (key == "q_maturity") cfg.q_maturity = parse_double(where, val);
      else throw ConfigError(where + ": unknown key");
    } else if (section == "grid") {
      if (key == "time_steps") cfg.grid.time_steps = static_cast<int>(parse_int(where, val));
      else if (key == "x_nodes") cfg.grid.x_nodes = static_cast<int>(parse_int(where, val));
      else if (key == "z_nodes") cfg.grid.z_nodes = static_cast<int>(parse_int(where, val));
      else if (key == "x_max") cfg.grid.x_max = parse_double(where, val);
      else if (key == "z_top") cfg.grid.z_top = parse_double(where, val);
      else if (key == "cluster_focus_strength")
        cfg.grid.cluster_focus_strength = parse_double(where, val);
      else if (key == "cluster_lower_strength")
        cfg.grid.cluster_lower_strength = parse_double(where, val);
      else throw ConfigError(where + ": unknown key");
    } else if (section == "scheme") {
      if (key == "killing") cfg.scheme.killing = parse_killing(where, val);
      else if (key == "weighted_source_kernel")
        cfg.scheme.weighted_source_kernel = parse_bool(where, val);
      else if (key == "consistent_lambda") cfg.scheme.consistent_lambda = parse_bool(where, val);
      else if (key == "extrapolate_boundary_at_t0")
        cfg.scheme.extrapolate_boundary_at_t0 = parse_bool(where, val);
      else if (key == "stable_z_sweep") cfg.scheme.stable_z_sweep = parse_bool(where, val);
      else throw ConfigError(where + ": unknown key");
    } else if (section == "output") {
      if (key == "directory") cfg.output_directory = val;
      else if (key == "formats") cfg.output_formats = lower(val);
      else throw ConfigError(where + ": unknown key");
    } else if (section == "oracle") {
      if (key == "enabled") {
        cfg.oracle.fd = cfg.oracle.mc = cfg.oracle.iterative = cfg.oracle.zcb = false;
        for (const std::string& item : split(lower(val), ',')) {
          if (item == "fd") cfg.oracle.fd = true;
          else if (item == "mc") cfg.oracle.mc = true;
          else if (item == "iterative") cfg.oracle.iterative = true;
          else if (item == "zcb") cfg.oracle.zcb = true;
          else if (item.empty()) continue;
          else throw ConfigError(where + ": unknown oracle '" + item + "'");
        }
      } else if (key == "mc_paths")
        cfg.oracle.mc_paths = static_cast<std::uint64_t>(parse_int(where, val));
      else if (key == "mc_steps") cfg.oracle.mc_steps = static_cast<int>(parse_int(where, val));
      else if (key == "seed") cfg.oracle.seed = static_cast<std::uint64_t>(parse_int(where, val));
      else if (key == "fd_y_nodes") cfg.oracle.fd_y_nodes = static_cast<int>(parse_int(where, val));
      else if (key == "fd_z_nodes") cfg.oracle.fd_z_nodes = static_cast<int>(parse_int(where, val));
      else if (key == "iter_time_steps")
        cfg.oracle.iter_time_steps = static_cast<int>(parse_int(where, val));
      else if (key == "iter_x_nodes")
        cfg.oracle.iter_x_nodes = static_cast<int>(parse_int(where, val));
      else if (key == "iter_z_nodes")
        cfg.oracle.iter_z_nodes = static_cast<int>(parse_int(where, val));
      else throw ConfigError(where + ": unknown key");
    }
  }
  if (cfg.strikes.empty()) throw ConfigError("config: strike list is empty");
  for (double k : cfg.strikes)
    if (!(k > 0.0)) throw ConfigError("config: strikes must be positive");
  return cfg;
}

RunConfig load_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("config: cannot open '" + path + "'");
  std::stringstream buf;
  buf << f.rdbuf();
  return parse_config(buf.str());
}

}  // namespace sofrcev::config
