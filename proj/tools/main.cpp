#include <algorithm>
#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <future>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "sofrcev.h"

namespace fs = std::filesystem;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitNumerical = 3;
constexpr int kExitValidateFail = 1;

// Shortest round-trip formatting keeps output exact and bit-reproducible.
std::string fmt(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

std::string fmt_strike(double k) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6g", k);
  return buf;
}

int report_status(int status) {
  if (status == SOFRCEV_ERR_CONFIG)
    std::cerr << "sofrcev: config error: " << sofrcev_last_error() << "\n";
  else if (status != SOFRCEV_OK)
    std::cerr << "sofrcev: numerical error: " << sofrcev_last_error() << "\n";
  return status == SOFRCEV_ERR_CONFIG ? kExitConfig : kExitNumerical;
}

struct RunDeleter {
  void operator()(sofrcev_run* r) const { sofrcev_run_free(r); }
};
using RunPtr = std::unique_ptr<sofrcev_run, RunDeleter>;

struct Override {
  std::string section, key, value;
};

// Flags override config scalars by appending to the config text; the parser
// applies keys in order, so later assignments win.
struct RunOptions {
  std::string config_path;
  std::vector<Override> overrides;

  RunPtr load(int& exit_code) const {
    std::ifstream in(config_path, std::ios::binary);
    if (!in) {
      std::cerr << "sofrcev: config error: cannot open config file '" << config_path << "'\n";
      exit_code = kExitConfig;
      return nullptr;
    }
    std::ostringstream text;
    text << in.rdbuf();
    for (const auto& o : overrides)
      text << "\n[" << o.section << "]\n" << o.key << " = " << o.value << "\n";
    RunPtr run(sofrcev_run_from_text(text.str().c_str()));
    if (!run) {
      exit_code = report_status(SOFRCEV_ERR_CONFIG);
      return nullptr;
    }
    exit_code = 0;
    return run;
  }
};

void add_run_options(CLI::App* cmd, RunOptions& opts) {
  cmd->add_option("--config", opts.config_path, "Run configuration file")->required();
}

void add_override(CLI::App* cmd, RunOptions& opts, const std::string& flag,
                  const std::string& section, const std::string& key, const std::string& help) {
  cmd->add_option_function<std::string>(
         flag,
         [&opts, section, key](const std::string& v) {
           opts.overrides.push_back({section, key, v});
         },
         help)
      ->expected(1);
}

void add_solver_overrides(CLI::App* cmd, RunOptions& opts, std::vector<double>& strikes,
                          std::string& out_dir) {
  cmd->add_option("--strike", strikes, "Restrict the run to these strikes");
  cmd->add_option("--output", out_dir, "Output directory (overrides config)");
  add_override(cmd, opts, "--time-steps", "grid", "time_steps", "Time levels");
  add_override(cmd, opts, "--x-nodes", "grid", "x_nodes", "Spatial nodes");
  add_override(cmd, opts, "--z-nodes", "grid", "z_nodes", "Averaging nodes");
  add_override(cmd, opts, "--expiry", "contract", "expiry", "Option expiry");
  add_override(cmd, opts, "--y-spot", "contract", "y_spot", "Spot deviation y");
  add_override(cmd, opts, "--style", "contract", "style", "Exercise style (american|european)");
  add_override(cmd, opts, "--discounting", "model", "discounting",
               "Discounting form (full|rate_only|off)");
}

int write_atomic(const fs::path& path, const std::string& content) {
  std::error_code ec;
  if (path.has_parent_path()) fs::create_directories(path.parent_path(), ec);
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    out << content;
    if (!out) {
      std::cerr << "sofrcev: config error: cannot write '" << tmp.string() << "'\n";
      return kExitConfig;
    }
  }
  fs::rename(tmp, path, ec);
  if (ec) {
    std::cerr << "sofrcev: config error: cannot move output into place: " << ec.message()
              << "\n";
    return kExitConfig;
  }
  std::cout << "wrote " << path.string() << "\n";
  return 0;
}

struct SolvedStrike {
  double strike = 0.0;
  RunPtr run;
  int status = SOFRCEV_OK;
  std::string error;
};

// Solves the configured strikes in parallel, one engine per strike; CSV
// emission stays on the caller's thread so each file has a single writer.
int solve_strikes(const RunOptions& opts, const std::vector<double>& strike_filter,
                  std::vector<SolvedStrike>& out, std::string& out_dir) {
  int rc = 0;
  RunPtr probe = opts.load(rc);
  if (!probe) return rc;
  std::vector<double> strikes = strike_filter;
  if (strikes.empty()) {
    size_t n = 0;
    sofrcev_strike_count(probe.get(), &n);
    strikes.resize(n);
    for (size_t i = 0; i < n; ++i) sofrcev_strike(probe.get(), i, &strikes[i]);
  }
  if (out_dir.empty()) {
    const char* dir = nullptr;
    sofrcev_output_directory(probe.get(), &dir);
    out_dir = dir;
  }

  out.clear();
  out.resize(strikes.size());
  int load_rc = 0;
  for (size_t i = 0; i < strikes.size(); ++i) {
    out[i].strike = strikes[i];
    out[i].run = (i == 0) ? std::move(probe) : opts.load(load_rc);
    if (!out[i].run) return load_rc;
  }

  std::vector<std::future<void>> jobs;
  jobs.reserve(out.size());
  for (auto& s : out)
    jobs.push_back(std::async(std::launch::async, [&s] {
      s.status = sofrcev_solve(s.run.get(), s.strike);
      if (s.status != SOFRCEV_OK) s.error = sofrcev_last_error();
    }));
  for (auto& j : jobs) j.wait();

  for (const auto& s : out)
    if (s.status != SOFRCEV_OK) {
      const char* kind = s.status == SOFRCEV_ERR_CONFIG ? "config" : "numerical";
      std::cerr << "sofrcev: " << kind << " error: strike " << fmt_strike(s.strike) << ": "
                << s.error << "\n";
      return s.status == SOFRCEV_ERR_CONFIG ? kExitConfig : kExitNumerical;
    }
  return 0;
}

std::string boundary_rows_csv(const sofrcev_run* run, const char* prefix) {
  size_t rows = 0;
  sofrcev_boundary_rows(run, &rows);
  std::string text;
  for (size_t r = 0; r < rows; ++r) {
    double t, y, zb, psi;
    sofrcev_boundary_row(run, r, &t, &y, &zb, &psi);
    text += prefix;
    text += fmt(t) + "," + fmt(y) + "," + fmt(zb) + "," + fmt(psi) + "\n";
  }
  return text;
}

std::string price_rows_csv(const sofrcev_run* run, double strike) {
  size_t rows = 0;
  sofrcev_price_rows(run, &rows);
  std::string text;
  const std::string k = fmt(strike);
  for (size_t r = 0; r < rows; ++r) {
    double t, y, z, price, dz;
    sofrcev_price_row(run, r, &t, &y, &z, &price, &dz);
    text += fmt(t) + "," + k + "," + fmt(y) + "," + fmt(z) + "," + fmt(price) + "," + fmt(dz) +
            "\n";
  }
  return text;
}

int cmd_boundary(const RunOptions& opts, const std::vector<double>& strikes,
                 std::string out_dir) {
  std::vector<SolvedStrike> solved;
  if (int rc = solve_strikes(opts, strikes, solved, out_dir)) return rc;
  const std::string header = "t,y,z_B,psi_at_boundary\n";
  std::string combined = "# sofrcev csv schema: boundary-combined v1\nK," + header;
  for (const auto& s : solved) {
    std::string body = boundary_rows_csv(s.run.get(), "");
    std::string text = "# sofrcev csv schema: boundary v1\n" + header + body;
    fs::path path = fs::path(out_dir) / ("boundary_K" + fmt_strike(s.strike) + ".csv");
    if (int rc = write_atomic(path, text)) return rc;
    combined += boundary_rows_csv(s.run.get(), (fmt(s.strike) + ",").c_str());
  }
  return write_atomic(fs::path(out_dir) / "boundary.csv", combined);
}

int cmd_price(const RunOptions& opts, const std::vector<double>& strikes, std::string out_dir) {
  std::vector<SolvedStrike> solved;
  if (int rc = solve_strikes(opts, strikes, solved, out_dir)) return rc;
  const std::string header = "t,K,y,z,price,delta_z\n";
  std::string combined = "# sofrcev csv schema: price v1\n" + header;
  for (const auto& s : solved) {
    std::string body = price_rows_csv(s.run.get(), s.strike);
    std::string text = "# sofrcev csv schema: price v1\n" + header + body;
    fs::path path = fs::path(out_dir) / ("price_K" + fmt_strike(s.strike) + ".csv");
    if (int rc = write_atomic(path, text)) return rc;
    combined += body;
  }
  return write_atomic(fs::path(out_dir) / "price.csv", combined);
}

int parse_rate_path(const std::string& path, std::vector<double>& accruals,
                    std::vector<double>& rates, double basis) {
  std::ifstream in(path);
  if (!in) {
    std::cerr << "sofrcev: config error: cannot open rate path file '" << path << "'\n";
    return kExitConfig;
  }
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::string trimmed = line;
    trimmed.erase(0, trimmed.find_first_not_of(" \t"));
    if (trimmed.empty() || trimmed[0] == '#') continue;
    std::vector<std::string> cells;
    std::stringstream ss(trimmed);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() < 3) {
      std::cerr << "sofrcev: config error: rate path line " << lineno
                << ": expected columns date,rate,accrual_days\n";
      return kExitConfig;
    }
    char* end = nullptr;
    double rate = std::strtod(cells[1].c_str(), &end);
    if (end == cells[1].c_str()) {
      if (lineno == 1) continue;  // header row
      std::cerr << "sofrcev: config error: rate path line " << lineno << ": bad rate '"
                << cells[1] << "'\n";
      return kExitConfig;
    }
    double days = std::strtod(cells[2].c_str(), &end);
    if (end == cells[2].c_str() || days <= 0.0) {
      std::cerr << "sofrcev: config error: rate path line " << lineno << ": bad accrual days '"
                << cells[2] << "'\n";
      return kExitConfig;
    }
    rates.push_back(rate);
    accruals.push_back(days / basis);
  }
  if (rates.empty()) {
    std::cerr << "sofrcev: config error: rate path file '" << path << "' has no data rows\n";
    return kExitConfig;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "Pricing engine for options on SOFR futures under a time-dependent CEV short-rate "
      "model"};
  app.require_subcommand(1);

  // theta
  double th_nu = 0.5, th_tau = 0.5, th_v = 1.2, th_w = 1.1, th_a = 1.0;
  CLI::App* theta = app.add_subcommand("theta", "Evaluate the heat-kernel Theta function");
  theta->add_option("--nu", th_nu, "Order")->required();
  theta->add_option("--tau", th_tau, "Diffusion time")->required();
  theta->add_option("--v", th_v, "First spatial argument")->required();
  theta->add_option("--w", th_w, "Second spatial argument")->required();
  theta->add_option("--a", th_a, "Domain edge")->required();

  // boundary / price
  RunOptions bd_opts, pr_opts;
  std::vector<double> bd_strikes, pr_strikes;
  std::string bd_out, pr_out;
  CLI::App* boundary =
      app.add_subcommand("boundary", "Solve and emit the exercise boundary and gradient CSV");
  add_run_options(boundary, bd_opts);
  add_solver_overrides(boundary, bd_opts, bd_strikes, bd_out);
  CLI::App* price = app.add_subcommand("price", "Solve and emit the price surface CSV");
  add_run_options(price, pr_opts);
  add_solver_overrides(price, pr_opts, pr_strikes, pr_out);

  // zcb / forward
  RunOptions zcb_opts, fwd_opts;
  double zcb_t = 0.0, zcb_y = 0.0, zcb_mat = 0.0;
  bool zcb_t_set = false, zcb_y_set = false, zcb_mat_set = false;
  CLI::App* zcb = app.add_subcommand("zcb", "Zero-coupon bond price");
  add_run_options(zcb, zcb_opts);
  zcb->add_option("--t", zcb_t, "Valuation time (default: contract t0)")
      ->each([&](const std::string&) { zcb_t_set = true; });
  zcb->add_option("--y", zcb_y, "Rate deviation y (default: contract y_spot)")
      ->each([&](const std::string&) { zcb_y_set = true; });
  zcb->add_option("--maturity", zcb_mat, "Bond maturity (default: contract q_maturity)")
      ->each([&](const std::string&) { zcb_mat_set = true; });
  double fwd_t = 0.0, fwd_y = 0.0, fwd_mat = 0.0;
  bool fwd_t_set = false, fwd_y_set = false, fwd_mat_set = false;
  CLI::App* forward = app.add_subcommand("forward", "Instantaneous forward rate");
  add_run_options(forward, fwd_opts);
  forward->add_option("--t", fwd_t, "Valuation time (default: contract t0)")
      ->each([&](const std::string&) { fwd_t_set = true; });
  forward->add_option("--y", fwd_y, "Rate deviation y (default: contract y_spot)")
      ->each([&](const std::string&) { fwd_y_set = true; });
  forward->add_option("--maturity", fwd_mat, "Maturity (default: contract q_maturity)")
      ->each([&](const std::string&) { fwd_mat_set = true; });

  // price-forward-put / price-1m
  RunOptions fp_opts, om_opts;
  double fp_strike = 0.02, om_strike = 0.02;
  CLI::App* fput = app.add_subcommand("price-forward-put", "American put on the forward rate");
  add_run_options(fput, fp_opts);
  fput->add_option("--strike", fp_strike, "Strike on the forward rate");
  CLI::App* onem = app.add_subcommand("price-1m", "Put on the 1M futures rate");
  add_run_options(onem, om_opts);
  onem->add_option("--strike", om_strike, "Strike on the 1M rate");

  // rate-3m
  std::string r3_path;
  double r3_basis = 360.0;
  CLI::App* r3 = app.add_subcommand("rate-3m", "Compounded 3M rate from a daily rate path");
  r3->add_option("--path", r3_path, "CSV path with columns date,rate,accrual_days")
      ->required();
  r3->add_option("--basis", r3_basis, "Day-count basis (default 360)");

  // validate
  RunOptions val_opts;
  std::string val_out;
  CLI::App* validate =
      app.add_subcommand("validate", "Run the oracle and invariant suite, emit a JSON report");
  add_run_options(validate, val_opts);
  validate->add_option("--output", val_out, "Write the JSON report to this file");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? 0 : kExitConfig;
  }

  if (theta->parsed()) {
    double value = 0.0;
    if (int st = sofrcev_theta(th_nu, th_tau, th_v, th_w, th_a, &value))
      return report_status(st);
    std::cout << fmt(value) << "\n";
    return 0;
  }
  if (boundary->parsed()) return cmd_boundary(bd_opts, bd_strikes, bd_out);
  if (price->parsed()) return cmd_price(pr_opts, pr_strikes, pr_out);

  if (zcb->parsed() || forward->parsed()) {
    const bool is_zcb = zcb->parsed();
    const RunOptions& opts = is_zcb ? zcb_opts : fwd_opts;
    int rc = 0;
    RunPtr run = opts.load(rc);
    if (!run) return rc;
    double t0 = 0, expiry = 0, y_spot = 0, tenor = 0, q_mat = 0;
    sofrcev_contract(run.get(), &t0, &expiry, &y_spot, &tenor, &q_mat);
    double t = is_zcb ? (zcb_t_set ? zcb_t : t0) : (fwd_t_set ? fwd_t : t0);
    double y = is_zcb ? (zcb_y_set ? zcb_y : y_spot) : (fwd_y_set ? fwd_y : y_spot);
    double mat = is_zcb ? (zcb_mat_set ? zcb_mat : q_mat) : (fwd_mat_set ? fwd_mat : q_mat);
    double value = 0.0;
    int st = is_zcb ? sofrcev_zcb_price(run.get(), t, y, mat, &value)
                    : sofrcev_forward_rate(run.get(), t, y, mat, &value);
    if (st) return report_status(st);
    std::cout << fmt(value) << "\n";
    return 0;
  }

  if (fput->parsed() || onem->parsed()) {
    const bool is_fput = fput->parsed();
    const RunOptions& opts = is_fput ? fp_opts : om_opts;
    int rc = 0;
    RunPtr run = opts.load(rc);
    if (!run) return rc;
    double value = 0.0;
    int st = is_fput ? sofrcev_forward_put_price(run.get(), fp_strike, &value)
                     : sofrcev_one_month_put_price(run.get(), om_strike, &value);
    if (st) return report_status(st);
    std::cout << fmt(value) << "\n";
    return 0;
  }

  if (r3->parsed()) {
    std::vector<double> accruals, rates;
    if (int rc = parse_rate_path(r3_path, accruals, rates, r3_basis)) return rc;
    double disc = 0.0, cont = 0.0;
    if (int st = sofrcev_rate_3m(accruals.data(), rates.data(), rates.size(), &disc, &cont))
      return report_status(st);
    std::cout << "discrete_rate " << fmt(disc) << "\n";
    std::cout << "continuous_rate " << fmt(cont) << "\n";
    std::cout << "difference " << fmt(std::abs(disc - cont)) << "\n";
    return 0;
  }

  if (validate->parsed()) {
    int rc = 0;
    RunPtr run = val_opts.load(rc);
    if (!run) return rc;
    char* report = nullptr;
    int pass = 0;
    if (int st = sofrcev_validate_json(run.get(), &report, &pass)) return report_status(st);
    std::string text = report;
    sofrcev_string_free(report);
    if (val_out.empty())
      std::cout << text;
    else if (int wrc = write_atomic(val_out, text))
      return wrc;
    return pass ? 0 : kExitValidateFail;
  }

  return kExitConfig;
}
