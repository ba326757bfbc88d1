#include "sofrcev.h"

#include <cmath>
#include <cstdlib>
#include <cstring>
#include <memory>
#include <string>
#include <vector>

#include "asian_engine.hpp"
#include "bond_forward.hpp"
#include "config.hpp"
#include "errors.hpp"
#include "futures_composer.hpp"
#include "interp.hpp"
#include "validation.hpp"
#include "weber_orr.hpp"

namespace {

thread_local std::string g_last_error;

template <class Fn>
int guarded(Fn&& fn) {
  try {
    fn();
    return SOFRCEV_OK;
  } catch (const sofrcev::ConfigError& e) {
    g_last_error = e.what();
    return SOFRCEV_ERR_CONFIG;
  } catch (const sofrcev::NumericalError& e) {
    g_last_error = e.what();
    return SOFRCEV_ERR_NUMERICAL;
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return SOFRCEV_ERR_NUMERICAL;
  }
}

int bad_args(const char* what) {
  g_last_error = what;
  return SOFRCEV_ERR_CONFIG;
}

struct BoundaryRow {
  double t, y, z_b, psi;
};
struct PriceRow {
  double t, y, z, price, delta_z;
};

}  // namespace

struct sofrcev_run {
  sofrcev::config::RunConfig cfg;
  std::unique_ptr<sofrcev::asian::AsianEngine> engine;
  std::vector<BoundaryRow> boundary;
  std::vector<PriceRow> price;
};

extern "C" {

const char* sofrcev_last_error(void) { return g_last_error.c_str(); }

sofrcev_run* sofrcev_run_from_file(const char* path) {
  if (!path) {
    bad_args("path is null");
    return nullptr;
  }
  auto run = std::make_unique<sofrcev_run>();
  if (guarded([&] { run->cfg = sofrcev::config::load_config(path); }) != SOFRCEV_OK)
    return nullptr;
  return run.release();
}

sofrcev_run* sofrcev_run_from_text(const char* text) {
  if (!text) {
    bad_args("text is null");
    return nullptr;
  }
  auto run = std::make_unique<sofrcev_run>();
  if (guarded([&] { run->cfg = sofrcev::config::parse_config(text); }) != SOFRCEV_OK)
    return nullptr;
  return run.release();
}

void sofrcev_run_free(sofrcev_run* run) { delete run; }

int sofrcev_strike_count(const sofrcev_run* run, size_t* count) {
  if (!run || !count) return bad_args("null argument");
  *count = run->cfg.strikes.size();
  return SOFRCEV_OK;
}

int sofrcev_strike(const sofrcev_run* run, size_t index, double* strike) {
  if (!run || !strike) return bad_args("null argument");
  if (index >= run->cfg.strikes.size()) return bad_args("strike index out of range");
  *strike = run->cfg.strikes[index];
  return SOFRCEV_OK;
}

int sofrcev_output_directory(const sofrcev_run* run, const char** directory) {
  if (!run || !directory) return bad_args("null argument");
  *directory = run->cfg.output_directory.c_str();
  return SOFRCEV_OK;
}

int sofrcev_contract(const sofrcev_run* run, double* t0, double* expiry, double* y_spot,
                     double* tenor, double* q_maturity) {
  if (!run || !t0 || !expiry || !y_spot || !tenor || !q_maturity)
    return bad_args("null argument");
  *t0 = run->cfg.contract.t0;
  *expiry = run->cfg.contract.expiry;
  *y_spot = run->cfg.contract.y_spot;
  *tenor = run->cfg.tenor;
  *q_maturity = run->cfg.q_maturity;
  return SOFRCEV_OK;
}

int sofrcev_solve(sofrcev_run* run, double strike) {
  if (!run) return bad_args("run is null");
  return guarded([&] {
    sofrcev::asian::Instrument inst = run->cfg.contract;
    inst.strike = strike;
    auto engine = std::make_unique<sofrcev::asian::AsianEngine>(run->cfg.model, inst,
                                                                run->cfg.grid, run->cfg.scheme);
    engine->solve();

    const auto& bnd = engine->boundary();
    const auto& cube = engine->cube();
    const auto& cache = engine->cache();
    std::vector<BoundaryRow> brows;
    std::vector<PriceRow> prows;
    const std::size_t levels = bnd.t.size();
    for (std::size_t i = 0; i < levels; ++i) {
      double t = bnd.t[i];
      for (std::size_t j = 0; j < bnd.x[i].size(); ++j)
        brows.push_back({t, cache.y_of_x(bnd.x[i][j], t), bnd.z_b[i][j], bnd.psi_b[i][j]});
    }
    // Price rows follow the spot state line, which is a single x level in the
    // transformed coordinates.
    double x_spot = cache.x_of_y(inst.y_spot, inst.t0);
    for (std::size_t i = 0; i < levels; ++i) {
      double t = bnd.t[i];
      double y_line = cache.y_of_x(x_spot, t);
      sofrcev::interp::MonotoneCubic zb_x(bnd.x[i], bnd.z_b[i]);
      double zbx = zb_x(x_spot);
      std::vector<double> col(bnd.x[i].size());
      for (std::size_t q = 0; q < cube.z.size(); ++q) {
        double z = cube.z[q];
        for (std::size_t j = 0; j < col.size(); ++j) col[j] = cube.u_bar[i][j][q];
        sofrcev::interp::MonotoneCubic ub_x(bnd.x[i], col);
        for (std::size_t j = 0; j < col.size(); ++j) col[j] = cube.u_bar_z[i][j][q];
        sofrcev::interp::MonotoneCubic ubz_x(bnd.x[i], col);
        bool stopped = inst.style == sofrcev::asian::ExerciseStyle::american && z <= zbx;
        double pr = stopped ? inst.strike - z : ub_x(x_spot) + (inst.strike - zbx);
        double dz = stopped ? -1.0 : ubz_x(x_spot);
        prows.push_back({t, y_line, z, pr, dz});
      }
    }
    run->engine = std::move(engine);
    run->boundary = std::move(brows);
    run->price = std::move(prows);
  });
}

static int need_solve(const sofrcev_run* run) {
  if (!run) return bad_args("run is null");
  if (!run->engine) return bad_args("no solve available; call sofrcev_solve first");
  return SOFRCEV_OK;
}

int sofrcev_boundary_rows(const sofrcev_run* run, size_t* rows) {
  if (!rows) return bad_args("rows is null");
  if (int rc = need_solve(run)) return rc;
  *rows = run->boundary.size();
  return SOFRCEV_OK;
}

int sofrcev_boundary_row(const sofrcev_run* run, size_t index, double* t, double* y,
                         double* z_b, double* psi) {
  if (!t || !y || !z_b || !psi) return bad_args("null output argument");
  if (int rc = need_solve(run)) return rc;
  if (index >= run->boundary.size()) return bad_args("boundary row index out of range");
  const BoundaryRow& r = run->boundary[index];
  *t = r.t;
  *y = r.y;
  *z_b = r.z_b;
  *psi = r.psi;
  return SOFRCEV_OK;
}

int sofrcev_price_rows(const sofrcev_run* run, size_t* rows) {
  if (!rows) return bad_args("rows is null");
  if (int rc = need_solve(run)) return rc;
  *rows = run->price.size();
  return SOFRCEV_OK;
}

int sofrcev_price_row(const sofrcev_run* run, size_t index, double* t, double* y, double* z,
                      double* price, double* delta_z) {
  if (!t || !y || !z || !price || !delta_z) return bad_args("null output argument");
  if (int rc = need_solve(run)) return rc;
  if (index >= run->price.size()) return bad_args("price row index out of range");
  const PriceRow& r = run->price[index];
  *t = r.t;
  *y = r.y;
  *z = r.z;
  *price = r.price;
  *delta_z = r.delta_z;
  return SOFRCEV_OK;
}

int sofrcev_price_at(const sofrcev_run* run, double y, double z, double* price) {
  if (!price) return bad_args("price is null");
  if (int rc = need_solve(run)) return rc;
  return guarded([&] { *price = run->engine->price_at(y, z); });
}

int sofrcev_delta_z_at(const sofrcev_run* run, double y, double z, double* delta_z) {
  if (!delta_z) return bad_args("delta_z is null");
  if (int rc = need_solve(run)) return rc;
  return guarded([&] { *delta_z = run->engine->delta_z_at(y, z); });
}

int sofrcev_boundary_at(const sofrcev_run* run, double t, double y, double* z_b) {
  if (!z_b) return bad_args("z_b is null");
  if (int rc = need_solve(run)) return rc;
  return guarded([&] { *z_b = run->engine->boundary_at(t, y); });
}

int sofrcev_theta(double nu, double tau, double v, double w, double a, double* value) {
  if (!value) return bad_args("value is null");
  return guarded([&] {
    sofrcev::weberorr::ThetaKernel kernel(std::abs(nu));
    *value = kernel.theta(tau, v, w, a);
  });
}

int sofrcev_zcb_price(const sofrcev_run* run, double t, double y, double maturity,
                      double* price) {
  if (!run || !price) return bad_args("null argument");
  return guarded([&] {
    double t_min = std::min(t, run->cfg.contract.t0);
    sofrcev::bond::ZcbSolver solver(run->cfg.model, maturity, t_min, y);
    solver.solve();
    *price = solver.value_at(t, y);
  });
}

int sofrcev_forward_rate(const sofrcev_run* run, double t, double y, double maturity,
                         double* rate) {
  if (!run || !rate) return bad_args("null argument");
  return guarded([&] {
    double t_min = std::min(t, run->cfg.contract.t0);
    sofrcev::bond::ForwardMap map(run->cfg.model, maturity, 1.0 / 365.0, t_min, y);
    *rate = map.forward(t, y);
  });
}

int sofrcev_forward_put_price(const sofrcev_run* run, double strike, double* price) {
  if (!run || !price) return bad_args("null argument");
  return guarded([&] {
    sofrcev::bond::ForwardPutSpec spec;
    spec.strike = strike;
    spec.t0 = run->cfg.contract.t0;
    spec.expiry = run->cfg.contract.expiry;
    spec.tenor = run->cfg.tenor;
    spec.y_spot = run->cfg.contract.y_spot;
    spec.style = run->cfg.contract.style;
    sofrcev::bond::ForwardPutEngine engine(run->cfg.model, spec);
    engine.solve();
    *price = engine.price_at(spec.y_spot);
  });
}

int sofrcev_one_month_put_price(const sofrcev_run* run, double strike, double* price) {
  if (!run || !price) return bad_args("null argument");
  return guarded([&] {
    sofrcev::futures::OneMonthPutSpec spec;
    spec.strike = strike;
    spec.valuation_time = run->cfg.contract.t0;
    spec.month_start = run->cfg.contract.expiry;
    spec.month_end = spec.month_start + 1.0 / 12.0;
    spec.y_spot = run->cfg.contract.y_spot;
    auto res = sofrcev::futures::price_one_month_put(run->cfg.model, spec, run->cfg.grid,
                                                     run->cfg.scheme);
    *price = res.price;
  });
}

int sofrcev_rate_3m(const double* accruals, const double* rates, size_t n,
                    double* discrete_rate, double* continuous_rate) {
  if (!accruals || !rates || !discrete_rate || !continuous_rate)
    return bad_args("null argument");
  if (n == 0) return bad_args("empty path");
  return guarded([&] {
    std::vector<double> acc(accruals, accruals + n), rts(rates, rates + n);
    *discrete_rate = sofrcev::futures::compounded_rate_discrete(acc, rts);
    *continuous_rate = sofrcev::futures::compounded_rate_continuous(acc, rts);
  });
}

int sofrcev_validate_json(const sofrcev_run* run, char** report, int* pass) {
  if (!run || !report || !pass) return bad_args("null argument");
  return guarded([&] {
    sofrcev::validation::Report rep = sofrcev::validation::run_suite(run->cfg);
    std::string text = rep.to_json();
    char* buf = static_cast<char*>(std::malloc(text.size() + 1));
    if (!buf) throw std::bad_alloc();
    std::memcpy(buf, text.c_str(), text.size() + 1);
    *report = buf;
    *pass = rep.pass ? 1 : 0;
  });
}

void sofrcev_string_free(char* s) { std::free(s); }

}  // extern "C"
