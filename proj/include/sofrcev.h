#ifndef SOFRCEV_H
#define SOFRCEV_H

/* C interface to the SOFR futures option pricing library. All entry points
 * return a status code; on non-zero status the output arguments are left
 * untouched and sofrcev_last_error() describes the failure for the calling
 * thread. */

#include <stddef.h>

#ifdef __cplusplus
extern "C" {
#endif

enum {
  SOFRCEV_OK = 0,
  SOFRCEV_ERR_CONFIG = 2,    /* invalid configuration or arguments */
  SOFRCEV_ERR_NUMERICAL = 3  /* solver or evaluation failure */
};

/* A pricing run: parsed configuration plus the most recent per-strike solve. */
typedef struct sofrcev_run sofrcev_run;

const char* sofrcev_last_error(void);

sofrcev_run* sofrcev_run_from_file(const char* path);
sofrcev_run* sofrcev_run_from_text(const char* text);
void sofrcev_run_free(sofrcev_run* run);

/* Configuration introspection. */
int sofrcev_strike_count(const sofrcev_run* run, size_t* count);
int sofrcev_strike(const sofrcev_run* run, size_t index, double* strike);
int sofrcev_output_directory(const sofrcev_run* run, const char** directory);
int sofrcev_contract(const sofrcev_run* run, double* t0, double* expiry, double* y_spot,
                     double* tenor, double* q_maturity);

/* Solve the averaging-option problem for one strike, replacing any previous
 * solve held by the run. */
int sofrcev_solve(sofrcev_run* run, double strike);

/* Exercise-boundary surface of the last solve, one row per (time level,
 * state node): time, state level y, boundary average z_B, and the value
 * gradient at the reflecting floor. */
int sofrcev_boundary_rows(const sofrcev_run* run, size_t* rows);
int sofrcev_boundary_row(const sofrcev_run* run, size_t index, double* t, double* y,
                         double* z_b, double* psi);

/* Price surface of the last solve along the spot state line, one row per
 * (time level, average node): time, state level y, running average z, option
 * price, and the price gradient in z. */
int sofrcev_price_rows(const sofrcev_run* run, size_t* rows);
int sofrcev_price_row(const sofrcev_run* run, size_t index, double* t, double* y, double* z,
                      double* price, double* delta_z);

/* Point queries against the last solve. Prices and gradients are evaluated
 * at the valuation time; the boundary accepts any time inside the window. */
int sofrcev_price_at(const sofrcev_run* run, double y, double z, double* price);
int sofrcev_delta_z_at(const sofrcev_run* run, double y, double z, double* delta_z);
int sofrcev_boundary_at(const sofrcev_run* run, double t, double y, double* z_b);

/* Heat-kernel value of the semi-infinite-domain spectral kernel. */
int sofrcev_theta(double nu, double tau, double v, double w, double a, double* value);

/* Zero-coupon bond price and instantaneous forward rate under the run's
 * model, from state (t, y) to the given maturity. */
int sofrcev_zcb_price(const sofrcev_run* run, double t, double y, double maturity,
                      double* price);
int sofrcev_forward_rate(const sofrcev_run* run, double t, double y, double maturity,
                         double* rate);

/* Put on the forward rate; exercise window and spot come from the run. */
int sofrcev_forward_put_price(const sofrcev_run* run, double strike, double* price);

/* One-month futures put: decision at the month start between intrinsic value
 * on the one-month rate and the averaging-option continuation. */
int sofrcev_one_month_put_price(const sofrcev_run* run, double strike, double* price);

/* Compounded period rate of a daily path, exact product form and continuous
 * approximation. `accruals` are year fractions per day, `rates` the simple
 * daily rates. */
int sofrcev_rate_3m(const double* accruals, const double* rates, size_t n,
                    double* discrete_rate, double* continuous_rate);

/* Run the validation suite (oracle cross-checks and invariants) and return a
 * JSON report. `pass` is 1 when every check passed. The report string is
 * owned by the caller; release it with sofrcev_string_free. */
int sofrcev_validate_json(const sofrcev_run* run, char** report, int* pass);
void sofrcev_string_free(char* s);

#ifdef __cplusplus
}
#endif

#endif /* SOFRCEV_H */
