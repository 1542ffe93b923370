#ifndef HENON_LAB_H
#define HENON_LAB_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum HlStatus {
  HlStatus_Ok = 0,
  HlStatus_NullPointer = 1,
  HlStatus_InvalidArgument = 2,
  HlStatus_Domain = 3,
  HlStatus_Escape = 4,
  HlStatus_Bracket = 5,
  HlStatus_Tolerance = 6,
  HlStatus_NotRenormalizable = 7,
  HlStatus_Sample = 8,
  HlStatus_Continuation = 9,
  HlStatus_Depth = 10,
  HlStatus_Fit = 11,
  HlStatus_Hypothesis = 12,
  HlStatus_NoTangency = 13,
  HlStatus_Field = 14,
  HlStatus_Membership = 15,
  HlStatus_OrderOracle = 16,
  HlStatus_Config = 17,
  HlStatus_Io = 18,
  HlStatus_Numerical = 19,
  HlStatus_Panic = 99,
} HlStatus;

/**
 * Arithmetic mode, mirroring the library's `Precision`.
 */
typedef enum HlPrecision {
  HlPrecision_Standard = 0,
  HlPrecision_Compensated = 1,
} HlPrecision;

typedef enum HlPlissKind {
  HlPlissKind_Preserving = 0,
  HlPlissKind_Reversing = 1,
  HlPlissKind_Absolute = 2,
} HlPlissKind;

/**
 * Opaque critical orbit.
 */
typedef struct HlCriticalOrbit HlCriticalOrbit;

/**
 * Opaque superstable ladder.
 */
typedef struct HlLadder HlLadder;

/**
 * Opaque Henon-like map.
 */
typedef struct HlMap HlMap;

/**
 * Opaque renormalization tower.
 */
typedef struct HlTower HlTower;

/**
 * Copies the last error message into `buf` (NUL-terminated, truncated to `len`) and
 * returns the full message length in bytes.
 *
 * # Safety
 * `buf` must be null or point to `len` writable bytes.
 */
uintptr_t hl_last_error_message(char *buf, uintptr_t len);

/**
 * `F(x, y) = (x^2 + a - b y, x)` on the default domain.
 *
 * # Safety
 * `out` must be a valid pointer; the handle written there is released with [`hl_map_free`].
 */
enum HlStatus hl_map_henon(double a, double b, struct HlMap **out);

/**
 * # Safety
 * `map` must be null or a handle from [`hl_map_henon`] not yet freed.
 */
void hl_map_free(struct HlMap *map);

/**
 * Image of `(x, y)` and the row-major Jacobian `[dx/dx, dx/dy, dy/dx, dy/dy]` there;
 * `jac` may be null.
 *
 * # Safety
 * `map` must be a live handle; `out` must hold 2 doubles and `jac` 4 when non-null.
 */
enum HlStatus hl_map_eval(const struct HlMap *map, double x, double y, double *out, double *jac);

/**
 * Lyapunov exponents of the orbit of `(x, y)` after `transient` steps, over `length` steps.
 *
 * # Safety
 * `map` must be a live handle; `chi1` and `chi2` valid pointers.
 */
enum HlStatus hl_lyapunov(const struct HlMap *map,
                          double x,
                          double y,
                          uintptr_t transient,
                          uintptr_t length,
                          double *chi1,
                          double *chi2);

/**
 * # Safety
 * `out` must be a valid pointer; release the handle with [`hl_ladder_free`].
 */
enum HlStatus hl_ladder_build(uintptr_t levels, enum HlPrecision precision, struct HlLadder **out);

/**
 * # Safety
 * `ladder` must be null or a live handle.
 */
void hl_ladder_free(struct HlLadder *ladder);

/**
 * Superstable parameter `a_n` of level `n`.
 *
 * # Safety
 * `ladder` must be a live handle and `out` valid.
 */
enum HlStatus hl_ladder_param(const struct HlLadder *ladder, uintptr_t n, double *out);

/**
 * Feigenbaum ratio at level `n >= 2`.
 *
 * # Safety
 * `ladder` must be a live handle and `out` valid.
 */
enum HlStatus hl_ladder_ratio(const struct HlLadder *ladder, uintptr_t n, double *out);

/**
 * `a_*(b)` from `max_level` levels of trace-zero cycles.
 *
 * # Safety
 * `out` must be valid.
 */
enum HlStatus hl_boundary_param(double b,
                                uintptr_t max_level,
                                enum HlPrecision precision,
                                double *out);

/**
 * Renormalization tower of `map` to depth `depth`.
 *
 * # Safety
 * `map` must be a live handle and `out` valid; release with [`hl_tower_free`].
 */
enum HlStatus hl_tower_build(const struct HlMap *map,
                             uintptr_t depth,
                             enum HlPrecision precision,
                             struct HlTower **out);

/**
 * # Safety
 * `tower` must be null or a live handle.
 */
void hl_tower_free(struct HlTower *tower);

/**
 * Number of levels in the tower, `0` for a null handle.
 *
 * # Safety
 * `tower` must be null or a live handle.
 */
uintptr_t hl_tower_depth(const struct HlTower *tower);

/**
 * `log delta_n` (natural log) of level `n >= 1`; `-INFINITY` for a degenerate level.
 *
 * # Safety
 * `tower` must be a live handle and `out` valid.
 */
enum HlStatus hl_tower_log_delta(const struct HlTower *tower, uintptr_t n, double *out);

/**
 * Critical orbit of `map` located from a sample orbit of `(0, 0)`.
 *
 * # Safety
 * `map` must be a live handle and `out` valid; release with [`hl_critical_orbit_free`].
 */
enum HlStatus hl_critical_orbit_find(const struct HlMap *map,
                                     uintptr_t transient,
                                     uintptr_t length,
                                     uintptr_t horizon,
                                     struct HlCriticalOrbit **out);

/**
 * # Safety
 * `orbit` must be null or a live handle.
 */
void hl_critical_orbit_free(struct HlCriticalOrbit *orbit);

/**
 * `c_m` for `m` within the stored stretch; `c0` and `c1` are `m = 0, 1`.
 *
 * # Safety
 * `orbit` must be a live handle and `out` hold 2 doubles.
 */
enum HlStatus hl_critical_orbit_point(const struct HlCriticalOrbit *orbit, int64_t m, double *out);

/**
 * Exact density check of Pliss moments for an integer sequence.
 *
 * # Safety
 * `seq` must point to `len` values; `holds` and `margin` must be valid.
 */
enum HlStatus hl_pliss_check(const int64_t *seq,
                             uintptr_t len,
                             int64_t alpha1,
                             int64_t alpha2,
                             int64_t alpha3,
                             enum HlPlissKind kind,
                             bool *holds,
                             double *margin);

/**
 * Adds one to the little-endian mixed-radix `digits` in place, with carry.
 *
 * # Safety
 * `digits` and `radices` must each point to `len` values.
 */
enum HlStatus hl_odometer_add(uint32_t *digits, const uint32_t *radices, uintptr_t len);

#endif  /* HENON_LAB_H */
