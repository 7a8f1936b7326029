#ifndef COOPGRID_H
#define COOPGRID_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum CgStatus {
  CG_STATUS_OK = 0,
  CG_STATUS_NULL_POINTER = 1,
  CG_STATUS_INVALID_INPUT = 2,
  CG_STATUS_INFEASIBLE = 3,
  CG_STATUS_SIZE_LIMIT = 4,
  CG_STATUS_SOLVER_FAILURE = 5,
  CG_STATUS_PANIC = 6,
} CgStatus;

typedef enum CgScheme {
  CG_SCHEME_CENTRALIZED = 0,
  CG_SCHEME_DECENTRALIZED = 1,
} CgScheme;

typedef enum CgMechanism {
  CG_MECHANISM_EQUAL_DIVISION = 0,
  CG_MECHANISM_EGALITARIAN = 1,
  CG_MECHANISM_PROPORTIONAL = 2,
  CG_MECHANISM_NET_CONSUMPTION = 3,
  CG_MECHANISM_SHAPLEY = 4,
  CG_MECHANISM_DNEM = 5,
} CgMechanism;

/**
 * Opaque list of prosumers.
 */
typedef struct CgCommunity CgCommunity;

/**
 * Opaque coalition game of a community for one tariff hour.
 */
typedef struct CgGame CgGame;

/**
 * Quadratic device: utility `alpha*d - beta*d^2/2` on `[d_min, d_max]`.
 */
typedef struct CgDevice {
  double alpha;
  double beta;
  double d_min;
  double d_max;
} CgDevice;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. The pointer
 * stays valid until the next call into this library on the same thread.
 */
const char *cg_last_error(void);

/**
 * NEM bill of net consumption `z`.
 */
enum CgStatus cg_payment(double z, double retail, double export_, double *out);

/**
 * New empty community. Never returns null.
 */
struct CgCommunity *cg_community_new(void);

/**
 * # Safety
 * `community` must be null or a handle from [`cg_community_new`] that
 * has not been freed.
 */
void cg_community_free(struct CgCommunity *community);

/**
 * Number of prosumers, or 0 for a null handle.
 *
 * # Safety
 * `community` must be null or a live handle.
 */
size_t cg_community_len(const struct CgCommunity *community);

/**
 * Appends a prosumer and writes its index to `out_index`.
 *
 * # Safety
 * `community` must be a live handle; `devices` must point to
 * `n_devices` values (it may be null when `n_devices` is 0).
 */
enum CgStatus cg_community_add_prosumer(struct CgCommunity *community,
                                        const struct CgDevice *devices,
                                        size_t n_devices,
                                        double renewable,
                                        double z_min,
                                        double z_max,
                                        size_t *out_index);

/**
 * Standalone optimum of one prosumer under the NEM tariff.
 *
 * # Safety
 * `community` must be a live handle.
 */
enum CgStatus cg_best_response(const struct CgCommunity *community,
                               size_t index,
                               double retail,
                               double export_,
                               double *out_welfare,
                               double *out_z);

/**
 * Value of the coalition whose members are the set bits of `mask`.
 *
 * # Safety
 * `community` must be a live handle.
 */
enum CgStatus cg_coalition_value(const struct CgCommunity *community,
                                 uint32_t mask,
                                 enum CgScheme scheme,
                                 double retail,
                                 double export_,
                                 double *out_value);

/**
 * Builds the full coalition game of the community. The game keeps its
 * own copy of the prosumers.
 *
 * # Safety
 * `community` must be a live handle and `out_game` writable.
 */
enum CgStatus cg_game_build(const struct CgCommunity *community,
                            enum CgScheme scheme,
                            double retail,
                            double export_,
                            struct CgGame **out_game);

/**
 * # Safety
 * `game` must be null or a handle from [`cg_game_build`] that has not
 * been freed.
 */
void cg_game_free(struct CgGame *game);

/**
 * Number of players, or 0 for a null handle.
 *
 * # Safety
 * `game` must be null or a live handle.
 */
size_t cg_game_players(const struct CgGame *game);

/**
 * # Safety
 * `game` must be a live handle.
 */
enum CgStatus cg_game_value(const struct CgGame *game, uint32_t mask, double *out_value);

/**
 * Least-core certificate: `out_nonempty` is true when the core is
 * nonempty and `out_epsilon` receives the least-core value.
 *
 * # Safety
 * `game` must be a live handle.
 */
enum CgStatus cg_game_core_nonempty(const struct CgGame *game,
                                    bool *out_nonempty,
                                    double *out_epsilon);

/**
 * Writes one payoff per player into `payoffs`, which must hold `len`
 * values with `len` equal to the number of players.
 *
 * # Safety
 * `game` must be a live handle and `payoffs` writable for `len` values.
 */
enum CgStatus cg_allocate(const struct CgGame *game,
                          enum CgMechanism mechanism,
                          double *payoffs,
                          size_t len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* COOPGRID_H */
