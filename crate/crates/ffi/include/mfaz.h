#ifndef MFAZ_H
#define MFAZ_H

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

#define MFAZ_DIGEST_LEN 32

#define MFAZ_SID_LEN 16

// Result of every call. Values 1 to 17 mirror the library's error codes.
typedef enum MfazStatus {
  MFAZ_STATUS_OK = 0,
  MFAZ_STATUS_REJECT_ENCODING = 1,
  MFAZ_STATUS_INVALID_INPUT = 2,
  MFAZ_STATUS_REJECT_PARAMS = 3,
  MFAZ_STATUS_REJECT_STATE = 4,
  MFAZ_STATUS_REJECT_FORMAT = 5,
  MFAZ_STATUS_CONFLICT = 6,
  MFAZ_STATUS_REJECT_PAYLOAD = 7,
  MFAZ_STATUS_LEDGER_UNAVAILABLE = 8,
  MFAZ_STATUS_ALREADY_ENROLLED = 9,
  MFAZ_STATUS_UNKNOWN_USER = 10,
  MFAZ_STATUS_AUTH_FAIL = 11,
  MFAZ_STATUS_SESSION_NOT_FOUND = 12,
  MFAZ_STATUS_VAULT_EMPTY = 13,
  MFAZ_STATUS_NOT_IN_VAULT = 14,
  MFAZ_STATUS_REJECT_FRAME = 15,
  MFAZ_STATUS_CONFIG = 16,
  MFAZ_STATUS_IO = 17,
  MFAZ_STATUS_NULL_POINTER = 100,
  MFAZ_STATUS_INVALID_UTF8 = 101,
  MFAZ_STATUS_BUFFER_TOO_SMALL = 102,
  MFAZ_STATUS_PANIC = 103,
  MFAZ_STATUS_INTERNAL = 104,
} MfazStatus;

typedef enum MfazReason {
  MFAZ_REASON_OK = 0,
  MFAZ_REASON_AR_FAIL = 1,
  MFAZ_REASON_VP_FAIL = 2,
  MFAZ_REASON_SESSION_INVALID = 3,
} MfazReason;

// Opaque Bloom filter handle.
typedef struct MfazBloom MfazBloom;

// Opaque authorization server handle.
typedef struct MfazServer MfazServer;

// Access request. `role` may be NULL. `sga` points to `sga_len` 32-byte digests.
typedef struct MfazRequest {
  const char *user_id;
  const char *key_id;
  const char *role;
  uint8_t sid[MFAZ_SID_LEN];
  // 1 read, 2 write, 3 execute.
  uint8_t op;
  const char *resource_id;
  // 1 private, 2 public.
  uint8_t resource_class;
  const uint8_t *sga;
  uintptr_t sga_len;
} MfazRequest;

typedef struct MfazDecision {
  bool granted;
  enum MfazReason reason;
  // Timestamp of the newly issued GA; 0 when denied.
  uint64_t new_ga_ts;
} MfazDecision;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the last failed call on this thread, or NULL. The pointer
// stays valid until the next failing call on the same thread.
const char *mfaz_last_error(void);

// Writes the 32-byte GA digest to `out`. `role` may be NULL.
//
// # Safety
// String arguments must be NUL-terminated; `out` must hold 32 bytes.
enum MfazStatus mfaz_gen_ga(const char *user_id,
                            const char *key_id,
                            const char *role,
                            uint8_t op,
                            const char *resource_id,
                            uint8_t resource_class,
                            uint64_t ts,
                            uint8_t *out);

// Writes the 32-byte VP for `ga` under the 32-byte key to `out`.
//
// # Safety
// `ga`, `key_bytes` and `out` must each point to 32 bytes.
enum MfazStatus mfaz_gen_vp(const uint8_t *ga, const uint8_t *key_bytes, uint8_t *out);

// Login proof for a server challenge: SHA-256(key ‖ nonce).
//
// # Safety
// `key_bytes`, `nonce` and `out` must each point to 32 bytes.
enum MfazStatus mfaz_key_proof(const uint8_t *key_bytes, const uint8_t *nonce, uint8_t *out);

// # Safety
// `out` must be a valid pointer.
enum MfazStatus mfaz_bloom_new(uint64_t capacity, double fpr, struct MfazBloom **out);

// # Safety
// `bf` must come from this library and not be used afterwards. NULL is a no-op.
void mfaz_bloom_free(struct MfazBloom *bf);

// Bit count `m` and hash count `k`.
//
// # Safety
// All pointers must be valid.
enum MfazStatus mfaz_bloom_params(const struct MfazBloom *bf, uint64_t *bits, uint64_t *hashes);

// Sets `is_new` to whether any bit changed.
//
// # Safety
// `bf` must be a live handle, `vp` 32 bytes; `is_new` may be NULL.
enum MfazStatus mfaz_bloom_insert(struct MfazBloom *bf, const uint8_t *vp, bool *is_new);

// # Safety
// `bf` must be a live handle, `vp` 32 bytes, `present` valid.
enum MfazStatus mfaz_bloom_check(const struct MfazBloom *bf, const uint8_t *vp, bool *present);

// Writes the serialized filter into `buf`. `written` always receives the
// required size; with a short buffer the call returns BUFFER_TOO_SMALL.
//
// # Safety
// `buf` must hold `cap` bytes (may be NULL when `cap` is 0); `written` valid.
enum MfazStatus mfaz_bloom_serialize(const struct MfazBloom *bf,
                                     uint8_t *buf,
                                     uintptr_t cap,
                                     uintptr_t *written);

// # Safety
// `data` must hold `len` bytes; `out` valid.
enum MfazStatus mfaz_bloom_deserialize(const uint8_t *data, uintptr_t len, struct MfazBloom **out);

// Server with default settings. `ledger_path` selects a file-backed
// ledger; NULL keeps the ledger in memory.
//
// # Safety
// `ledger_path` must be NULL or NUL-terminated; `out` valid.
enum MfazStatus mfaz_server_new(const char *ledger_path, struct MfazServer **out);

// # Safety
// `server` must come from this library and not be used afterwards. NULL is a no-op.
void mfaz_server_free(struct MfazServer *server);

// Replaces the rule set with `rules` (one `subject;ops;resource` per line).
//
// # Safety
// `server` must be live; `rules` NUL-terminated.
enum MfazStatus mfaz_server_install_rules(const struct MfazServer *server, const char *rules);

// Enrolls a user and writes the bootstrap GA digests (32 bytes each) into
// `gas`. `count` always receives the number issued; if it exceeds
// `gas_cap` the call fails with BUFFER_TOO_SMALL before enrolling.
//
// # Safety
// Strings NUL-terminated (`role` may be NULL); `key_bytes` 32 bytes;
// `gas` holds `gas_cap * 32` bytes; `count` valid.
enum MfazStatus mfaz_server_enroll(const struct MfazServer *server,
                                   const char *user_id,
                                   const char *key_id,
                                   const char *role,
                                   const uint8_t *key_bytes,
                                   uint8_t *gas,
                                   uintptr_t gas_cap,
                                   uintptr_t *count);

// Writes a fresh 32-byte login challenge for `user_id`.
//
// # Safety
// `server` live; `user_id` NUL-terminated; `nonce` holds 32 bytes.
enum MfazStatus mfaz_server_challenge(const struct MfazServer *server,
                                      const char *user_id,
                                      uint8_t *nonce);

// Opens a session given the proof for an outstanding challenge and writes
// the 16-byte session id.
//
// # Safety
// `server` live; `user_id` NUL-terminated; `proof` 32 bytes; `sid` 16 bytes.
enum MfazStatus mfaz_server_open_session(const struct MfazServer *server,
                                         const char *user_id,
                                         const uint8_t *proof,
                                         uint8_t *sid);

// # Safety
// `server` live; `sid` 16 bytes.
enum MfazStatus mfaz_server_revoke_session(const struct MfazServer *server, const uint8_t *sid);

// Runs the full decision pipeline; on grant the next VP is stored.
//
// # Safety
// `server` live; `request` fields valid as documented on [`MfazRequest`];
// `decision` valid.
enum MfazStatus mfaz_server_authorize(const struct MfazServer *server,
                                      const struct MfazRequest *request,
                                      struct MfazDecision *decision);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MFAZ_H */
