#include <stdio.h>
#include <string.h>
#include "mfaz.h"

#define CHECK(call)                                                        \
    do {                                                                   \
        MfazStatus s_ = (call);                                            \
        if (s_ != MFAZ_STATUS_OK) {                                        \
            fprintf(stderr, "%s -> %d: %s\n", #call, (int)s_,              \
                    mfaz_last_error() ? mfaz_last_error() : "");           \
            return 1;                                                      \
        }                                                                  \
    } while (0)

int main(void) {
    MfazBloom *bf = NULL;
    uint64_t m = 0, k = 0;
    CHECK(mfaz_bloom_new(1000, 0.01, &bf));
    CHECK(mfaz_bloom_params(bf, &m, &k));
    size_t len = 0;
    if (mfaz_bloom_serialize(bf, NULL, 0, &len) != MFAZ_STATUS_BUFFER_TOO_SMALL) return 2;
    mfaz_bloom_free(bf);
    printf("bloom m=%llu k=%llu bytes=%zu\n", (unsigned long long)m, (unsigned long long)k, len);

    MfazServer *srv = NULL;
    CHECK(mfaz_server_new(NULL, &srv));
    CHECK(mfaz_server_install_rules(srv, "*;read;public\n"));

    uint8_t key[32];
    memset(key, 7, sizeof key);
    uint8_t gas[8 * MFAZ_DIGEST_LEN];
    size_t count = 0;
    CHECK(mfaz_server_enroll(srv, "carol", "carol-key", NULL, key, gas, 8, &count));

    uint8_t nonce[32], proof[32], sid[MFAZ_SID_LEN];
    CHECK(mfaz_server_challenge(srv, "carol", nonce));
    CHECK(mfaz_key_proof(key, nonce, proof));
    CHECK(mfaz_server_open_session(srv, "carol", proof, sid));

    MfazRequest req = {0};
    req.user_id = "carol";
    req.key_id = "carol-key";
    memcpy(req.sid, sid, sizeof sid);
    req.op = 1;
    req.resource_id = "lobby";
    req.resource_class = 2;
    req.sga = gas;
    req.sga_len = 1;
    MfazDecision d;
    CHECK(mfaz_server_authorize(srv, &req, &d));
    printf("first granted=%d reason=%d\n", (int)d.granted, (int)d.reason);

    uint8_t forged[32];
    memset(forged, 0xAB, sizeof forged);
    req.sga = forged;
    CHECK(mfaz_server_authorize(srv, &req, &d));
    printf("forged granted=%d reason=%d\n", (int)d.granted, (int)d.reason);

    if (mfaz_server_enroll(srv, NULL, "x", NULL, key, gas, 8, &count) != MFAZ_STATUS_NULL_POINTER) return 3;
    mfaz_server_free(srv);
    return 0;
}
