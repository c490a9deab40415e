#!/usr/bin/env python3
"""Independent reference for the frozen test vectors in this directory.

Uses only hashlib/struct so the values do not depend on the Rust code paths
they check. Re-run with `python3 gen_vectors.py` from this directory.
"""
import hashlib
import json
import math
import struct

OP = {"READ": 1, "WRITE": 2, "EXECUTE": 3}
CLASS = {"PRIVATE": 1, "PUBLIC": 2}


def tlv(fields):
    out = b""
    last = -1
    for tag, payload in fields:
        assert tag > last
        last = tag
        out += bytes([tag]) + struct.pack(">I", len(payload)) + payload
    return out


def sha(b):
    return hashlib.sha256(b).digest()


def ga(user_id, key_id, op, resource_id, cls, ts):
    return sha(tlv([
        (1, user_id.encode()),
        (2, key_id.encode()),
        (3, bytes([OP[op]])),
        (4, resource_id.encode()),
        (5, bytes([CLASS[cls]])),
        (6, struct.pack(">Q", ts)),
    ]))


def vp(ga_digest, key_bytes):
    return sha(tlv([(1, ga_digest), (2, key_bytes)]))


def params(n, p):
    m = round(n * abs(math.log(p)) / (math.log(2) ** 2))
    k = max(1, round((m / n) * math.log(2)))
    return m, k


def indices(vp_digest, m, k):
    d = sha(vp_digest)
    h1 = int.from_bytes(d[0:8], "big")
    h2 = int.from_bytes(d[8:16], "big") | 1
    return [(h1 + i * h2) % m for i in range(k)]


def main():
    ga_cases = [
        ("u1", "k1", "READ", "r1", "PRIVATE", 0),
        ("u1", "k1", "READ", "r1", "PRIVATE", 1),
        ("alice", "alice-key", "WRITE", "door-7", "PUBLIC", 1_700_000_000_000),
        ("bob", "kb", "EXECUTE", "__bootstrap__", "PUBLIC", 2**64 - 1),
    ]
    vp_cases = [
        (bytes(32), bytes(32)),
        (bytes(32), bytes([1] * 32)),
        (bytes(range(32)), bytes(range(32, 64))),
    ]
    m, k = params(1000, 0.01)
    out = {
        "canonical": [
            {"fields": [[1, ""]], "expected": tlv([(1, b"")]).hex()},
            {"fields": [[1, "41"], [2, "42"]], "expected": tlv([(1, b"A"), (2, b"B")]).hex()},
        ],
        "gen_ga": [
            {
                "user_id": u, "key_id": kid, "op": op, "resource_id": r,
                "resource_class": c, "ts_millis": ts,
                "expected_digest": ga(u, kid, op, r, c, ts).hex(),
            }
            for (u, kid, op, r, c, ts) in ga_cases
        ],
        "gen_vp": [
            {"ga": g.hex(), "key_bytes": kb.hex(), "expected_digest": vp(g, kb).hex()}
            for (g, kb) in vp_cases
        ],
        "bf_params": [
            {"capacity": 1000, "fpr": 0.01, "bits": m, "hashes": k},
            {"capacity": 1, "fpr": 0.5, "bits": params(1, 0.5)[0], "hashes": params(1, 0.5)[1]},
        ],
        "bf_indices": [
            {"vp": bytes(32).hex(), "capacity": 1000, "fpr": 0.01,
             "expected": indices(bytes(32), m, k)},
            {"vp": bytes([0xff] * 32).hex(), "capacity": 1000, "fpr": 0.01,
             "expected": indices(bytes([0xff] * 32), m, k)},
        ],
    }
    with open("core_crypto.json", "w") as f:
        json.dump(out, f, indent=2)
        f.write("\n")

    header = (
        b"MFAZ"
        + struct.pack(">I", 1)
        + struct.pack(">Q", m)
        + struct.pack(">Q", k)
        + struct.pack(">Q", 1000)
        + struct.pack(">Q", 0)
        + struct.pack(">Q", 10_000)
        + bytes(8)
    )
    assert len(header) == 56
    blob = header + bytes((m + 7) // 8)
    assert len(blob) == 1255
    with open("bf_default_empty.bin", "wb") as f:
        f.write(blob)


if __name__ == "__main__":
    main()
