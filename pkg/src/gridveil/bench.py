"""Crypto micro-benchmarks and protocol scaling measurements."""

from __future__ import annotations

import random
import time
from pathlib import Path

from .engine import MarketSimulation, RunConfig, derive_rng
from .grid import load_case
from .paillier import (
    decrypt_crt,
    decrypt_standard,
    default_codec,
    encrypt,
    hom_add,
    hom_scalar_mul,
    keygen,
)


def _time_loop(fn, items):
    t0 = time.perf_counter()
    for item in items:
        fn(item)
    return (time.perf_counter() - t0) / max(len(items), 1) * 1e6


def bench_crypto(key_bits_list, ops=200, tau=4, seed=0):
    """Mean per-operation timings; rows (op, key_bits, mean_us, speedup).

    The speedup column on decrypt rows is standard-over-CRT wall time for
    the same ciphertexts.
    """
    rows = []
    for key_bits in key_bits_list:
        key = keygen(key_bits, derive_rng(seed, "bench", key_bits))
        codec = default_codec(key, tau)
        rng = random.Random(seed + key_bits)
        cap = min(10.0 ** (key_bits // 8), 1e6)
        plain = [round(rng.uniform(-cap, cap), tau) for _ in range(ops)]
        pk = key.public()

        enc_us = _time_loop(lambda d: encrypt(pk, codec, d, rng), plain)
        cts = [encrypt(pk, codec, d, rng) for d in plain]
        crt_us = _time_loop(lambda ct: decrypt_crt(key, ct, codec), cts)
        std_us = _time_loop(lambda ct: decrypt_standard(key, ct, codec), cts)
        add_us = _time_loop(lambda ct: hom_add(ct, cts[0], key.n), cts)
        mul_us = _time_loop(lambda ct: hom_scalar_mul(ct, 1.2345, codec, key.n), cts)

        speedup = std_us / crt_us if crt_us > 0 else float("inf")
        rows.append({"op": "encrypt", "key_bits": key_bits, "mean_us": enc_us, "speedup": ""})
        rows.append({"op": "decrypt_crt", "key_bits": key_bits, "mean_us": crt_us, "speedup": ""})
        rows.append(
            {"op": "decrypt_standard", "key_bits": key_bits, "mean_us": std_us, "speedup": speedup}
        )
        rows.append({"op": "hom_add", "key_bits": key_bits, "mean_us": add_us, "speedup": ""})
        rows.append({"op": "hom_scalar_mul", "key_bits": key_bits, "mean_us": mul_us, "speedup": ""})
    return rows


def bench_rows_to_csv(rows, out=None):
    lines = ["op,key_bits,mean_us,speedup"]
    for row in rows:
        lines.append(f"{row['op']},{row['key_bits']},{row['mean_us']:.3f},{row['speedup']}")
    text = "\n".join(lines) + "\n"
    if out:
        Path(out).write_text(text)
    return text


def scaling_run(case_paths, key_bits=128, tau=6, iters=20, seed=0):
    """Offline-phase cost and per-agent online crypto load for each case.

    The online figure times `iters` secured rounds and averages per agent
    per round; session and ciphertext-operation counts are reported too so
    the growth trend is visible independently of wall-clock noise.
    """
    rows = []
    for path in case_paths:
        case = load_case(path)
        n_agents = len(case.agent_ids)
        cfg = RunConfig(
            case=case, mode="secure", key_bits=key_bits, tau=tau, max_iters=iters,
            tol=0.0ated if False else 1e-300, seed=seed,
        )
        t0 = time.perf_counter()
        sim = MarketSimulation(case, cfg)
        setup_s = time.perf_counter() - t0
        groups = len(sim.groups) // 2  # two components per holder group
        sessions = len(sim.sessions)

        t0 = time.perf_counter()
        sim.run()
        online_s = time.perf_counter() - t0
        per_agent_ms = online_s / max(iters, 1) / n_agents * 1e3
        rows.append(
            {
                "case": str(path),
                "buses": n_agents,
                "offline_ms": setup_s * 1e3,
                "online_ms_per_agent_iter": per_agent_ms,
                "sessions_per_iter": sessions,
                "multiparty_groups": groups,
            }
        )
    return rows
