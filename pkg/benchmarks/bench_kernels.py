"""Kernel benchmark: numba vs numpy fallback, subset enumeration vs bitmaps.

Runs itself twice, once per acceleration mode (``FIM_DISABLE_NUMBA`` is read
at import time, so each mode needs its own interpreter), then prints a table.

    python benchmarks/bench_kernels.py [--transactions 100000] [--minsup 0.003]

The per-level rows also report ns/probe and ns/word, the two unit costs whose
ratio sets ``apriori.SUBSET_PROBE_WEIGHT``.
"""

import argparse
import json
import os
import subprocess
import sys
import time

import numpy as np


def _best(fn, repeat):
    best = float("inf")
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t)
    return best


def measure(n_txn, minsup, repeat, seed):
    from fimengine import kernels
    from fimengine._accel import HAVE_NUMBA
    from fimengine.apriori import apriori_mine, next_candidates
    from fimengine.datasets import SyntheticParams, absolute_minsup, generate_synthetic
    from fimengine.fpgrowth import fpgrowth_mine

    db = generate_synthetic(SyntheticParams(num_transactions=n_txn, seed=seed))
    s = absolute_minsup(minsup, len(db))
    ip, it, n = db.indptr, db.items, db.num_items
    rows = []

    # warm-up compiles every kernel
    apriori_mine(db.slice(0, min(500, len(db))), 2, "subset")
    apriori_mine(db.slice(0, min(500, len(db))), 2, "bitmap")
    fpgrowth_mine(db.slice(0, min(500, len(db))), 2)

    rows.append(("build_bitmaps", _best(lambda: kernels.build_bitmaps(ip, it, n), repeat), {}))
    bm = kernels.build_bitmaps(ip, it, n)
    counts = np.bincount(it, minlength=n)
    level = np.flatnonzero(counts >= s).astype(np.int32).reshape(-1, 1)
    words = (len(db) + 63) // 64
    k = 1
    while level.shape[0] > 1 and k < 5:
        cands = next_candidates(level)
        if cands.shape[0] == 0:
            break
        k += 1
        probes = kernels.subset_cost(ip, it, cands, n)
        rep = repeat if HAVE_NUMBA or probes < 2e6 else 1
        t_sub = _best(lambda: kernels.count_subsets(ip, it, cands, n), rep)
        t_bm = _best(lambda: kernels.count_bitmap(bm, cands), repeat)
        extra = {"candidates": int(cands.shape[0]), "probes": int(probes),
                 "ns_per_probe": 1e9 * t_sub / max(probes, 1),
                 "ns_per_word": 1e9 * t_bm / max(cands.shape[0] * words, 1)}
        rows.append((f"count_subsets k={k}", t_sub, extra))
        rows.append((f"count_bitmap  k={k}", t_bm, extra))
        sup = kernels.count_bitmap(bm, cands)
        level = cands[sup >= s]

    rows.append(("apriori_mine", _best(lambda: apriori_mine(db, s), 1), {}))
    rows.append(("fpgrowth_mine", _best(lambda: fpgrowth_mine(db, s), 1), {}))
    return {"numba": HAVE_NUMBA, "rows": rows}


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--transactions", type=int, default=100_000)
    ap.add_argument("--minsup", type=float, default=0.003)
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--seed", type=int, default=1)
    ap.add_argument("--child", action="store_true", help=argparse.SUPPRESS)
    args = ap.parse_args(argv)

    if args.child:
        print(json.dumps(measure(args.transactions, args.minsup, args.repeat, args.seed)))
        return

    results = {}
    for disabled in ("0", "1"):
        env = dict(os.environ, FIM_DISABLE_NUMBA=disabled)
        cmd = [sys.executable, __file__, "--child", "--transactions", str(args.transactions),
               "--minsup", str(args.minsup), "--repeat", str(args.repeat), "--seed", str(args.seed)]
        out = subprocess.run(cmd, env=env, capture_output=True, text=True, check=True).stdout
        res = json.loads(out.strip().splitlines()[-1])
        results["numba" if res["numba"] else "numpy"] = res["rows"]

    print(f"{'kernel':24s} {'numba ms':>10s} {'numpy ms':>10s} {'speedup':>8s}  detail")
    fallback = {name: t for name, t, _ in results.get("numpy", [])}
    for name, t, extra in results.get("numba", []):
        t_np = fallback.get(name, float("nan"))
        detail = ", ".join(f"{k}={v:.3g}" if isinstance(v, float) else f"{k}={v}" for k, v in extra.items())
        print(f"{name:24s} {1e3 * t:10.2f} {1e3 * t_np:10.2f} {t_np / t:8.1f}x  {detail}")


if __name__ == "__main__":
    main()
