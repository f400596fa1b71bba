"""Time the numba kernels against their numpy twins.

Run with ``python3 benchmarks/bench_kernels.py``. Each numpy timing comes from
a subprocess started with ``FLASHGAN_NUMBA=0`` so both paths go through the
same public dispatch functions.
"""

from __future__ import annotations

import argparse
import json
import os
import subprocess
import sys
import timeit

CASES = {
    "scatter_add_rows": (
        "import numpy as np; from flashgan import _kernels as k;"
        "r = np.random.default_rng(0); v = r.standard_normal((200_000, 32)); i = r.integers(0, 5_000, 200_000)",
        "k.scatter_add_rows(v, i, 5_000)",
    ),
    "rank_auc": (
        "import numpy as np; from flashgan import _kernels as k;"
        "r = np.random.default_rng(0); s = np.round(r.random(100_000), 3); p = r.random(100_000) < 0.1",
        "k.rank_auc(s, p)",
    ),
    "step_average_precision": (
        "import numpy as np; from flashgan import _kernels as k;"
        "r = np.random.default_rng(0); s = np.round(r.random(100_000), 3); p = r.random(100_000) < 0.1",
        "k.step_average_precision(s, p)",
    ),
}


def _time_all(repeat: int) -> dict[str, float]:
    out = {}
    for name, (setup, stmt) in CASES.items():
        ns = {}
        exec(setup, ns)
        exec(stmt, ns)  # warm-up, includes JIT compilation
        out[name] = min(timeit.repeat(stmt, globals=ns, number=1, repeat=repeat))
    return out


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--child", action="store_true", help=argparse.SUPPRESS)
    args = ap.parse_args()
    if args.child:
        print(json.dumps(_time_all(args.repeat)))
        return

    def run(flag: str) -> dict[str, float]:
        env = dict(os.environ, FLASHGAN_NUMBA=flag)
        cmd = [sys.executable, __file__, "--child", "--repeat", str(args.repeat)]
        return json.loads(subprocess.run(cmd, env=env, check=True, capture_output=True, text=True).stdout)

    nb, np_ = run("1"), run("0")
    print(f"{'kernel':<26}{'numba ms':>10}{'numpy ms':>10}{'speedup':>9}")
    for name in CASES:
        print(f"{name:<26}{nb[name] * 1e3:>10.2f}{np_[name] * 1e3:>10.2f}{np_[name] / nb[name]:>8.1f}x")


if __name__ == "__main__":
    main()
