"""Width and segment count of compiled schedules as eps shrinks.

Prints one row per (d, eps) with N, W, D (emitted), the batch formula for D,
and the number of nonzero terms. Compilation only; nothing is simulated.
"""

import argparse
from dataclasses import dataclass, field

import numpy as np

from qode.sobolev import SobolevConfig, compile_sobolev
from qode.targets import cos2d, sin1d


@dataclass
class Sweep:
    order: int = 2
    eps: list = field(default_factory=lambda: [0.4, 0.2, 0.1, 0.05, 0.025, 0.0125])
    dims: list = field(default_factory=lambda: [1, 2])


def main(sweep: Sweep):
    print(f"{'d':>2} {'eps':>8} {'N':>4} {'W':>5} {'D':>5} {'D_formula':>9} {'terms':>6}")
    for d in sweep.dims:
        f = sin1d(sweep.order) if d == 1 else cos2d(sweep.order)
        Ws = []
        for eps in sweep.eps:
            s = compile_sobolev(f, SobolevConfig(eps))
            m = s.metadata
            Ws.append(s.width)
            print(f"{d:>2} {eps:>8.4g} {m['N']:>4} {s.width:>5} {s.num_segments:>5} "
                  f"{m['D_formula']:>9} {m['terms']:>6}")
        slope = np.polyfit(np.log(sweep.eps), np.log(Ws), 1)[0]
        print(f"   fitted d log W / d log eps = {slope:.3f} (asymptote {-1 / sweep.order:.3f})")


if __name__ == "__main__":
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--order", type=int, default=2)
    p.add_argument("--eps", type=float, nargs="+", default=Sweep().eps)
    p.add_argument("--dims", type=int, nargs="+", default=[1, 2])
    a = p.parse_args()
    main(Sweep(a.order, a.eps, a.dims))
