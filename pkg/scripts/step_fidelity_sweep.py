"""Bootstrap step-by-step fidelity as the partition sharpness c grows.

Shows where double precision runs out: the ln step needs psi - 1 to resolve
psi, so once the smallest partition value nears machine epsilon the error
grows like 1/psi_min and eventually the flow escapes.
"""

import argparse
from dataclasses import dataclass, field

import numpy as np

from qode.bootstrap import PartitionParams, psi_all
from qode.checks import step_fidelity


@dataclass
class Sweep:
    d: int = 1
    N: list = field(default_factory=lambda: [2, 4])
    c: list = field(default_factory=lambda: [2.0, 5.0, 8.0, 10.0, 12.0, 15.0, 20.0, 25.0])
    points: int = 50
    seed: int = 0


def main(sw: Sweep):
    print(f"{'N':>3} {'c':>6} {'psi_min':>9} {'max err':>9}  per-step errors / failure")
    for N in sw.N:
        for c in sw.c:
            psi_min = float(psi_all(np.linspace(0, 1, 401), PartitionParams(N, c)).min())
            r = step_fidelity(sw.d, N, c, sw.points, sw.seed)
            steps = " ".join(f"{e:.1e}" for e in r["step_errors"])
            tail = f"  [{r['failure']}]" if r["failure"] else ""
            print(f"{N:>3} {c:>6g} {psi_min:>9.1e} {r['max_error']:>9.1e}  {steps}{tail}")


if __name__ == "__main__":
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--d", type=int, default=1)
    p.add_argument("--N", type=int, nargs="+", default=[2, 4])
    p.add_argument("--c", type=float, nargs="+", default=Sweep().c)
    p.add_argument("--points", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    a = p.parse_args()
    main(Sweep(a.d, a.N, a.c, a.points, a.seed))
