"""Perturbation budget, gains and end-to-end error of the compiled demo net across eps."""

import argparse
from dataclasses import dataclass, field

import numpy as np

from qode.ffnet import compile_ffnet, demo_net, net_eval, verify_lemma5
from qode.integrate import simulate_batch


@dataclass
class Sweep:
    eps: list = field(default_factory=lambda: [1e-1, 1e-2, 1e-3, 1e-4])
    grid: int = 21
    lemma5_trials: int = 500


def main(sw: Sweep):
    net = demo_net()
    g = np.linspace(0, 1, sw.grid)
    X = np.stack(np.meshgrid(g, g, indexing="ij"), -1).reshape(-1, 2)
    ref = net_eval(net, X)
    print(f"{'eps':>8} {'W':>3} {'D':>3} {'delta0':>10} {'r1':>18} {'r3':>18} {'sup err':>9} steps")
    for eps in sw.eps:
        s = compile_ffnet(net, eps)
        b = s.metadata["budget"]
        sim = simulate_batch(s, X)
        err = np.max(np.abs(sim.output - ref))
        r1 = "/".join(f"{v:.1f}" for v in b["r1"])
        r3 = "/".join(f"{v:.1f}" for v in b["r3"])
        print(f"{eps:>8.0e} {s.width:>3} {s.num_segments:>3} {b['delta0']:>10.2e} {r1:>18} "
              f"{r3:>18} {err:>9.1e} {sim.steps}")
    K = net.weight_bound * (net.width + 1)
    for delta in (1e-6, 1e-5):
        rep = verify_lemma5(K, delta, sw.lemma5_trials)
        print(f"perturbation bound at K={K}, delta={delta:g}: bound {rep.bound:.3e}, "
              f"max observed {rep.max_deviation:.3e}, ratio {rep.max_ratio:.3g}")


if __name__ == "__main__":
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--eps", type=float, nargs="+", default=Sweep().eps)
    p.add_argument("--grid", type=int, default=21)
    a = p.parse_args()
    main(Sweep(a.eps, a.grid))
