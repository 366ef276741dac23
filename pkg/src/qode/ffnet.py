"""Compile a tanh feedforward net into three duration-1 segments per layer.

Layout (0-based, ``m = max(width, input_dim)``): ``alpha = 0..m-1`` carries
the layer activations, ``lambda = m..2m-1`` and ``mu = 2m..3m-1`` are the
tanh gadget's auxiliary states. Per layer ``k``:

1. weights: ``alpha' = -r1 alpha``, ``mu' = r1/(1 - e^{-r1}) A_k alpha + b_k``
2. tanh:    ``alpha_j' = mu_j - alpha_j lambda_j``, ``lambda_j' = mu_j^2 - lambda_j^2``
3. cleanup: ``lambda' = -r3 lambda``, ``mu' = -r3 mu``

The gains come from a perturbation budget: starting from ``delta_0`` the
per-layer error grows as ``delta_{k+1} = a1 delta_k / (a3 - a2 delta_k)``, and
``delta_0`` is chosen so the final error is below ``eps / ||c||_1``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .integrate import Tolerance, simulate_batch
from .schedule import ControlSchedule, ControlSegment, SegmentBuilder

__all__ = [
    "FeedforwardNet",
    "LayerBudget",
    "BudgetError",
    "net_eval",
    "perturbation_bound",
    "perturbation_threshold",
    "budget",
    "compile_ffnet",
    "verify_lemma5",
    "lemma5_segment",
    "demo_net",
    "random_net",
    "load_net",
]


class BudgetError(ValueError):
    """The perturbation budget cannot be met in double precision."""


@dataclass(frozen=True)
class FeedforwardNet:
    """``z(k+1) = tanh(A_k z(k) + b_k)``, output ``c . z(D)``.

    Every layer maps ``R^width -> R^width`` except the first, whose ``A`` is
    ``width x input_dim``.
    """

    input_dim: int
    width: int
    layers: tuple
    readout: np.ndarray
    weight_bound: float

    def __post_init__(self):
        layers = []
        for n, (A, b) in enumerate(self.layers):
            A = np.atleast_2d(np.asarray(A, dtype=float))
            b = np.asarray(b, dtype=float).reshape(-1)
            cols = self.input_dim if n == 0 else self.width
            if A.shape != (self.width, cols) or b.shape != (self.width,):
                raise ValueError(f"layer {n + 1}: expected A {(self.width, cols)} and b "
                                 f"({self.width},), got {A.shape} and {b.shape}")
            layers.append((A, b))
        if not layers:
            raise ValueError("net needs at least one layer")
        object.__setattr__(self, "layers", tuple(layers))
        c = np.asarray(self.readout, dtype=float).reshape(-1)
        if c.shape != (self.width,):
            raise ValueError(f"readout must have length {self.width}")
        object.__setattr__(self, "readout", c)
        if not self.weight_bound > 0:
            raise ValueError("weight_bound must be positive")
        big = max(max(np.max(np.abs(A), initial=0.0), np.max(np.abs(b), initial=0.0))
                  for A, b in layers)
        if big > self.weight_bound * (1 + 1e-12):
            raise ValueError(f"weight of magnitude {big} exceeds weight_bound {self.weight_bound}")

    @property
    def depth(self) -> int:
        return len(self.layers)

    @property
    def state_block(self) -> int:
        return max(self.width, self.input_dim)

    def to_json(self) -> dict:
        return {
            "input_dim": self.input_dim,
            "width": self.width,
            "layers": [{"A": A.tolist(), "b": b.tolist()} for A, b in self.layers],
            "readout": self.readout.tolist(),
            "weight_bound": self.weight_bound,
        }

    @classmethod
    def from_json(cls, data: dict) -> "FeedforwardNet":
        try:
            return cls(
                int(data["input_dim"]), int(data["width"]),
                tuple((layer["A"], layer["b"]) for layer in data["layers"]),
                np.asarray(data["readout"], dtype=float), float(data["weight_bound"]))
        except KeyError as exc:
            raise ValueError(f"net JSON is missing field {exc}") from None


def net_eval(net: FeedforwardNet, x) -> np.ndarray:
    """Reference forward pass; ``x`` of shape ``(d,)`` or ``(P, d)``."""
    z = np.asarray(x, dtype=float)
    for A, b in net.layers:
        z = np.tanh(z @ A.T + b)
    out = z @ net.readout
    return float(out) if np.ndim(out) == 0 else out


def demo_net() -> FeedforwardNet:
    """Two inputs, width 2, depth 2, every weight in [-0.5, 0.5]."""
    A1 = [[0.5, -0.3], [0.2, 0.4]]
    b1 = [0.1, -0.2]
    A2 = [[-0.4, 0.5], [0.3, 0.25]]
    b2 = [0.05, 0.15]
    return FeedforwardNet(2, 2, ((A1, b1), (A2, b2)), np.array([1.0, -0.5]), 0.5)


def random_net(rng, input_dim: int, width: int, depth: int, bound: float) -> FeedforwardNet:
    layers = []
    for n in range(depth):
        cols = input_dim if n == 0 else width
        layers.append((rng.uniform(-bound, bound, (width, cols)), rng.uniform(-bound, bound, width)))
    return FeedforwardNet(input_dim, width, tuple(layers), rng.uniform(-1, 1, width), bound)


def perturbation_threshold(K: float) -> float:
    """Largest admissible perturbation for the tanh gadget bound at gain ``K``."""
    a = 4 * K + 2
    return a / (9 * math.expm1(a))


def perturbation_bound(K: float, delta: float) -> float:
    """Bound on ``||y(1; eta) - y(1; 0)||_inf`` for ``||eta||_inf <= delta`` and ``|xi| <= K``."""
    if K < 0 or delta < 0:
        raise ValueError("K and delta must be non-negative")
    if delta >= perturbation_threshold(K):
        raise BudgetError(f"budget infeasible: delta={delta:.3g} >= threshold "
                          f"{perturbation_threshold(K):.3g} for K={K}")
    a = 4 * K + 2
    return a * math.exp(a) * delta / (a - 9 * math.expm1(a) * delta)


@dataclass(frozen=True)
class LayerBudget:
    K: float
    a1: float
    a2: float
    a3: float
    deltas: tuple      # delta_0 .. delta_D
    Deltas: tuple      # Delta_0 .. Delta_{D-1}
    r1: tuple
    r3: tuple
    eps: float
    c_norm: float

    def to_json(self) -> dict:
        return {"K": self.K, "a1": self.a1, "a2": self.a2, "a3": self.a3,
                "delta0": self.deltas[0], "deltas": list(self.deltas),
                "Deltas": list(self.Deltas), "r1": list(self.r1), "r3": list(self.r3),
                "eps": self.eps, "c_l1": self.c_norm}


def budget(net: FeedforwardNet, eps: float) -> LayerBudget:
    if not eps > 0:
        raise ValueError(f"eps must be positive, got {eps}")
    M, Wt, D = net.weight_bound, net.width, net.depth
    K = M * (Wt + 1)
    a3 = 4 * K + 2
    a1 = a3 * math.exp(a3) * K
    a2 = 9 * math.expm1(a3) * K
    cn = float(np.sum(np.abs(net.readout)))
    # delta0 <= a3^D eps / (a1^D |c| + a2 (a1 + a3)^D eps), in logs
    if cn > 0:
        t1 = D * math.log(a1) + math.log(cn)
        t2 = math.log(a2) + D * math.log(a1 + a3) + math.log(eps)
        big = max(t1, t2)
        log_den = big + math.log(math.exp(t1 - big) + math.exp(t2 - big))
        log_d0 = D * math.log(a3) + math.log(eps) - log_den
    else:
        log_d0 = math.log(a3 / (a2 * 2))  # no readout weight: any admissible budget works
    delta0 = math.exp(log_d0)
    limit = a3 / a2  # Step-2 admissibility: delta_k < a3 / a2
    for _ in range(200):
        deltas, ok = [delta0], True
        for _k in range(D):
            dk = deltas[-1]
            if not dk < limit:
                ok = False
                break
            deltas.append(a1 * dk / (a3 - a2 * dk))
        if ok:
            break
        delta0 *= 0.5
    else:
        raise BudgetError("could not find an admissible delta0")
    if not delta0 > 1e-300 or not np.isfinite(delta0):
        raise BudgetError(f"delta0 underflows double precision (log delta0 = {log_d0:.1f}); "
                          "reduce the weight bound or the depth")
    Deltas = deltas[1:]
    r1 = tuple(-math.log((M * Wt + 1) * dk / (1 + dk)) for dk in deltas[:-1])
    r3 = tuple(-math.log(Dk / (K + Dk)) for Dk in Deltas)
    for n, (g1, g3) in enumerate(zip(r1, r3)):
        if not (g1 > 0 and g3 > 0 and np.isfinite(g1) and np.isfinite(g3)):
            raise BudgetError(f"layer {n + 1}: gains r1={g1:.3g}, r3={g3:.3g} are not positive; "
                              "the budget is too loose for this net")
    return LayerBudget(K, a1, a2, a3, tuple(deltas), tuple(Deltas), r1, r3, eps, cn)


def tanh_step(m: int, label: str = "") -> ControlSegment:
    """Step 2 of a layer: a tanh gadget per coordinate, input on mu, output on alpha."""
    sb = SegmentBuilder(label=label)
    for j in range(m):
        a, lam, mu = j, m + j, 2 * m + j
        sb.quadratic(a, a, lam, -1.0).linear(a, mu, 1.0)
        sb.quadratic(lam, mu, mu, 1.0).quadratic(lam, lam, lam, -1.0)
    return sb.build()


def compile_ffnet(net: FeedforwardNet, eps: float,
                  activation_step: Callable[[int, str], ControlSegment] = tanh_step) -> ControlSchedule:
    """Schedule with ``3 * max(width, input_dim)`` states and ``3 * depth`` segments.

    ``activation_step(m, label)`` builds the middle segment of every layer;
    the default is the tanh gadget.
    """
    bud = budget(net, eps)
    m = net.state_block
    segs = []
    for k, (A, b) in enumerate(net.layers):
        r1, r3 = bud.r1[k], bud.r3[k]
        gain = r1 / -math.expm1(-r1)
        s1 = SegmentBuilder(label=f"layer {k + 1} weights")
        for j in range(m):
            s1.linear(j, j, -r1)
        for i in range(net.width):
            for j in range(A.shape[1]):
                s1.linear(2 * m + i, j, gain * A[i, j])
            s1.constant(2 * m + i, b[i])
        segs.append(s1.build())
        segs.append(activation_step(m, f"layer {k + 1} activation"))
        s3 = SegmentBuilder(label=f"layer {k + 1} cleanup")
        for j in range(m):
            s3.linear(m + j, m + j, -r3).linear(2 * m + j, 2 * m + j, -r3)
        segs.append(s3.build())
    readout = tuple((i, float(v)) for i, v in enumerate(net.readout) if v != 0.0)
    meta = {"kind": "ffnet", "eps": eps, "W": 3 * m, "D": len(segs), "budget": bud.to_json()}
    return ControlSchedule(3 * m, net.input_dim, tuple(segs), readout, metadata=meta)


def lemma5_segment() -> ControlSegment:
    """``y1' = 0``, ``y2' = y1 - y2 y3``, ``y3' = y1^2 - y3^2`` on slots 0, 1, 2."""
    return (SegmentBuilder(label="tanh (perturbed)")
            .linear(1, 0, 1.0).quadratic(1, 1, 2, -1.0)
            .quadratic(2, 0, 0, 1.0).quadratic(2, 2, 2, -1.0).build())


@dataclass
class Lemma5Report:
    K: float
    delta: float
    trials: int
    bound: float
    max_deviation: float
    max_ratio: float
    violations: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.violations

    def to_json(self) -> dict:
        return {"K": self.K, "delta": self.delta, "trials": self.trials, "bound": self.bound,
                "max_deviation": self.max_deviation, "max_ratio": self.max_ratio,
                "violations": self.violations[:10], "passed": self.passed}


def verify_lemma5(K: float, delta: float, trials: int, rng=None,
                  tol: Tolerance | None = None) -> Lemma5Report:
    """Simulate the perturbed tanh gadget and compare against :func:`perturbation_bound`.

    Half the trials put ``eta`` on a corner of the ``delta``-box, which is
    where the deviation is largest.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    bound = perturbation_bound(K, delta)
    tol = tol or Tolerance(1e-12, 1e-15)
    xi = rng.uniform(-K, K, trials)
    eta = rng.uniform(-delta, delta, (trials, 3))
    corner = rng.random(trials) < 0.5
    eta[corner] = delta * np.sign(eta[corner])
    seg = lemma5_segment()
    sched = ControlSchedule(3, 3, (seg,), ((1, 1.0),))
    clean = np.zeros((trials, 3))
    clean[:, 0] = xi
    Y0 = simulate_batch(sched, clean, tol).final_state
    Y1 = simulate_batch(sched, clean + eta, tol).final_state
    dev = np.max(np.abs(Y1 - Y0), axis=1)
    bad = np.nonzero(dev > bound)[0]
    violations = [{"xi": float(xi[i]), "eta": eta[i].tolist(), "deviation": float(dev[i])}
                  for i in bad]
    return Lemma5Report(K, delta, trials, bound, float(dev.max(initial=0.0)),
                        float(dev.max(initial=0.0) / bound) if bound > 0 else 0.0, violations)


def load_net(path) -> FeedforwardNet:
    from .io import load_json
    return FeedforwardNet.from_json(load_json(path))
