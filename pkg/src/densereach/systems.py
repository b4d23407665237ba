"""Benchmark dynamical systems and an RK4 trajectory simulator.

Each system bundles a vector field f, its divergence ∇·f (analytic where
available, central finite differences otherwise), default integration
settings, and an initial-state domain.  Vector fields accept a single
state (d,) or a batch (n, d) and return the matching shape.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .distributions import InitialDistribution
from .errors import IntegrationDivergedError
from .geometry import HyperRectangle

# Central-difference step for divergence of black-box dynamics.
DIVERGENCE_FD_EPS = 1e-8
# Internal RK4 substeps per recorded time step.
RK4_SUBSTEPS = 10

SYSTEM_IDS = ("vdp", "dint", "kop", "robot", "car", "scalar1d")


@dataclass(frozen=True)
class SystemSpec:
    """A benchmark system: identity, parameters, and simulation defaults."""

    id: str
    state_dim: int
    params: dict = field(default_factory=dict)
    init_domain: HyperRectangle = None
    default_dt: float = 0.05
    default_steps: int = 50

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "state_dim": self.state_dim,
            "params": {k: float(v) for k, v in self.params.items()},
            "init_lo": self.init_domain.lo.tolist(),
            "init_hi": self.init_domain.hi.tolist(),
            "default_dt": self.default_dt,
            "default_steps": self.default_steps,
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "SystemSpec":
        spec = make_system(payload["id"], **payload.get("params", {}))
        return cls(
            id=spec.id,
            state_dim=spec.state_dim,
            params=dict(spec.params),
            init_domain=HyperRectangle(np.asarray(payload["init_lo"]),
                                       np.asarray(payload["init_hi"])),
            default_dt=float(payload.get("default_dt", spec.default_dt)),
            default_steps=int(payload.get("default_steps", spec.default_steps)),
        )


@dataclass(frozen=True)
class Trajectory:
    """One simulated path with per-state divergence labels."""

    x0: np.ndarray
    states: np.ndarray        # (steps + 1, d)
    times: np.ndarray         # (steps + 1,), k * dt
    divergences: np.ndarray   # (steps + 1,)


# ---------------------------------------------------------------------------
# Vector fields and analytic divergences.  X is always (n, d) here.
# ---------------------------------------------------------------------------

def _vdp_f(p, X):
    x, y = X[:, 0], X[:, 1]
    return np.stack([y, p["mu"] * (1.0 - x * x) * y - x], axis=1)


def _vdp_div(p, X):
    x = X[:, 0]
    return p["mu"] * (1.0 - x * x)


def _dint_u(X):
    return np.clip(-0.5 * X[:, 0] - 1.0 * X[:, 1], -1.0, 1.0)


def _dint_f(p, X):
    u = _dint_u(X)
    return np.stack([X[:, 1] + 0.5 * u, u], axis=1)


def _dint_div(p, X):
    # u = clip(-0.5 x - y): inside the linear band the feedback contributes
    # 0.5·(-0.5) + 1·(-1) = -1.25; a saturated u is locally constant.
    raw = -0.5 * X[:, 0] - 1.0 * X[:, 1]
    return np.where(np.abs(raw) < 1.0, -1.25, 0.0)


def _kop_f(p, X):
    x1, x2, x3 = X[:, 0], X[:, 1], X[:, 2]
    return np.stack([x1 * x3, -x2 * x3, -x1 * x1 + x2 * x2], axis=1)


def _kop_div(p, X):
    return np.zeros(X.shape[0])


def _robot_controls(p, X):
    heading_err = np.arctan2(p["goal_y"] - X[:, 1], p["goal_x"] - X[:, 0]) - X[:, 2]
    u_w = np.tanh(p["k_h"] * heading_err)
    u_a = np.tanh(p["k_v"] * (p["v_des"] - X[:, 3]))
    return u_w, u_a


def _robot_f(p, X):
    theta, v = X[:, 2], X[:, 3]
    u_w, u_a = _robot_controls(p, X)
    return np.stack([v * np.cos(theta), v * np.sin(theta), u_w, u_a], axis=1)


def _car_f(p, X):
    ex, ey, eth, a = X[:, 0], X[:, 1], X[:, 2], X[:, 3]
    steer = p["k2"] * ey + p["k3"] * np.sin(eth)
    omega = p["w_ref"] + p["v_ref"] * steer
    return np.stack([
        omega * ey - p["k1"] * ex + a * ex,
        -omega * ex + p["v_ref"] * np.sin(eth) + a * ey,
        -p["v_ref"] * steer,
        np.zeros_like(a),
    ], axis=1)


def _car_div(p, X):
    ex, eth, a = X[:, 0], X[:, 2], X[:, 3]
    return (2.0 * a - p["k1"] - p["k2"] * p["v_ref"] * ex
            - p["v_ref"] * p["k3"] * np.cos(eth))


def _scalar1d_f(p, X):
    return -X * X


def _scalar1d_div(p, X):
    return -2.0 * X[:, 0]


# id -> (dim, dynamics, analytic divergence or None, params,
#        init box, dt, steps)
_REGISTRY = {
    "vdp": (2, _vdp_f, _vdp_div, {"mu": 1.0},
            ([-2.5, -2.5], [2.5, 2.5]), 0.05, 50),
    "dint": (2, _dint_f, _dint_div, {},
             ([-0.5, -1.0], [4.0, 1.0]), 1.0, 10),
    "kop": (3, _kop_f, _kop_div, {},
            ([0.0, -2.0, -2.0], [2.0, 2.0, 2.0]), 0.125, 80),
    "robot": (4, _robot_f, None,
              {"k_h": 2.0, "k_v": 1.0, "v_des": 1.0,
               "goal_x": 1.5, "goal_y": 1.5},
              ([-1.8, -1.8, 0.0, 1.0], [-1.2, -1.2, math.pi / 2, 1.5]),
              0.05, 50),
    "car": (4, _car_f, _car_div,
            {"k1": 0.5, "k2": 0.5, "k3": 1.0, "v_ref": 1.0, "w_ref": 0.0},
            ([-2.1, -2.1, 0.0, 0.0], [2.1, 2.1, 0.1, 1.0]), 0.10, 50),
    "scalar1d": (1, _scalar1d_f, _scalar1d_div, {},
                 ([0.0], [1.0]), 0.05, 18),
}

# Gaussian initial distribution of the three-state quadratic system:
# per-coordinate means and standard deviations, truncated to the init box.
_KOP_INIT_MU = (1.0, 0.0, 0.0)
_KOP_INIT_SIGMA = (0.25, 0.5, 0.5)


def make_system(name: str, init_domain: HyperRectangle | None = None,
                default_dt: float | None = None,
                default_steps: int | None = None, **param_overrides) -> SystemSpec:
    """Build a SystemSpec by id, optionally overriding parameters/defaults."""
    if name not in _REGISTRY:
        raise ValueError(
            f"unknown system {name!r}; choose from {', '.join(SYSTEM_IDS)}")
    dim, _, _, params, (lo, hi), dt, steps = _REGISTRY[name]
    params = dict(params)
    for key, value in param_overrides.items():
        if key not in params:
            raise ValueError(f"system {name!r} has no parameter {key!r}")
        params[key] = float(value)
    return SystemSpec(
        id=name,
        state_dim=dim,
        params=params,
        init_domain=init_domain if init_domain is not None
        else HyperRectangle(np.array(lo), np.array(hi)),
        default_dt=dt if default_dt is None else float(default_dt),
        default_steps=steps if default_steps is None else int(default_steps),
    )


def register_system(name: str, state_dim: int, dynamics, divergence=None,
                    params: dict | None = None, init_lo=None, init_hi=None,
                    default_dt: float = 0.1, default_steps: int = 10) -> SystemSpec:
    """Register a custom system and return its spec.

    ``dynamics(params, X)`` maps (n, d) -> (n, d); ``divergence(params, X)``
    maps (n, d) -> (n,) or is None to route through finite differences.
    Intended for tests and ad-hoc studies; ids must not collide.
    """
    if name in _REGISTRY:
        raise ValueError(f"system id {name!r} already registered")
    lo = np.zeros(state_dim) if init_lo is None else np.asarray(init_lo)
    hi = np.ones(state_dim) if init_hi is None else np.asarray(init_hi)
    _REGISTRY[name] = (state_dim, dynamics, divergence, dict(params or {}),
                       (lo.tolist(), hi.tolist()), default_dt, default_steps)
    return make_system(name)


def default_initial_distribution(spec: SystemSpec) -> InitialDistribution:
    """The benchmark's initial density on spec.init_domain."""
    if spec.id == "kop":
        return InitialDistribution.gaussian(
            spec.init_domain, _KOP_INIT_MU, _KOP_INIT_SIGMA)
    return InitialDistribution.uniform(spec.init_domain)


# ---------------------------------------------------------------------------
# Evaluation.
# ---------------------------------------------------------------------------

def _as_batch(spec: SystemSpec, x) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    X = np.atleast_2d(x)
    if X.shape[1] != spec.state_dim:
        raise ValueError(
            f"state dimension {X.shape[1]} does not match "
            f"{spec.id} ({spec.state_dim})")
    return X, single


def eval_dynamics(spec: SystemSpec, x):
    """f(x) for a single state (d,) or a batch (n, d)."""
    X, single = _as_batch(spec, x)
    out = _REGISTRY[spec.id][1](spec.params, X)
    return out[0] if single else out


def eval_divergence(spec: SystemSpec, x):
    """∇·f(x); analytic when available, finite differences otherwise."""
    X, single = _as_batch(spec, x)
    div_fn = _REGISTRY[spec.id][2]
    if div_fn is None:
        out = divergence_fd(lambda pts: eval_dynamics(spec, pts), X)
    else:
        out = div_fn(spec.params, X)
    return float(out[0]) if single else out


def divergence_fd(f, x, eps: float = DIVERGENCE_FD_EPS):
    """Central-difference divergence Σ_i (f_i(x+εe_i) − f_i(x−εe_i)) / 2ε.

    f maps (n, d) -> (n, d); x may be (d,) or (n, d).
    """
    if eps <= 0.0:
        raise ValueError("eps must be positive")
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    X = np.atleast_2d(x)
    total = np.zeros(X.shape[0])
    with np.errstate(all="ignore"):
        for i in range(X.shape[1]):
            shift = np.zeros(X.shape[1])
            shift[i] = eps
            total += (f(X + shift)[:, i] - f(X - shift)[:, i]) / (2.0 * eps)
    if not np.all(np.isfinite(total)):
        raise ArithmeticError("dynamics returned non-finite values near x")
    return float(total[0]) if single else total


# ---------------------------------------------------------------------------
# Simulation.
# ---------------------------------------------------------------------------

def _rk4_step(spec: SystemSpec, X: np.ndarray, h: float) -> np.ndarray:
    f = _REGISTRY[spec.id][1]
    p = spec.params
    k1 = f(p, X)
    k2 = f(p, X + 0.5 * h * k1)
    k3 = f(p, X + 0.5 * h * k2)
    k4 = f(p, X + h * k3)
    return X + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def rollout(spec: SystemSpec, X0: np.ndarray, dt: float, steps: int,
            substeps: int = RK4_SUBSTEPS) -> tuple[np.ndarray, np.ndarray]:
    """RK4-integrate a batch of initial states.

    Returns (states, divergences) with shapes (n, steps+1, d) and
    (n, steps+1).  Raises when any trajectory leaves the finite range,
    naming the first offending step and trajectory.
    """
    if dt <= 0.0 or steps < 1 or substeps < 1:
        raise ValueError("dt must be positive and steps/substeps >= 1")
    X0 = np.atleast_2d(np.asarray(X0, dtype=np.float64))
    n = X0.shape[0]
    states = np.empty((n, steps + 1, spec.state_dim))
    states[:, 0] = X0
    h = dt / substeps
    X = X0.copy()
    for k in range(1, steps + 1):
        with np.errstate(all="ignore"):
            for _ in range(substeps):
                X = _rk4_step(spec, X, h)
        bad = ~np.all(np.isfinite(X), axis=1)
        if np.any(bad):
            i = int(np.flatnonzero(bad)[0])
            raise IntegrationDivergedError(
                f"trajectory {i} became non-finite at step {k}")
        states[:, k] = X
    flat = states.reshape(n * (steps + 1), spec.state_dim)
    divergences = np.asarray(eval_divergence(spec, flat),
                             dtype=np.float64).reshape(n, steps + 1)
    return states, divergences


def simulate(spec: SystemSpec, x0, dt: float, steps: int,
             substeps: int = RK4_SUBSTEPS) -> Trajectory:
    """Simulate one trajectory from x0 with divergence labels attached."""
    x0 = np.asarray(x0, dtype=np.float64)
    if x0.ndim != 1 or x0.shape[0] != spec.state_dim:
        raise ValueError(
            f"x0 must be a state vector of dimension {spec.state_dim}")
    if not spec.init_domain.contains(x0):
        warnings.warn(f"x0 lies outside the {spec.id} initial domain",
                      stacklevel=2)
    states, divergences = rollout(spec, x0[None, :], dt, steps, substeps)
    times = dt * np.arange(steps + 1)
    return Trajectory(x0=x0, states=states[0], times=times,
                      divergences=divergences[0])


def sample_initial(dist: InitialDistribution, n: int, seed: int) -> np.ndarray:
    """n i.i.d. initial states from dist, deterministic in seed."""
    return dist.sample(n, np.random.default_rng(seed))
