"""Density transport along trajectories and training-dataset assembly.

The state density rho obeys a conservation law along the flow: writing
g(t) = log(rho(t)/rho(0)), the pair [x, g] satisfies the augmented ODE
xdot = f(x), gdot = -div f(x).  Integrating g in log space keeps the
exponential density gain stable over long horizons.  The one-dimensional
quadratic-decay system additionally admits a closed-form density used as
an exact oracle.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import IntegrationDivergedError
from .systems import (
    RK4_SUBSTEPS,
    SystemSpec,
    default_initial_distribution,
    eval_divergence,
    eval_dynamics,
    make_system,
)


@dataclass(frozen=True)
class AugmentedState:
    """A state paired with its transported probability density."""

    x: np.ndarray
    rho: float


@dataclass(frozen=True)
class TrajectoryDataset:
    """Simulated trajectories with divergence labels, ready for training."""

    system: SystemSpec
    dt: float
    states: np.ndarray        # (n, steps+1, d)
    divergences: np.ndarray   # (n, steps+1)
    rho: np.ndarray | None = None   # optional (n, steps+1) ground truth

    @property
    def n_traj(self) -> int:
        return self.states.shape[0]

    @property
    def steps(self) -> int:
        return self.states.shape[1] - 1

    @property
    def x0(self) -> np.ndarray:
        return self.states[:, 0]

    @property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(self.states.shape[1])


@dataclass(frozen=True)
class TrainingBatch:
    """Flattened (x0, t) -> (x_t, div) pairs for the joint flow/density loss.

    Each row k also carries the neighboring sample time ``t_pair`` and a
    ``sign`` so that the density-gain time derivative can be formed as
    sign * (G(t_pair) - G(t)) / dt: +1 selects a forward difference, -1 the
    backward difference used at a trajectory's final step.
    """

    x0: np.ndarray           # (m, d)
    t: np.ndarray            # (m,)
    t_pair: np.ndarray       # (m,)
    sign: np.ndarray         # (m,)
    target: np.ndarray       # (m, d) state reached at time t
    divergence: np.ndarray   # (m,)
    dt: float

    def __len__(self) -> int:
        return self.x0.shape[0]


# ---------------------------------------------------------------------------
# Augmented flow.
# ---------------------------------------------------------------------------

def _augmented_rk4(spec: SystemSpec, X: np.ndarray, G: np.ndarray, h: float):
    """One RK4 step of [x, g] with xdot = f(x), gdot = -div f(x)."""
    k1x = eval_dynamics(spec, X)
    k1g = -eval_divergence(spec, X)
    X2 = X + 0.5 * h * k1x
    k2x = eval_dynamics(spec, X2)
    k2g = -eval_divergence(spec, X2)
    X3 = X + 0.5 * h * k2x
    k3x = eval_dynamics(spec, X3)
    k3g = -eval_divergence(spec, X3)
    X4 = X + h * k3x
    k4x = eval_dynamics(spec, X4)
    k4g = -eval_divergence(spec, X4)
    Xn = X + (h / 6.0) * (k1x + 2.0 * k2x + 2.0 * k3x + k4x)
    Gn = G + (h / 6.0) * (k1g + 2.0 * k2g + 2.0 * k3g + k4g)
    return Xn, Gn


def flow_with_log_gain(spec: SystemSpec, X0: np.ndarray, t: float,
                       dt_internal: float | None = None):
    """Flow a batch to time t, returning (states, log density gain).

    The gain column is g(t) = -∫0..t div f(x(τ)) dτ, so that
    rho(t) = rho0 · exp(g).
    """
    if t < 0.0:
        raise ValueError("t must be nonnegative")
    if dt_internal is None:
        dt_internal = spec.default_dt / RK4_SUBSTEPS
    if dt_internal <= 0.0:
        raise ValueError("dt_internal must be positive")
    X = np.atleast_2d(np.asarray(X0, dtype=np.float64)).copy()
    G = np.zeros(X.shape[0])
    n_full, rem = divmod(t, dt_internal)
    with np.errstate(all="ignore"):
        for _ in range(int(n_full)):
            X, G = _augmented_rk4(spec, X, G, dt_internal)
        if rem > 1e-12 * max(t, 1.0):
            X, G = _augmented_rk4(spec, X, G, rem)
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(G))):
        raise IntegrationDivergedError(
            f"augmented flow became non-finite before t={t}")
    return X, G


def augmented_flow(spec: SystemSpec, x0, rho0: float, t: float,
                   dt_internal: float | None = None) -> AugmentedState:
    """Transport (x0, rho0) to time t along the augmented ODE."""
    if rho0 < 0.0:
        raise ValueError("rho0 must be nonnegative")
    x0 = np.asarray(x0, dtype=np.float64)
    X, G = flow_with_log_gain(spec, x0[None, :], t, dt_internal)
    return AugmentedState(x=X[0], rho=float(rho0 * np.exp(G[0])))


def closed_form_1d(x, t):
    """Exact density 1/(1 - x t)^2 of the quadratic-decay system.

    Valid on trajectories of xdot = -x^2 started from a unit-density point:
    the product x·t stays below one along every such trajectory.
    """
    x = np.asarray(x, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    prod = x * t
    if np.any(prod >= 1.0):
        raise ValueError("closed form requires x * t < 1")
    out = 1.0 / (1.0 - prod) ** 2
    return float(out) if out.ndim == 0 else out


# ---------------------------------------------------------------------------
# Dataset assembly.
# ---------------------------------------------------------------------------

def build_dataset(spec: SystemSpec, n_traj: int, steps: int, dt: float,
                  seed: int, split: float = 0.8, dist=None,
                  substeps: int = RK4_SUBSTEPS, with_density: bool = False):
    """Simulate n_traj trajectories and split them into train/val sets.

    Initial states come from ``dist`` (default: the system's benchmark
    distribution).  The split is a seeded shuffle, deterministic in
    ``seed``.  With ``with_density`` the exact transported density is
    attached (requires a density-evaluable dist).
    """
    if not 0.0 < split < 1.0:
        raise ValueError("split must lie strictly between 0 and 1")
    if n_traj < 2:
        raise ValueError("need at least two trajectories to split")
    rng = np.random.default_rng(seed)
    if dist is None:
        dist = default_initial_distribution(spec)
    X0 = dist.sample(n_traj, rng)

    rho = None
    if with_density:
        states = np.empty((n_traj, steps + 1, spec.state_dim))
        gains = np.empty((n_traj, steps + 1))
        states[:, 0] = X0
        gains[:, 0] = 0.0
        X, G = X0.copy(), np.zeros(n_traj)
        h = dt / substeps
        with np.errstate(all="ignore"):
            for k in range(1, steps + 1):
                for _ in range(substeps):
                    X, G = _augmented_rk4(spec, X, G, h)
                bad = ~(np.all(np.isfinite(X), axis=1) & np.isfinite(G))
                if np.any(bad):
                    i = int(np.flatnonzero(bad)[0])
                    raise IntegrationDivergedError(
                        f"trajectory {i} became non-finite at step {k}")
                states[:, k] = X
                gains[:, k] = G
        flat = states.reshape(-1, spec.state_dim)
        divergences = np.asarray(eval_divergence(spec, flat)).reshape(
            n_traj, steps + 1)
        rho = dist.pdf(X0)[:, None] * np.exp(gains)
    else:
        from .systems import rollout
        states, divergences = rollout(spec, X0, dt, steps, substeps)

    order = rng.permutation(n_traj)
    n_train = min(max(int(n_traj * split), 1), n_traj - 1)
    tr, va = order[:n_train], order[n_train:]

    def subset(idx):
        return TrajectoryDataset(
            system=spec, dt=dt, states=states[idx],
            divergences=divergences[idx],
            rho=None if rho is None else rho[idx])

    return subset(np.sort(tr)), subset(np.sort(va))


def make_training_batch(dataset: TrajectoryDataset) -> TrainingBatch:
    """Flatten a dataset into per-(x0, t) rows with difference partners."""
    n, T1, d = dataset.states.shape
    times = dataset.times
    x0 = np.repeat(dataset.x0, T1, axis=0)
    t = np.tile(times, n)
    k = np.arange(T1)
    pair_idx = np.where(k + 1 < T1, k + 1, k - 1)
    sign = np.where(k + 1 < T1, 1.0, -1.0)
    t_pair = np.tile(times[pair_idx], n)
    sign = np.tile(sign, n)
    target = dataset.states.reshape(n * T1, d)
    divergence = dataset.divergences.reshape(n * T1)
    return TrainingBatch(x0=x0, t=t, t_pair=t_pair, sign=sign, target=target,
                         divergence=divergence, dt=dataset.dt)


def transport_z_targets(dataset: TrajectoryDataset) -> np.ndarray:
    """Per-row regression targets for the normalized log-gain output z.

    Integrating the log-density gain along each stored trajectory gives
    g(k) = sum_{j<k} log(1 - dt * div_j), the exact fixed point of the
    finite-difference transport residual on the same grid; the target for z
    is g/t (and its t->0 limit, -div, on the first row).  Rows align with
    make_training_batch order.  Steps where dt * div_j >= 1/2 fall back to
    the plain Riemann increment -dt * div_j, keeping the target finite when
    a trajectory crosses a strongly expanding region.
    """
    dt = dataset.dt
    div = dataset.divergences[:, :-1]
    inc = np.where(dt * div < 0.5, np.log1p(-np.minimum(dt * div, 0.5)),
                   -dt * div)
    n = dataset.n_traj
    g = np.concatenate([np.zeros((n, 1)), np.cumsum(inc, axis=1)], axis=1)
    times = dataset.times
    z = np.empty_like(g)
    z[:, 0] = -dataset.divergences[:, 0]
    z[:, 1:] = g[:, 1:] / times[1:]
    return z.reshape(-1)


# ---------------------------------------------------------------------------
# JSON-lines serialization.
# ---------------------------------------------------------------------------

def save_dataset(path, dataset: TrajectoryDataset) -> None:
    """Write one JSON record per trajectory."""
    with open(path, "w", encoding="utf-8") as fh:
        for i in range(dataset.n_traj):
            record = {
                "system": dataset.system.id,
                "params": {k: float(v)
                           for k, v in dataset.system.params.items()},
                "x0": dataset.states[i, 0].tolist(),
                "dt": dataset.dt,
                "states": dataset.states[i].tolist(),
                "divergences": dataset.divergences[i].tolist(),
            }
            if dataset.rho is not None:
                record["rho"] = dataset.rho[i].tolist()
            fh.write(json.dumps(record) + "\n")


def load_dataset(path) -> TrajectoryDataset:
    """Read a JSON-lines trajectory file written by save_dataset."""
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                records.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise ValueError(
                    f"{path}: malformed JSON on line {lineno}") from exc
    if not records:
        raise ValueError(f"{path}: no trajectory records")
    first = records[0]
    spec = make_system(first["system"], **first.get("params", {}))
    dt = float(first["dt"])
    for i, rec in enumerate(records):
        if rec["system"] != spec.id or float(rec["dt"]) != dt:
            raise ValueError(f"{path}: record {i} mixes systems or dt values")
    states = np.array([rec["states"] for rec in records])
    divergences = np.array([rec["divergences"] for rec in records])
    rho = None
    if all("rho" in rec for rec in records):
        rho = np.array([rec["rho"] for rec in records])
    return TrajectoryDataset(system=spec, dt=dt, states=states,
                             divergences=divergences, rho=rho)
