"""Joint flow-map / density-concentration ReLU network.

One feed-forward ReLU net maps a normalized (x0, t) pair to (z, x_hat):
``x_hat`` estimates the flow Phi(x0, t) and ``z`` is the intermediate
density output, turned into the multiplicative density gain
G = exp(t * z) so that G(x0, 0) = 1 holds structurally.  Training
minimizes a flow regression term plus the squared Liouville residual
dG/dt + G * div f formed with per-trajectory finite differences in t;
gradients are hand-rolled backpropagation and the optimizer is Adam.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    CheckpointFormatError,
    TrainingDivergedError,
    UnsupportedVersionError,
)
from .liouville import (TrainingBatch, TrajectoryDataset, make_training_batch,
                        transport_z_targets)

CHECKPOINT_VERSION = 1
# |t*z| beyond this saturates the density gain exp(t*z).
GAIN_CLIP = 60.0
_TRAIN_TZ_CLIP = 500.0   # overflow guard only; exp(500) is still finite
_ADAM_BETAS = (0.9, 0.999)
_ADAM_EPS = 1e-8
# Running-mean smoothing for per-term loss normalization during training.
_TERM_EMA = 0.99


@dataclass
class DensityNet:
    """Affine/ReLU layers plus input normalization and provenance metadata.

    weights[l] has shape (fan_out, fan_in); hidden activations are ReLU and
    the final layer is affine.  Inputs are normalized per coordinate as
    (u - norm_shift) / norm_scale with u = (x0, t).  Output row 0 is z,
    rows 1..d are the flow estimate.
    """

    weights: list
    biases: list
    norm_shift: np.ndarray
    norm_scale: np.ndarray
    system_id: str | None = None
    system_params: dict = field(default_factory=dict)
    dt: float | None = None

    @property
    def state_dim(self) -> int:
        return self.weights[0].shape[1] - 1

    @property
    def hidden_dims(self) -> tuple:
        return tuple(w.shape[0] for w in self.weights[:-1])

    def copy_weights(self):
        return [w.copy() for w in self.weights], [b.copy() for b in self.biases]


@dataclass(frozen=True)
class TrainConfig:
    """Knobs for train(); lam is the flow/Liouville balance weight."""

    lam: float = 1.0
    lr: float = 1e-3
    epochs: int = 200
    batch_size: int = 4096
    seed: int = 0
    hidden: tuple = (64, 64, 64)

    def __post_init__(self):
        if self.lam < 0.0:
            raise ValueError("lam must be nonnegative")
        if self.lr <= 0.0:
            raise ValueError("lr must be positive")


def init_net(state_dim: int, hidden, seed: int, norm_shift=None,
             norm_scale=None, system_id=None, system_params=None,
             dt=None) -> DensityNet:
    """He-initialized network with input width state_dim + 1."""
    rng = np.random.default_rng(seed)
    dims = [state_dim + 1, *hidden, state_dim + 1]
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        weights.append(rng.normal(0.0, np.sqrt(2.0 / fan_in),
                                  size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    shift = (np.zeros(state_dim + 1) if norm_shift is None
             else np.asarray(norm_shift, dtype=np.float64))
    scale = (np.ones(state_dim + 1) if norm_scale is None
             else np.asarray(norm_scale, dtype=np.float64))
    if np.any(scale <= 0.0):
        raise ValueError("norm_scale must be positive")
    return DensityNet(weights=weights, biases=biases, norm_shift=shift,
                      norm_scale=scale, system_id=system_id,
                      system_params=dict(system_params or {}), dt=dt)


def norm_stats(batch: TrainingBatch):
    """Zero-mean / unit-range input statistics from a training batch."""
    U = np.column_stack([batch.x0, batch.t])
    shift = U.mean(axis=0)
    scale = U.max(axis=0) - U.min(axis=0)
    scale[scale <= 0.0] = 1.0
    return shift, scale


def prepare_net(data: TrajectoryDataset, hidden, seed: int) -> DensityNet:
    """Fresh net sized and normalized for a dataset."""
    batch = make_training_batch(data)
    shift, scale = norm_stats(batch)
    return init_net(data.system.state_dim, hidden, seed, norm_shift=shift,
                    norm_scale=scale, system_id=data.system.id,
                    system_params=data.system.params, dt=data.dt)


# ---------------------------------------------------------------------------
# Forward pass.
# ---------------------------------------------------------------------------

def _normalize_inputs(net: DensityNet, X0: np.ndarray, T: np.ndarray):
    Xn = (X0 - net.norm_shift[:-1]) / net.norm_scale[:-1]
    Tn = (T - net.norm_shift[-1]) / net.norm_scale[-1]
    return Xn, Tn


def _forward_pass(net: DensityNet, Xn: np.ndarray, Tn: np.ndarray,
                  keep: bool = False):
    """Forward through the layers; optionally keep activations for backprop.

    Layer 1 is evaluated in split form — the x block as a matrix product
    plus a t-dependent bias — so that a fixed-t slice of the network (with
    the time column folded into the first-layer bias) reproduces this pass
    bit for bit.
    """
    W1, b1 = net.weights[0], net.biases[0]
    pre = Xn @ W1[:, :-1].T + (Tn[:, None] * W1[:, -1] + b1)
    last = len(net.weights) - 1
    if last == 0:
        a = pre
        acts, pre_acts = [np.column_stack([Xn, Tn])], []
    else:
        a = np.maximum(pre, 0.0)
        acts = [np.column_stack([Xn, Tn]), a] if keep else [a]
        pre_acts = [pre] if keep else []
        for l in range(1, last + 1):
            pre = a @ net.weights[l].T + net.biases[l]
            if l < last:
                a = np.maximum(pre, 0.0)
                if keep:
                    pre_acts.append(pre)
                    acts.append(a)
            else:
                a = pre
    if keep:
        return a, acts, pre_acts
    return a


def forward(net: DensityNet, x0, t):
    """(z, x_hat) for one state or a batch.

    x0 may be (d,) with scalar t, or (n, d) with t scalar or (n,).
    """
    x0 = np.asarray(x0, dtype=np.float64)
    single = x0.ndim == 1
    X0 = np.atleast_2d(x0)
    if X0.shape[1] != net.state_dim:
        raise ValueError(
            f"x0 has dimension {X0.shape[1]}, net expects {net.state_dim}")
    T = np.broadcast_to(np.asarray(t, dtype=np.float64), (X0.shape[0],))
    Xn, Tn = _normalize_inputs(net, X0, T)
    out = _forward_pass(net, Xn, Tn)
    z, x_hat = out[:, 0], out[:, 1:]
    if single:
        return float(z[0]), x_hat[0]
    return z, x_hat


def g_of(z, t):
    """Density gain exp(t*z), saturated (with a warning) at |t*z| = 60."""
    tz = np.asarray(z, dtype=np.float64) * np.asarray(t, dtype=np.float64)
    if np.any(np.abs(tz) > GAIN_CLIP):
        warnings.warn("density gain saturated: |t*z| exceeds the clip range",
                      stacklevel=2)
        tz = np.clip(tz, -GAIN_CLIP, GAIN_CLIP)
    out = np.exp(tz)
    return float(out) if out.ndim == 0 else out


def density_estimate(net: DensityNet, x0, t, rho0) -> float:
    """Learned density rho0(x0) * G(x0, t); zero outside the support."""
    z, _ = forward(net, x0, t)
    base = rho0.pdf(x0)
    if np.isscalar(z):
        return float(base * g_of(z, t))
    return base * g_of(z, t)


# ---------------------------------------------------------------------------
# Loss and gradients.
# ---------------------------------------------------------------------------

def _batch_arrays(net: DensityNet, batch: TrainingBatch):
    Xn, Tn_k = _normalize_inputs(net, batch.x0, batch.t)
    _, Tn_p = _normalize_inputs(net, batch.x0, batch.t_pair)
    return Xn, Tn_k, Tn_p


def _loss_and_grads(net: DensityNet, batch: TrainingBatch, Xn, Tn_k, Tn_p,
                    flow_w: float, liou_w: float, want_grads: bool,
                    relative: bool = False):
    """Weighted loss flow_w * flow_term + liou_w * liouville_term.

    Terms are means over batch rows of the squared flow error and squared
    Liouville residual; returns (loss, flow_term, liou_term, grads).

    With ``relative=True`` each squared residual is divided by
    max(G(t_k), G(t_pair))^2, held constant for the gradient.  The residual
    scales with G itself, so on systems whose gain spans many e-folds the
    raw objective is dominated by the highest-gain rows and admits a
    spurious minimum that silences them by collapsing G toward zero; the
    per-row normalization removes the scale while keeping the same zero set
    (G > 0 always), and the symmetric denominator bounds the normalized
    residual by 1/dt + |divergence| in both runaway directions so neither
    is cheap.  The relative path also widens the exp clamp from GAIN_CLIP
    to a never-active safety value: clamping at GAIN_CLIP would zero the
    gradient and turn the clamp region itself into a spurious basin.
    """
    m = len(batch)
    X2 = np.vstack([Xn, Xn])
    T2 = np.concatenate([Tn_k, Tn_p])
    if want_grads:
        out, acts, pre_acts = _forward_pass(net, X2, T2, keep=True)
    else:
        out = _forward_pass(net, X2, T2)
    z_k, z_p = out[:m, 0], out[m:, 0]
    phi_k = out[:m, 1:]

    clamp = _TRAIN_TZ_CLIP if relative else GAIN_CLIP
    tz_k = np.clip(batch.t * z_k, -clamp, clamp)
    tz_p = np.clip(batch.t_pair * z_p, -clamp, clamp)
    G_k, G_p = np.exp(tz_k), np.exp(tz_p)
    gdot = batch.sign * (G_p - G_k) / batch.dt
    resid = gdot + G_k * batch.divergence
    if relative:
        scale = np.maximum(G_k, G_p)
        resid = resid / scale
    flow_err = phi_k - batch.target

    flow_term = float(np.mean(np.sum(flow_err ** 2, axis=1)))
    liou_term = float(np.mean(resid ** 2))
    total = flow_w * flow_term + liou_w * liou_term
    if not want_grads:
        return total, flow_term, liou_term, None

    # d(resid)/dz at the two evaluation points; exp saturation kills the
    # gradient exactly where the clip is active.
    live_k = np.abs(batch.t * z_k) < clamp
    live_p = np.abs(batch.t_pair * z_p) < clamp
    dG_k = batch.t * G_k * live_k
    dG_p = batch.t_pair * G_p * live_p
    if relative:
        dG_k = dG_k / scale
        dG_p = dG_p / scale
    dz_k = 2.0 * liou_w / m * resid * dG_k * (batch.divergence
                                              - batch.sign / batch.dt)
    dz_p = 2.0 * liou_w / m * resid * batch.sign * dG_p / batch.dt

    delta = np.zeros_like(out)
    delta[:m, 0] = dz_k
    delta[m:, 0] = dz_p
    delta[:m, 1:] = 2.0 * flow_w / m * flow_err
    return total, flow_term, liou_term, _backprop(net, delta, acts, pre_acts)


def _backprop(net: DensityNet, delta, acts, pre_acts):
    """Propagate an output-layer delta into per-layer weight/bias grads."""
    grads_w = [None] * len(net.weights)
    grads_b = [None] * len(net.biases)
    for l in range(len(net.weights) - 1, -1, -1):
        grads_w[l] = delta.T @ acts[l]
        grads_b[l] = delta.sum(axis=0)
        if l > 0:
            delta = (delta @ net.weights[l]) * (pre_acts[l - 1] > 0.0)
    return grads_w, grads_b


def loss(net: DensityNet, batch: TrainingBatch, lam: float) -> float:
    """Mean flow/Liouville training loss (lam * flow + residual)."""
    Xn, Tn_k, Tn_p = _batch_arrays(net, batch)
    total, _, _, _ = _loss_and_grads(
        net, batch, Xn, Tn_k, Tn_p, lam, 1.0, False)
    return total


def loss_gradients(net: DensityNet, batch: TrainingBatch, lam: float):
    """Backpropagated gradients of loss() w.r.t. every weight and bias."""
    Xn, Tn_k, Tn_p = _batch_arrays(net, batch)
    _, _, _, grads = _loss_and_grads(
        net, batch, Xn, Tn_k, Tn_p, lam, 1.0, True)
    return grads


def validation_metrics(net: DensityNet, batch: TrainingBatch) -> dict:
    """Mean squared flow error and mean squared Liouville residual."""
    Xn, Tn_k, Tn_p = _batch_arrays(net, batch)
    _, flow_term, liou_term, _ = _loss_and_grads(
        net, batch, Xn, Tn_k, Tn_p, 1.0, 1.0, False)
    return {"flow_mse": flow_term, "liouville_mse": liou_term}


# ---------------------------------------------------------------------------
# Training.
# ---------------------------------------------------------------------------

def _slice_batch(batch: TrainingBatch, idx) -> TrainingBatch:
    return TrainingBatch(
        x0=batch.x0[idx], t=batch.t[idx], t_pair=batch.t_pair[idx],
        sign=batch.sign[idx], target=batch.target[idx],
        divergence=batch.divergence[idx], dt=batch.dt)


def _split_for_validation(data: TrajectoryDataset, seed: int):
    n = data.n_traj
    if n < 5:
        return data, data
    rng = np.random.default_rng(seed)
    order = rng.permutation(n)
    n_train = max(int(0.8 * n), 1)
    tr, va = np.sort(order[:n_train]), np.sort(order[n_train:])

    def subset(idx):
        return TrajectoryDataset(
            system=data.system, dt=data.dt, states=data.states[idx],
            divergences=data.divergences[idx],
            rho=None if data.rho is None else data.rho[idx])

    return subset(tr), subset(va)


def train(net: DensityNet, data: TrajectoryDataset, cfg: TrainConfig,
          val: TrajectoryDataset | None = None, verbose: bool = False) -> DensityNet:
    """Two-phase Adam training; returns the best-validation checkpoint.

    Phase one spends a quarter of the epoch budget warm-starting the net by
    plain regression: the flow output against the stored states and z
    against the integrated log-gain of the stored divergences (see
    transport_z_targets), which is the fixed point the residual objective
    itself admits on the same grid.  Phase two descends the transport
    residual: each minibatch optimizes lam * flow / ema_flow +
    liouville / ema_liou, where the denominators are running means of the
    two terms and the Liouville term uses the per-row scale normalization
    (see _loss_and_grads).  Validation applies the same weighting, is also
    evaluated on the phase-one net before any residual step, and the best
    scorer wins — so a residual phase that wanders off (which happens on
    systems whose gain spans many e-folds) can never displace the warm
    start it degraded.
    """
    if val is None:
        data, val = _split_for_validation(data, cfg.seed)
    work_w, work_b = net.copy_weights()
    net = DensityNet(weights=work_w, biases=work_b,
                     norm_shift=net.norm_shift, norm_scale=net.norm_scale,
                     system_id=net.system_id,
                     system_params=dict(net.system_params), dt=net.dt)
    batch = make_training_batch(data)
    val_batch = make_training_batch(val)
    Xn, Tn_k, Tn_p = _batch_arrays(net, batch)
    val_arrays = _batch_arrays(net, val_batch)
    z_targets = transport_z_targets(data)

    rng = np.random.default_rng(cfg.seed)
    beta1, beta2 = _ADAM_BETAS
    n_rows = len(batch)
    bs = min(cfg.batch_size, n_rows)
    warm_epochs = max(1, cfg.epochs // 4) if cfg.epochs > 0 else 0

    def fresh_adam():
        return ([np.zeros_like(w) for w in net.weights],
                [np.zeros_like(w) for w in net.weights],
                [np.zeros_like(b) for b in net.biases],
                [np.zeros_like(b) for b in net.biases])

    def adam_step(state, step, gw, gb):
        m_w, v_w, m_b, v_b = state
        corr1 = 1.0 - beta1 ** step
        corr2 = 1.0 - beta2 ** step
        for l in range(len(net.weights)):
            m_w[l] = beta1 * m_w[l] + (1 - beta1) * gw[l]
            v_w[l] = beta2 * v_w[l] + (1 - beta2) * gw[l] ** 2
            net.weights[l] -= cfg.lr * (m_w[l] / corr1) / (
                np.sqrt(v_w[l] / corr2) + _ADAM_EPS)
            m_b[l] = beta1 * m_b[l] + (1 - beta1) * gb[l]
            v_b[l] = beta2 * v_b[l] + (1 - beta2) * gb[l] ** 2
            net.biases[l] -= cfg.lr * (m_b[l] / corr1) / (
                np.sqrt(v_b[l] / corr2) + _ADAM_EPS)

    state = fresh_adam()
    step = 0
    for epoch in range(warm_epochs):
        order = rng.permutation(n_rows)
        for start in range(0, n_rows, bs):
            idx = order[start:start + bs]
            m = len(idx)
            out, acts, pre_acts = _forward_pass(net, Xn[idx], Tn_k[idx],
                                                keep=True)
            delta = np.empty_like(out)
            delta[:, 0] = 2.0 / m * (out[:, 0] - z_targets[idx])
            delta[:, 1:] = 2.0 * cfg.lam / m * (out[:, 1:] - batch.target[idx])
            if not np.isfinite(delta).all():
                raise TrainingDivergedError(
                    f"non-finite warm-start loss at epoch {epoch}")
            step += 1
            adam_step(state, step, *_backprop(net, delta, acts, pre_acts))

    def validate(epoch_label):
        val_loss, _, _, _ = _loss_and_grads(
            net, val_batch, *val_arrays, cfg.lam, 1.0, False, relative=True)
        if not np.isfinite(val_loss):
            raise TrainingDivergedError(
                f"non-finite validation loss at epoch {epoch_label}")
        return val_loss

    best_val = validate(warm_epochs - 1)
    best = net.copy_weights()

    state = fresh_adam()
    step = 0
    ema_flow, ema_liou = None, None
    for epoch in range(warm_epochs, cfg.epochs):
        order = rng.permutation(n_rows)
        for start in range(0, n_rows, bs):
            idx = order[start:start + bs]
            sub = _slice_batch(batch, idx)
            if ema_flow is None:
                flow_w, liou_w = cfg.lam, 1.0
            else:
                flow_w = cfg.lam / (ema_flow + 1e-12)
                liou_w = 1.0 / (ema_liou + 1e-12)
            total, flow_term, liou_term, (gw, gb) = _loss_and_grads(
                net, sub, Xn[idx], Tn_k[idx], Tn_p[idx], flow_w, liou_w,
                True, relative=True)
            if not np.isfinite(total):
                raise TrainingDivergedError(
                    f"non-finite loss at epoch {epoch}")
            ema_flow = (flow_term if ema_flow is None
                        else _TERM_EMA * ema_flow + (1 - _TERM_EMA) * flow_term)
            ema_liou = (liou_term if ema_liou is None
                        else _TERM_EMA * ema_liou + (1 - _TERM_EMA) * liou_term)
            step += 1
            adam_step(state, step, gw, gb)
        val_loss = validate(epoch)
        if val_loss < best_val:
            best_val = val_loss
            best = net.copy_weights()
        if verbose and (epoch % 10 == 0 or epoch == cfg.epochs - 1):
            print(f"epoch {epoch:4d}  val_loss {val_loss:.6e}  "
                  f"best {best_val:.6e}")
    return DensityNet(weights=best[0], biases=best[1],
                      norm_shift=net.norm_shift.copy(),
                      norm_scale=net.norm_scale.copy(),
                      system_id=net.system_id,
                      system_params=dict(net.system_params), dt=net.dt)


# ---------------------------------------------------------------------------
# Checkpointing.
# ---------------------------------------------------------------------------

def save_checkpoint(net: DensityNet) -> bytes:
    """Serialize a net to JSON bytes (exact float round-trip)."""
    payload = {
        "version": CHECKPOINT_VERSION,
        "dims": [net.weights[0].shape[1], *[w.shape[0] for w in net.weights]],
        "weights": [w.tolist() for w in net.weights],
        "biases": [b.tolist() for b in net.biases],
        "norm_shift": net.norm_shift.tolist(),
        "norm_scale": net.norm_scale.tolist(),
        "system_id": net.system_id,
        "system_params": {k: float(v) for k, v in net.system_params.items()},
        "dt": net.dt,
    }
    return json.dumps(payload).encode("utf-8")


def load_checkpoint(blob) -> DensityNet:
    """Parse checkpoint bytes; malformed input raises with a position."""
    if isinstance(blob, bytes):
        blob = blob.decode("utf-8", errors="replace")
    try:
        payload = json.loads(blob)
    except json.JSONDecodeError as exc:
        raise CheckpointFormatError(
            f"malformed checkpoint JSON at offset {exc.pos}") from exc
    if not isinstance(payload, dict) or "version" not in payload:
        raise CheckpointFormatError("checkpoint lacks a version field")
    if payload["version"] != CHECKPOINT_VERSION:
        raise UnsupportedVersionError(
            f"checkpoint version {payload['version']!r}; "
            f"this build reads version {CHECKPOINT_VERSION}")
    try:
        weights = [np.asarray(w, dtype=np.float64) for w in payload["weights"]]
        biases = [np.asarray(b, dtype=np.float64) for b in payload["biases"]]
        net = DensityNet(
            weights=weights, biases=biases,
            norm_shift=np.asarray(payload["norm_shift"], dtype=np.float64),
            norm_scale=np.asarray(payload["norm_scale"], dtype=np.float64),
            system_id=payload.get("system_id"),
            system_params=dict(payload.get("system_params", {})),
            dt=payload.get("dt"),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointFormatError(f"checkpoint field error: {exc}") from exc
    dims = payload.get("dims")
    expect = [net.weights[0].shape[1], *[w.shape[0] for w in net.weights]]
    if dims != expect:
        raise CheckpointFormatError(
            f"dims field {dims} does not match weight shapes {expect}")
    for l in range(len(weights) - 1):
        if weights[l + 1].shape[1] != weights[l].shape[0]:
            raise CheckpointFormatError(
                f"layer {l + 1} input width {weights[l + 1].shape[1]} does "
                f"not match layer {l} output width {weights[l].shape[0]}")
    return net
