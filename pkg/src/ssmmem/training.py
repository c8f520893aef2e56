"""Training harness for readouts on top of diagonal state-space layers.

Two settings are supported. In ``rc`` mode the eigenvalues stay fixed and only
the readout (``theta`` and ``bias``) is trained. In ``trainable_eig`` mode the
eigenvalues are trained as well, through a continuous-time parameterization
``lam = exp((-exp(nu) + i omega) * delta)`` whose gradients are taken by central
finite differences. A conjugate pair shares one ``(nu, omega)``; real modes
only train ``nu``.
"""
from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from . import kernels
from .gradients import TargetSpec
from .memory import MFCurve, layer_sup_mf, memory_function
from .spectra import (
    CONTINUOUS_TAGS,
    InputCoupling,
    Spectrum,
    delta_grid,
    make_spectrum,
)
from .ssm_core import (
    LayerConfig,
    ReadoutParams,
    StateTrajectory,
    activation_fn,
    gen_uniform_input,
    layer_simulate,
    make_layer,
    pack_real,
    readout_groups,
)

logger = logging.getLogger(__name__)

MODES = ("rc", "trainable_eig")
OPTIMIZERS = ("sgd", "adam")
EIG_PARAMS = ("exp", "direct")
TRAIN_FRACTION = 0.8
DEFAULT_THRESHOLD = 0.01


@dataclass
class TaskInstance:
    """Input, target and 80/20 chronological split of a regression task."""

    u: np.ndarray
    target: TargetSpec
    washout: int
    T: int
    train_idx: np.ndarray
    test_idx: np.ndarray

    @property
    def y(self) -> np.ndarray:
        return self.target.series


def _split(T: int) -> tuple[np.ndarray, np.ndarray]:
    n_train = int(round(TRAIN_FRACTION * T))
    if n_train < 1 or n_train >= T:
        raise ValueError("T too small for an 80/20 split")
    idx = np.arange(T)
    return idx[:n_train], idx[n_train:]


def _make_task(target: TargetSpec, T: int, seed: int, washout: Optional[int]) -> TaskInstance:
    T = int(T)
    if washout is None:
        washout = max(2 * T, target.max_delay)
    washout = int(washout)
    if target.max_delay > washout:
        raise ValueError(f"delay {target.max_delay} exceeds the available history (washout {washout})")
    u = gen_uniform_input(T + washout, seed)
    target.series = target.materialize(u, washout, T)
    train_idx, test_idx = _split(T)
    return TaskInstance(u, target, washout, T, train_idx, test_idx)


def make_delay_task(tau: int, T: int, seed: int, washout: Optional[int] = None) -> TaskInstance:
    """Predict the input delayed by ``tau`` steps."""
    if int(tau) < 0:
        raise ValueError("tau must be >= 0")
    return _make_task(TargetSpec.delay(tau), T, seed, washout)


def make_combo_task(alpha: Sequence[float], T: int, seed: int, washout: Optional[int] = None) -> TaskInstance:
    """Predict ``sum_d alpha[d] * u[t - d]``."""
    return _make_task(TargetSpec.combo(alpha), T, seed, washout)


@dataclass
class TrainConfig:
    """Optimization settings. ``lr_eig`` and ``eig_param`` are ignored in rc mode."""

    mode: str = "rc"
    optimizer: str = "sgd"
    lr_readout: float = 0.1
    lr_eig: float = 0.01
    epochs: int = 100
    seed: int = 0
    activation: str = "identity"
    batch_size: Optional[int] = None
    fd_step: float = 1e-6
    eig_param: str = "exp"
    threshold: float = DEFAULT_THRESHOLD

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.eig_param not in EIG_PARAMS:
            raise ValueError(f"unknown eigenvalue parameterization {self.eig_param!r}")
        if not (self.lr_readout > 0 and self.lr_eig > 0):
            raise ValueError("learning rates must be positive")
        if int(self.epochs) < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size is not None and int(self.batch_size) < 1:
            raise ValueError("batch_size must be >= 1")
        activation_fn(self.activation)


@dataclass(eq=False)
class SSMModel:
    """A layer of diagonal systems and the joint readout over their features."""

    layer: LayerConfig
    readout: ReadoutParams


def build_model(
    tag: str,
    n: int,
    T: int,
    seed: int = 0,
    deltas: Sequence[float] = (0.01,),
    radius: float = 0.99,
    washout: Optional[int] = None,
    activation: str = "identity",
) -> SSMModel:
    """Model with a zero readout.

    Continuous realizations are discretized at every step size in ``deltas``,
    giving one layer member per step size. Discrete realizations form a
    single-member layer.
    """
    base = make_spectrum(tag, n, seed=seed, radius_target=radius)
    layer = make_layer(base, deltas if tag in CONTINUOUS_TAGS else (), T, washout)
    n_feat = sum(_n_features(s, c) for s, c in zip(layer.spectra, layer.couplings))
    return SSMModel(layer, ReadoutParams(np.zeros(n_feat), 0.0, activation))


def _n_features(s: Spectrum, c: InputCoupling) -> int:
    return sum(1 if g[0] == "real" else 2 for g in readout_groups(np.array(s.eigenvalues), c.as_vector(s.n)))


@dataclass(eq=False)
class TrainRun:
    """Result of :func:`train`.

    Attributes
    ----------
    train_loss, test_loss : list of float
        MSE after each epoch.
    snapshots : dict
        ``{"initial", "mid", "final"}`` -> ``{"epoch", "theta", "bias", "spectra"}``.
    divergence_flag : bool
    abort_reason : str or None
    couplings : list of InputCoupling
    washout, T : int
    config : TrainConfig
    """

    train_loss: list
    test_loss: list
    snapshots: dict
    divergence_flag: bool
    abort_reason: Optional[str]
    couplings: list
    washout: int
    T: int
    config: TrainConfig

    @property
    def final_test_mse(self) -> float:
        return float(self.test_loss[-1]) if self.test_loss else float("nan")

    def epochs_to_threshold(self, threshold: Optional[float] = None) -> Optional[int]:
        """First epoch (1-based) whose test MSE is below ``threshold``."""
        threshold = self.config.threshold if threshold is None else threshold
        for i, v in enumerate(self.test_loss):
            if v < threshold:
                return i + 1
        return None

    def to_dict(self) -> dict:
        snaps = {}
        for key, snap in self.snapshots.items():
            snaps[key] = {
                "epoch": snap["epoch"],
                "theta": snap["theta"].tolist(),
                "bias": snap["bias"],
                "spectra": [s.to_dict() for s in snap["spectra"]],
            }
        return {
            "config": asdict(self.config),
            "train_loss": list(self.train_loss),
            "test_loss": list(self.test_loss),
            "divergence_flag": self.divergence_flag,
            "abort_reason": self.abort_reason,
            "snapshots": snaps,
        }


class _Optimizer:
    def __init__(self, kind: str, lr: float, size: int, beta1=0.9, beta2=0.999, eps=1e-8):
        self.kind, self.lr = kind, lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.t = 0

    def step(self, params: np.ndarray, grad: np.ndarray) -> np.ndarray:
        if self.kind == "sgd":
            return params - self.lr * grad
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad * grad
        m_hat = self.m / (1 - self.beta1**self.t)
        v_hat = self.v / (1 - self.beta2**self.t)
        return params - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


@dataclass(eq=False)
class _ModeParam:
    """Trainable parameters of one mode (and its conjugate partner, if any)."""

    member: int
    index: int
    partner: Optional[int]
    real: bool
    delta: float
    feature_cols: list


class _EigenState:
    """Maps a flat parameter vector onto the eigenvalues of every member."""

    def __init__(self, layer: LayerConfig, eig_param: str):
        self.eig_param = eig_param
        self.lams = [np.array(s.eigenvalues) for s in layer.spectra]
        self.bs = [c.as_vector(s.n) for s, c in zip(layer.spectra, layer.couplings)]
        self.modes: list[_ModeParam] = []
        self.groups = []
        params = []
        col = 0
        for m, s in enumerate(layer.spectra):
            delta = s.delta if s.delta is not None else 1.0
            groups = readout_groups(self.lams[m], self.bs[m])
            self.groups.append(groups)
            for g in groups:
                width = 1 if g[0] == "real" else 2
                cols = list(range(col, col + width))
                col += width
                partner = g[2] if g[0] == "pair" else None
                mode = _ModeParam(m, g[1], partner, g[0] == "real", delta, cols)
                self.modes.append(mode)
                params.extend(self._encode(self.lams[m][g[1]], mode))
        self.params = np.array(params, dtype=np.float64)
        self.slices = []
        pos = 0
        for mode in self.modes:
            width = 1 if mode.real else 2
            self.slices.append(slice(pos, pos + width))
            pos += width
        # the phase of a real mode (0 or pi) is held fixed
        self.real_phase = [np.angle(self.lams[m.member][m.index]) if m.real else 0.0 for m in self.modes]

    def _encode(self, lam: complex, mode: _ModeParam) -> list:
        if self.eig_param == "direct":
            return [lam.real] if mode.real else [lam.real, lam.imag]
        z = np.log(complex(lam) if abs(lam) > 1e-300 else 1e-300) / mode.delta
        decay = max(-z.real, 1e-300)
        return [np.log(decay)] if mode.real else [np.log(decay), z.imag]

    def decode(self, k: int, p: np.ndarray) -> complex:
        mode = self.modes[k]
        if self.eig_param == "direct":
            return complex(p[0], 0.0) if mode.real else complex(p[0], p[1])
        if mode.real:
            return complex(np.exp(-np.exp(p[0]) * mode.delta) * np.exp(1j * self.real_phase[k]))
        return complex(np.exp((-np.exp(p[0]) + 1j * p[1]) * mode.delta))

    def apply(self, params: np.ndarray):
        self.params = params
        for k, mode in enumerate(self.modes):
            lam = self.decode(k, params[self.slices[k]])
            self.lams[mode.member][mode.index] = lam
            if mode.partner is not None:
                self.lams[mode.member][mode.partner] = np.conj(lam)

    def radius(self) -> float:
        return float(max(np.max(np.abs(l)) for l in self.lams))

    def spectra(self, layer: LayerConfig) -> list:
        return [Spectrum(l, "discrete", s.delta, s.tag) for l, s in zip(self.lams, layer.spectra)]

    def mode_features(self, k: int, lam: complex, u: np.ndarray, washout: int) -> np.ndarray:
        """Feature columns of mode ``k`` when its eigenvalue is replaced by ``lam``."""
        mode = self.modes[k]
        b = self.bs[mode.member][mode.index : mode.index + 1]
        x = kernels.diag_recurrence(np.array([lam], dtype=np.complex128), np.ascontiguousarray(b), u, washout)[:, 0]
        if mode.real:
            return x.real[:, None]
        return np.column_stack([x.real, x.imag])


def _features_from_trajs(trajs: Sequence[StateTrajectory]) -> np.ndarray:
    return np.concatenate([t.features() for t in trajs], axis=1)


def _loss(pred: np.ndarray, y: np.ndarray) -> float:
    r = pred - y
    return float(r @ r) / y.shape[0]


def train(model: SSMModel, task: TaskInstance, cfg: TrainConfig) -> TrainRun:
    """Train the readout (and, in ``trainable_eig`` mode, the eigenvalues).

    The run aborts with ``divergence_flag`` set when the spectral radius exceeds
    one or a loss becomes non-finite.
    """
    layer = model.layer
    if layer.T != task.T or layer.washout != task.washout:
        layer = replace(layer, T=task.T, washout=task.washout)
    f, fp = activation_fn(cfg.activation)
    rng = np.random.default_rng(cfg.seed)
    theta = np.array(model.readout.theta, dtype=np.float64)
    bias = float(model.readout.bias)
    eig = _EigenState(layer, cfg.eig_param)
    if eig.radius() > 1.0 + 1e-12:
        raise ValueError("initial spectrum is not stable")
    u = task.u
    y = task.y
    tr, te = task.train_idx, task.test_idx
    feats = _features_from_trajs(layer_simulate(layer, u))
    if feats.shape[1] != theta.shape[0]:
        raise ValueError(f"readout has {theta.shape[0]} weights for {feats.shape[1]} features")

    opt_readout = _Optimizer(cfg.optimizer, cfg.lr_readout, theta.shape[0] + 1)
    opt_eig = _Optimizer(cfg.optimizer, cfg.lr_eig, eig.params.shape[0])
    train_hist, test_hist = [], []
    mid = cfg.epochs // 2

    def snapshot(epoch):
        return {"epoch": epoch, "theta": theta.copy(), "bias": bias, "spectra": eig.spectra(layer)}

    snapshots = {"initial": snapshot(0)}
    diverged, reason = False, None
    trainable = cfg.mode == "trainable_eig"
    batch = len(tr) if cfg.batch_size is None else min(int(cfg.batch_size), len(tr))

    for epoch in range(1, cfg.epochs + 1):
        if trainable:
            g_eig = _eigen_gradient(eig, feats, theta, bias, u, y, tr, task.washout, f, cfg.fd_step)
        order = rng.permutation(tr) if batch < len(tr) else tr
        for start in range(0, len(order), batch):
            rows = order[start : start + batch]
            x = feats[rows]
            z = x @ theta + bias
            r = (f(z) - y[rows]) * fp(z)
            grad = np.empty(theta.shape[0] + 1)
            grad[:-1] = (2.0 / len(rows)) * (x.T @ r)
            grad[-1] = 2.0 * np.mean(r)
            new = opt_readout.step(np.append(theta, bias), grad)
            theta, bias = new[:-1], float(new[-1])
        if trainable:
            eig.apply(opt_eig.step(eig.params, g_eig))
            if not np.all(np.isfinite(eig.params)) or eig.radius() > 1.0:
                diverged, reason = True, f"spectral radius {eig.radius():.6g} exceeds 1 at epoch {epoch}"
            else:
                feats = _eigen_features(eig, layer, u)
        if not diverged:
            pred = f(feats @ theta + bias)
            l_tr, l_te = _loss(pred[tr], y[tr]), _loss(pred[te], y[te])
            if not (np.isfinite(l_tr) and np.isfinite(l_te)):
                diverged, reason = True, f"non-finite loss at epoch {epoch}"
        if diverged:
            logger.info("training aborted: %s", reason)
            break
        train_hist.append(l_tr)
        test_hist.append(l_te)
        if epoch == mid:
            snapshots["mid"] = snapshot(epoch)
    snapshots.setdefault("mid", snapshot(len(test_hist)))
    snapshots["final"] = snapshot(len(test_hist))
    return TrainRun(
        train_hist, test_hist, snapshots, diverged, reason, list(layer.couplings), task.washout, task.T, cfg
    )


def _eigen_features(eig: _EigenState, layer: LayerConfig, u: np.ndarray) -> np.ndarray:
    spectra = eig.spectra(layer)
    cols = []
    for m, s in enumerate(spectra):
        states = kernels.diag_recurrence(
            np.ascontiguousarray(s.eigenvalues), np.ascontiguousarray(eig.bs[m]), u, layer.washout
        )
        cols.append(pack_real(states, eig.groups[m]))
    return np.concatenate(cols, axis=1)


def _eigen_gradient(eig, feats, theta, bias, u, y, rows, washout, f, h) -> np.ndarray:
    """Central differences of the training loss over the eigenvalue parameters."""
    base = feats @ theta + bias
    grad = np.zeros_like(eig.params)
    for k, mode in enumerate(eig.modes):
        sl = eig.slices[k]
        cols = mode.feature_cols
        old = feats[:, cols] @ theta[cols]
        for j in range(sl.stop - sl.start):
            losses = []
            for sign in (1.0, -1.0):
                p = eig.params[sl].copy()
                p[j] += sign * h
                lam = eig.decode(k, p)
                if abs(lam) > 1.0:
                    losses.append(np.inf)
                    continue
                new = eig.mode_features(k, lam, u, washout) @ theta[cols]
                pred = f(base - old + new)
                losses.append(_loss(pred[rows], y[rows]))
            grad[sl.start + j] = (losses[0] - losses[1]) / (2.0 * h)
    return grad


def mf_before_after(
    run: TrainRun,
    tau_max: Optional[int] = None,
    n_surrogates: int = 20,
    threshold: float = 1.2,
    seed: int = 0,
    T: Optional[int] = None,
) -> tuple[MFCurve, MFCurve]:
    """Layer supremum memory function of the initial and the final spectra.

    Both curves use the same fresh input (seeded by ``seed``) and the run's
    washout. ``T`` defaults to the run's length; a longer evaluation window
    reduces the estimator's upward bias.
    """
    T = run.T if T is None else int(T)
    u = gen_uniform_input(T + run.washout, seed)
    out = []
    for key in ("initial", "final"):
        layer = LayerConfig(run.snapshots[key]["spectra"], run.couplings, T, run.washout)
        trajs = layer_simulate(layer, u)
        tmax = tau_max if tau_max is not None else min(run.washout, 4 * max(t.n for t in trajs))
        curves = [memory_function(t, tmax, n_surrogates, threshold, seed) for t in trajs]
        out.append(layer_sup_mf(curves))
    return out[0], out[1]


# ---------------------------------------------------------------------------
# Sweeps


@dataclass
class CompareSetup:
    """Shared settings of a comparison sweep."""

    n: int = 32
    T: int = 1024
    deltas: tuple = tuple(delta_grid(0.01, 0.1, 4))
    radius: float = 0.99
    washout: Optional[int] = None


def parse_task(text: str) -> TargetSpec:
    """Parse ``"delay:20"`` or ``"combo:1=0.5,4=0.25"``."""
    kind, _, rest = text.partition(":")
    if kind == "delay":
        return TargetSpec.delay(int(rest))
    if kind == "combo":
        pairs = [item.split("=") for item in rest.split(",") if item]
        if not pairs:
            raise ValueError("combo task needs at least one delay=weight entry")
        delays = [int(d) for d, _ in pairs]
        alpha = np.zeros(max(delays) + 1)
        for d, w in pairs:
            alpha[int(d)] += float(w)
        return TargetSpec.combo(alpha)
    raise ValueError(f"cannot parse task {text!r}; use delay:TAU or combo:D=W,...")


def _run_one(job) -> dict:
    tag, task_spec, seed, mode, cfg, setup = job
    target = parse_task(task_spec)
    task = _make_task(target, setup.T, seed, setup.washout)
    model = build_model(tag, setup.n, setup.T, seed, setup.deltas, setup.radius, task.washout, cfg.activation)
    run = train(model, task, replace(cfg, mode=mode, seed=seed))
    return {
        "tag": tag,
        "task": task_spec,
        "mode": mode,
        "seed": seed,
        "final_mse": run.final_test_mse,
        "epochs_to_0.01": run.epochs_to_threshold(DEFAULT_THRESHOLD),
        "diverged": run.divergence_flag,
    }


def compare_settings(
    spectra_tags: Sequence[str],
    tasks: Sequence[str],
    seeds: Sequence[int],
    cfg: Optional[TrainConfig] = None,
    setup: Optional[CompareSetup] = None,
    modes: Sequence[str] = MODES,
    workers: int = 1,
) -> dict:
    """Run every (tag, task, mode, seed) combination and summarize.

    Returns
    -------
    dict
        ``rows``: one dict per run with keys tag, task, mode, seed, final_mse,
        epochs_to_0.01, diverged. ``summary``: per (tag, task, mode) min/max/mean
        final MSE, median epochs to threshold and divergence count.
    """
    seeds = list(seeds)
    if len(seeds) < 2:
        raise ValueError("compare_settings needs at least two seeds")
    cfg = cfg if cfg is not None else TrainConfig(optimizer="adam", lr_readout=0.01)
    setup = setup if setup is not None else CompareSetup()
    jobs = [(t, k, s, m, cfg, setup) for t in spectra_tags for k in tasks for m in modes for s in seeds]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_run_one, jobs))
    else:
        rows = [_run_one(j) for j in jobs]
    return {"rows": rows, "summary": summarize_rows(rows)}


def summarize_rows(rows: Sequence[dict]) -> list:
    out = []
    keys = []
    for r in rows:
        key = (r["tag"], r.get("task", ""), r["mode"])
        if key not in keys:
            keys.append(key)
    for key in keys:
        sel = [r for r in rows if (r["tag"], r.get("task", ""), r["mode"]) == key]
        mse = np.array([r["final_mse"] for r in sel], dtype=np.float64)
        finite = mse[np.isfinite(mse)]
        ep = [r["epochs_to_0.01"] for r in sel]
        out.append(
            {
                "tag": key[0],
                "task": key[1],
                "mode": key[2],
                "runs": len(sel),
                "min_mse": float(finite.min()) if finite.size else None,
                "max_mse": float(finite.max()) if finite.size else None,
                "mean_mse": float(finite.mean()) if finite.size else None,
                "median_epochs_to_0.01": median_epochs(ep),
                "divergence_count": int(sum(bool(r["diverged"]) for r in sel)),
            }
        )
    return out


def median_epochs(values: Sequence[Optional[int]]) -> float:
    """Median epochs-to-threshold, counting runs that never reach it as infinite."""
    arr = np.array([np.inf if v is None else float(v) for v in values])
    return float(np.median(arr)) if arr.size else float("nan")
