"""Two-step joint-torque predictors.

Step 1 trains one LSTM network per joint group on free-space telemetry
(``base`` without the cannula seal, ``seal`` with it).  Step 2 adapts a
step-1 model to a trocar setup either with a windowed feed-forward residual
network (``corr``) whose output is added to the step-1 prediction, or by
freezing the step-1 LSTM and training an appended LSTM + dense head
(``xfer``).  ``troc`` trains the step-1 structure from scratch on trocar
data.
"""
from __future__ import annotations

import enum
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .core import Condition, Dataset, DatasetError, Trajectory
from .neuralnet import (
    LSTM, Dense, Dropout, Network, NetworkSpec, ReLU, load_model, lr_at_epoch, save_model,
)

log = logging.getLogger(__name__)

N_FEATURES = 12
LSTM_WARMUP = 50


class Method(str, enum.Enum):
    TROC = "troc"
    BASE = "base"
    SEAL = "seal"
    BASE_CORR = "base-corr"
    SEAL_CORR = "seal-corr"
    SEAL_XFER = "seal-xfer"

    @property
    def step1(self) -> "Method | None":
        return {Method.BASE_CORR: Method.BASE, Method.SEAL_CORR: Method.SEAL,
                Method.SEAL_XFER: Method.SEAL}.get(self)

    @property
    def uses_trocar_data(self) -> bool:
        return self not in (Method.BASE, Method.SEAL)

    @property
    def label(self) -> str:
        return {"troc": "Troc", "base": "Base", "seal": "Seal", "base-corr": "Base + Corr",
                "seal-corr": "Seal + Corr", "seal-xfer": "Seal + Xfer"}[self.value]


class PrerequisiteError(RuntimeError):
    pass


class DivergenceError(RuntimeError):
    pass


# ------------------------------------------------------------------ configs


@dataclass(frozen=True)
class EarlyStopping:
    patience: int = 20
    min_delta: float = 1e-6


@dataclass(frozen=True)
class TrainConfig:
    """Optimizer schedule and regularization for one training job.

    The learning rate after epoch ``e`` is
    ``initial_lr * decay_factor ** (e // decay_every)``.
    """

    initial_lr: float = 1e-3
    decay_every: int = 125
    decay_factor: float = 0.5
    epochs: int = 1000
    l2: float = 0.0
    seq_len: int = 50
    batch_size: int = 128
    stream_len: int | None = None
    dropout_seed: int = 0
    init_seed: int = 0
    early_stopping: EarlyStopping | None = None
    fallback_lrs: tuple[float, ...] = (0.1, 0.001)
    divergence_factor: float | None = 10.0

    def __post_init__(self):
        object.__setattr__(self, "fallback_lrs", tuple(float(x) for x in self.fallback_lrs))
        if isinstance(self.early_stopping, dict):
            object.__setattr__(self, "early_stopping", EarlyStopping(**self.early_stopping))
        if self.initial_lr <= 0 or self.decay_every < 1 or self.epochs < 0:
            raise ValueError("initial_lr and decay_every must be positive, epochs nonnegative")
        if not 0 < self.decay_factor <= 1:
            raise ValueError("decay_factor must lie in (0, 1]")
        if self.l2 < 0 or self.seq_len < 1 or self.batch_size < 1:
            raise ValueError("l2 must be nonnegative, seq_len and batch_size positive")
        if any(x <= 0 for x in self.fallback_lrs):
            raise ValueError("fallback learning rates must be positive")
        if self.divergence_factor is not None and self.divergence_factor <= 1:
            raise ValueError("divergence_factor must exceed 1")
        if self.stream_len is not None and self.stream_len < 1:
            raise ValueError("stream_len must be positive")

    def lr(self, epoch: int) -> float:
        return lr_at_epoch(self.initial_lr, self.decay_every, self.decay_factor, epoch)

    @classmethod
    def from_config(cls, cfg: dict | None, base: "TrainConfig | None" = None) -> "TrainConfig":
        base = base or cls()
        return replace(base, **dict(cfg or {}))


def step1_config(**kw) -> TrainConfig:
    """Free-space schedule: Adam 1e-3, halved every 125 epochs, 1000 epochs."""
    return TrainConfig(**kw)


def corr_config(**kw) -> TrainConfig:
    kw.setdefault("epochs", 400)
    kw.setdefault("l2", 0.01)
    kw.setdefault("decay_factor", 1.0)
    return TrainConfig(**kw)


def xfer_config(**kw) -> TrainConfig:
    kw.setdefault("initial_lr", 10.0)
    kw.setdefault("early_stopping", EarlyStopping())
    return TrainConfig(**kw)


@dataclass(frozen=True)
class Architecture:
    lstm_hidden: int = 128
    joint3_hidden: int = 128
    dropout: float = 0.2
    corr_window: int = 10
    corr_hidden: int = 256
    xfer_hidden: int = 128

    @classmethod
    def from_config(cls, cfg: dict | None) -> "Architecture":
        return cls(**dict(cfg or {}))


@dataclass(frozen=True)
class JointGrouping:
    """Partition of joints 0..5 into separately trained networks."""

    groups: tuple[tuple[int, ...], ...] = ((0, 1), (2,), (3,), (4, 5))
    arch: Architecture = Architecture()

    def __post_init__(self):
        flat = sorted(j for g in self.groups for j in g)
        if flat != list(range(6)):
            raise ValueError("groups must partition joints 0..5")

    def spec(self, group: tuple[int, ...]) -> NetworkSpec:
        a = self.arch
        layers = [LSTM(N_FEATURES, a.lstm_hidden)]
        if group == (2,):
            layers += [Dense(a.lstm_hidden, a.joint3_hidden), ReLU(), Dropout(a.dropout),
                       Dense(a.joint3_hidden, 1)]
        else:
            layers += [Dense(a.lstm_hidden, len(group))]
        return NetworkSpec(tuple(layers))

    def xfer_spec(self, group: tuple[int, ...]) -> NetworkSpec:
        a = self.arch
        return NetworkSpec((LSTM(N_FEATURES, a.lstm_hidden, trainable=False),
                            LSTM(a.lstm_hidden, a.xfer_hidden),
                            Dense(a.xfer_hidden, len(group))))

    def corr_spec(self, group: tuple[int, ...]) -> NetworkSpec:
        a = self.arch
        k = len(group)
        return NetworkSpec((Dense(a.corr_window * (N_FEATURES + k), a.corr_hidden), ReLU(),
                            Dense(a.corr_hidden, k)))


def group_name(group) -> str:
    return "j" + "".join(str(j + 1) for j in group)


# ------------------------------------------------------------------ scaling


@dataclass(frozen=True)
class Scaler:
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, x: np.ndarray) -> "Scaler":
        std = x.std(axis=0)
        return cls(x.mean(axis=0), np.where(std > 1e-12, std, 1.0))

    def transform(self, x):
        return (x - self.mean) / self.std

    def inverse(self, z):
        return z * self.std + self.mean

    def to_json(self) -> dict:
        return {"mean": [float(v) for v in self.mean], "std": [float(v) for v in self.std]}

    @classmethod
    def from_json(cls, d) -> "Scaler":
        return cls(np.array(d["mean"], dtype=float), np.array(d["std"], dtype=float))


# ---------------------------------------------------------------- reporting


@dataclass
class TrainReport:
    method: str
    group: str
    samples: int
    epochs_run: int = 0
    initial_train_loss: float = float("nan")
    initial_val_loss: float = float("nan")
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    lr: list = field(default_factory=list)
    seconds: float = 0.0
    stopped_early: bool = False
    best_epoch: int | None = None
    lr_used: float | None = None
    fallback: str | None = None

    def to_json(self) -> dict:
        return asdict(self)


# ------------------------------------------------------------- group models


@dataclass
class GroupModel:
    """A trained network for one joint group plus its normalization."""

    kind: str                      # "lstm" | "xfer" | "corr"
    group: tuple[int, ...]
    net: Network
    in_scaler: Scaler
    out_scaler: Scaler
    window: int = 0

    def meta(self) -> dict:
        return {"kind": self.kind, "group": list(self.group), "window": self.window,
                "in_scaler": self.in_scaler.to_json(), "out_scaler": self.out_scaler.to_json()}

    def save(self, path) -> Path:
        return save_model(self.net, path, self.meta())

    @classmethod
    def load(cls, path, expected: NetworkSpec | None = None) -> "GroupModel":
        net, meta = load_model(path, expected)
        return cls(meta["kind"], tuple(meta["group"]), net, Scaler.from_json(meta["in_scaler"]),
                   Scaler.from_json(meta["out_scaler"]), meta.get("window", 0))

    def predict_sequence(self, features: np.ndarray) -> np.ndarray:
        """Causal prediction over whole sequences: ``(n, 12)`` or ``(n, B, 12)``."""
        z = self.in_scaler.transform(features)
        y = self.net.predict(z)
        return self.out_scaler.inverse(y)


@dataclass
class ModelSet:
    """Per-group models for one method (and trocar length, when relevant)."""

    method: Method
    models: dict                     # group tuple -> GroupModel
    step1: "ModelSet | None" = None  # for corr
    reports: list = field(default_factory=list)

    def save(self, directory) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        for g, m in self.models.items():
            m.save(directory / f"{group_name(g)}.psmnet")

    @classmethod
    def load(cls, method: Method, directory, grouping: JointGrouping | None = None,
             step1: "ModelSet | None" = None) -> "ModelSet":
        directory = Path(directory)
        grouping = grouping or JointGrouping()
        models = {}
        for g in grouping.groups:
            f = directory / f"{group_name(g)}.psmnet"
            if not f.exists():
                raise PrerequisiteError(f"missing model file {f}")
            models[g] = GroupModel.load(f)
        return cls(method, models, step1)


# ---------------------------------------------------------- sequence layout


def _stream_layout(lengths: list[int], stream_len: int | None):
    """One recurrent stream per contiguous segment, optionally cut into
    ``stream_len`` pieces, padded to a common length.

    Returns ``(index, valid)`` where ``index[t, b]`` points into the row-wise
    concatenation of segments and ``valid`` marks real (non-padded) steps.
    """
    pieces = []
    offset = 0
    for n in lengths:
        step = stream_len or n
        for st in range(0, n, step):
            pieces.append((offset + st, min(step, n - st)))
        offset += n
    if not pieces:
        raise DatasetError("no training samples")
    L = max(m for _, m in pieces)
    index = np.empty((L, len(pieces)), dtype=np.intp)
    valid = np.zeros((L, len(pieces)), dtype=bool)
    for b, (st, m) in enumerate(pieces):
        index[:m, b] = st + np.arange(m)
        index[m:, b] = st + m - 1
        valid[:m, b] = True
    return index, valid


def _streams(X: list[np.ndarray], Y: list[np.ndarray], stream_len: int | None, warmup: int):
    index, valid = _stream_layout([len(x) for x in X], stream_len)
    Xc = np.concatenate(X)[index]
    Yc = np.concatenate(Y)[index]
    mask = valid.astype(float)
    mask[:min(warmup, index.shape[0] // 4)] = 0.0
    return Xc, Yc, mask


def _masked_mse(y, t, mask) -> float:
    w = mask[:, :, None]
    return float(np.sum(w * (y - t) ** 2) / max(mask.sum(), 1.0) / y.shape[2])


# ----------------------------------------------------------- LSTM training


def _fit_sequence_net(net: Network, Xtr, Ytr, Mtr, Xva, Yva, Mva, cfg: TrainConfig,
                      report: TrainReport, start: int = 0) -> None:
    """Epoch loop shared by step-1, troc and xfer training.

    ``start`` > 0 means ``Xtr``/``Xva`` already hold the (frozen) outputs of
    layers ``[0, start)``.
    """
    rng = np.random.default_rng(cfg.dropout_seed)
    L = Xtr.shape[0]
    es = cfg.early_stopping
    init_params = net.snapshot()

    def val_loss() -> float:
        y = net.forward(Xva, start=start, keep_cache=False)
        return _masked_mse(y, Yva, Mva)

    def train_loss() -> float:
        y = net.forward(Xtr, start=start, keep_cache=False)
        return _masked_mse(y, Ytr, Mtr)

    report.initial_train_loss = train_loss()
    report.initial_val_loss = val_loss()

    limit = (cfg.divergence_factor * report.initial_val_loss
             if cfg.divergence_factor is not None else math.inf)

    def run(base_lr: float) -> bool:
        """Train from the current parameters; False when the loss diverges."""
        best, best_epoch, best_params, stale = math.inf, None, None, 0
        for epoch in range(cfg.epochs):
            lr = base_lr * cfg.decay_factor ** (epoch // cfg.decay_every)
            net.reset_state()
            total, weight = 0.0, 0.0
            for s in range(0, L, cfg.seq_len):
                sl = slice(s, min(L, s + cfg.seq_len))
                m = Mtr[sl]
                net.forward(Xtr[sl], train=True, rng=rng, carry=True, start=start)
                if m.sum() == 0:
                    continue
                loss, grads = net.loss_and_grads(Ytr[sl], l2=cfg.l2, mask=m)
                if not math.isfinite(loss):
                    return False
                net.adam_step(grads, lr)
                total += loss * m.sum()
                weight += m.sum()
            vl = val_loss()
            tl = total / max(weight, 1.0)
            if not (math.isfinite(vl) and math.isfinite(tl)) or vl > limit:
                return False
            report.train_loss.append(tl)
            report.val_loss.append(vl)
            report.lr.append(lr)
            report.epochs_run = epoch + 1
            if es is not None:
                if vl < best - es.min_delta:
                    best, best_epoch, best_params, stale = vl, epoch, net.snapshot(), 0
                else:
                    stale += 1
                    if stale >= es.patience:
                        report.stopped_early = True
                        break
        if es is not None and best_params is not None:
            net.restore(best_params)
            report.best_epoch = best_epoch
        return True

    attempts = [cfg.initial_lr, *cfg.fallback_lrs]
    failed = []
    for k, lr in enumerate(attempts):
        if k:
            log.warning("%s/%s diverged at lr=%g; retrying at lr=%g",
                        report.method, report.group, attempts[k - 1], lr)
            net.restore(init_params)
            net.state.moments = [dict() for _ in net.spec.layers]
            net.state.step = 0
            report.train_loss.clear(); report.val_loss.clear(); report.lr.clear()
            report.epochs_run, report.stopped_early, report.best_epoch = 0, False, None
        report.lr_used = lr
        if run(lr):
            if failed:
                report.fallback = (f"diverged at lr={', '.join(f'{x:g}' for x in failed)}; "
                                   f"retrained at lr={lr:g}")
            return
        failed.append(lr)
    raise DivergenceError(f"{report.method}/{report.group}: training diverged at every "
                          f"learning rate tried ({', '.join(f'{x:g}' for x in attempts)})")


def _segments_xy(ds: Dataset, name: str, group):
    X, Y = [], []
    for seg in ds.segments(name):
        X.append(seg.features())
        Y.append(seg.tau[:, list(group)])
    return X, Y


def _require(ds: Dataset, allowed: set[Condition], what: str) -> None:
    if ds.split is None:
        raise DatasetError("dataset must be split before training")
    bad = ds.conditions - allowed
    if bad or not ds.trajectories:
        got = ", ".join(sorted(c.value for c in ds.conditions)) or "empty"
        raise DatasetError(f"{what} needs {sorted(c.value for c in allowed)} data, got {got}")


def _train_lstm_group(method: Method, ds: Dataset, group, grouping: JointGrouping,
                      cfg: TrainConfig) -> tuple[GroupModel, TrainReport]:
    t0 = time.perf_counter()
    Xtr, Ytr = _segments_xy(ds, "train", group)
    Xva, Yva = _segments_xy(ds, "validation", group)
    in_s = Scaler.fit(np.concatenate(Xtr))
    out_s = Scaler.fit(np.concatenate(Ytr))
    norm = lambda X, s: [s.transform(x) for x in X]
    A = _streams(norm(Xtr, in_s), norm(Ytr, out_s), cfg.stream_len, LSTM_WARMUP)
    V = _streams(norm(Xva, in_s), norm(Yva, out_s), None, LSTM_WARMUP)
    net = Network(grouping.spec(group), seed=cfg.init_seed + 17 * group[0])
    report = TrainReport(method.value, group_name(group), sum(len(x) for x in Xtr))
    _fit_sequence_net(net, *A, *V, cfg, report)
    report.seconds = time.perf_counter() - t0
    return GroupModel("lstm", tuple(group), net, in_s, out_s), report


def _map_groups(fn, groups, threads: int):
    if threads <= 1 or len(groups) == 1:
        return [fn(g) for g in groups]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, groups))


def train_step1(ds: Dataset, grouping: JointGrouping | None = None, cfg: TrainConfig | None = None,
                threads: int = 1, groups=None) -> ModelSet:
    """Train the free-space networks; the dataset condition picks Base or Seal."""
    grouping = grouping or JointGrouping()
    cfg = cfg or step1_config()
    conds = ds.conditions
    if conds == {Condition.FREE_SPACE}:
        method = Method.BASE
    elif conds == {Condition.SEAL_ONLY}:
        method = Method.SEAL
    else:
        _require(ds, {Condition.FREE_SPACE}, "step-1 training")
        raise DatasetError("step-1 data must be all free-space or all seal-only")
    _require(ds, conds, "step-1 training")
    return _train_lstm_set(method, ds, grouping, cfg, threads, groups)


def train_troc(ds: Dataset, grouping: JointGrouping | None = None, cfg: TrainConfig | None = None,
               threads: int = 1, groups=None) -> ModelSet:
    """Step-1 structure trained from scratch on trocar (no-contact) data."""
    grouping = grouping or JointGrouping()
    _require(ds, {Condition.TROCAR}, "troc training")
    return _train_lstm_set(Method.TROC, ds, grouping, cfg or step1_config(), threads, groups)


def _train_lstm_set(method, ds, grouping, cfg, threads, groups) -> ModelSet:
    groups = list(groups or grouping.groups)
    out = _map_groups(lambda g: _train_lstm_group(method, ds, g, grouping, cfg), groups, threads)
    return ModelSet(method, {g: m for g, (m, _) in zip(groups, out)}, reports=[r for _, r in out])


# ------------------------------------------------------------ corr training


def step1_group_prediction(model: GroupModel, trajectories: list[Trajectory]) -> list[np.ndarray]:
    """Causal step-1 predictions, each trajectory run from its first sample."""
    return [model.predict_sequence(tr.features()) for tr in trajectories]


def corr_inputs(model1: GroupModel, tr: Trajectory, pred1: np.ndarray, window: int) -> np.ndarray:
    """Flattened windows of ``[q, qdot, step-1 prediction]`` (normalized).

    Row ``r`` corresponds to sample ``r + window - 1``.
    """
    if len(tr) < window:
        raise DatasetError(f"window of {window} samples exceeds trajectory length {len(tr)}")
    z = np.concatenate([model1.in_scaler.transform(tr.features()),
                        model1.out_scaler.transform(pred1)], axis=1)
    win = sliding_window_view(z, window, axis=0)          # (n - W + 1, F, W)
    return np.ascontiguousarray(win.transpose(0, 2, 1)).reshape(len(win), -1)


def _corr_rows(ds: Dataset, name: str, m1: GroupModel, preds, window: int):
    X, Y = [], []
    for b in ds.split.blocks(name):
        tr = ds.trajectories[b.trajectory]
        inp = corr_inputs(m1, tr, preds[b.trajectory], window)
        lo = max(b.start, window - 1)
        if b.stop <= lo:
            continue
        rows = slice(lo - window + 1, b.stop - window + 1)
        resid = tr.tau[lo:b.stop, list(m1.group)] - preds[b.trajectory][lo:b.stop]
        X.append(inp[rows])
        Y.append(resid / m1.out_scaler.std)
    if not X:
        return np.zeros((0, 0)), np.zeros((0, len(m1.group)))
    return np.concatenate(X), np.concatenate(Y)


def _train_corr_group(ds: Dataset, m1: GroupModel, grouping: JointGrouping, cfg: TrainConfig,
                      method: Method) -> tuple[GroupModel, TrainReport]:
    t0 = time.perf_counter()
    W = grouping.arch.corr_window
    preds = step1_group_prediction(m1, list(ds.trajectories))
    Xtr, Ytr = _corr_rows(ds, "train", m1, preds, W)
    Xva, Yva = _corr_rows(ds, "validation", m1, preds, W)
    if len(Xtr) == 0:
        raise DatasetError("no correction training windows")
    net = Network(grouping.corr_spec(m1.group), seed=cfg.init_seed + 31 * m1.group[0])
    report = TrainReport(method.value, group_name(m1.group), len(Xtr))
    rng = np.random.default_rng(cfg.dropout_seed + m1.group[0])
    mse = lambda X, Y: float(np.mean((net.predict(X[:, None, :])[:, 0, :] - Y) ** 2)) if len(X) else float("nan")
    report.initial_train_loss, report.initial_val_loss = mse(Xtr, Ytr), mse(Xva, Yva)
    report.lr_used = cfg.initial_lr
    n = len(Xtr)
    for epoch in range(cfg.epochs):
        lr = cfg.lr(epoch)
        order = rng.permutation(n)
        total = 0.0
        for s in range(0, n, cfg.batch_size):
            idx = order[s:s + cfg.batch_size]
            net.forward(Xtr[idx][:, None, :], train=True, rng=rng)
            loss, grads = net.loss_and_grads(Ytr[idx][:, None, :], l2=cfg.l2)
            if not math.isfinite(loss):
                raise DivergenceError(f"corr {group_name(m1.group)} diverged")
            net.adam_step(grads, lr)
            total += loss * len(idx)
        report.train_loss.append(total / n)
        report.val_loss.append(mse(Xva, Yva))
        report.lr.append(lr)
        report.epochs_run = epoch + 1
    report.seconds = time.perf_counter() - t0
    resid_scale = Scaler(np.zeros(len(m1.group)), m1.out_scaler.std)
    return GroupModel("corr", m1.group, net, m1.in_scaler, resid_scale, W), report


def train_corr(trocar_ds: Dataset, step1: ModelSet, grouping: JointGrouping | None = None,
               cfg: TrainConfig | None = None, threads: int = 1, groups=None) -> ModelSet:
    """Residual networks on top of frozen step-1 predictions."""
    grouping = grouping or JointGrouping()
    _require(trocar_ds, {Condition.TROCAR}, "correction training")
    method = {Method.BASE: Method.BASE_CORR, Method.SEAL: Method.SEAL_CORR}.get(step1.method)
    if method is None:
        raise PrerequisiteError(f"correction needs a base or seal step-1 model, got {step1.method.value}")
    cfg = cfg or corr_config()
    groups = list(groups or grouping.groups)
    out = _map_groups(lambda g: _train_corr_group(trocar_ds, step1.models[g], grouping, cfg, method),
                      groups, threads)
    return ModelSet(method, {g: m for g, (m, _) in zip(groups, out)}, step1=step1,
                    reports=[r for _, r in out])


# ------------------------------------------------------------ xfer training


def _train_xfer_group(ds: Dataset, m1: GroupModel, grouping: JointGrouping, cfg: TrainConfig
                      ) -> tuple[GroupModel, TrainReport]:
    t0 = time.perf_counter()
    group = m1.group
    spec = grouping.xfer_spec(group)
    backbone = m1.net.spec.layers[0]
    if backbone != replace_trainable(spec.layers[0], True) and backbone != spec.layers[0]:
        raise ValueError(f"backbone {backbone} does not match transfer spec {spec.layers[0]}")
    net = Network(spec, seed=cfg.init_seed + 53 * group[0])
    for k, v in m1.net.params[0].items():
        net.params[0][k] = v.copy()
    Xtr, Ytr = _segments_xy(ds, "train", group)
    Xva, Yva = _segments_xy(ds, "validation", group)
    norm = lambda X, s: [s.transform(x) for x in X]
    A = list(_streams(norm(Xtr, m1.in_scaler), norm(Ytr, m1.out_scaler), cfg.stream_len, LSTM_WARMUP))
    V = list(_streams(norm(Xva, m1.in_scaler), norm(Yva, m1.out_scaler), None, LSTM_WARMUP))
    # frozen backbone: its outputs over the fixed stream layout never change
    A[0] = net.forward(A[0], stop=1, keep_cache=False)
    V[0] = net.forward(V[0], stop=1, keep_cache=False)
    report = TrainReport(Method.SEAL_XFER.value, group_name(group), sum(len(x) for x in Xtr))
    _fit_sequence_net(net, *A, *V, cfg, report, start=1)
    report.seconds = time.perf_counter() - t0
    return GroupModel("xfer", group, net, m1.in_scaler, m1.out_scaler), report


def replace_trainable(layer, flag: bool):
    d = dict(layer.__dict__)
    d["trainable"] = flag
    return type(layer)(**d)


def train_xfer(trocar_ds: Dataset, step1: ModelSet, grouping: JointGrouping | None = None,
               cfg: TrainConfig | None = None, threads: int = 1, groups=None) -> ModelSet:
    """Frozen step-1 LSTM backbone plus a trainable LSTM + dense head."""
    grouping = grouping or JointGrouping()
    _require(trocar_ds, {Condition.TROCAR}, "transfer training")
    if step1.method is not Method.SEAL and step1.method is not Method.BASE:
        raise PrerequisiteError("transfer learning needs a step-1 model")
    cfg = cfg or xfer_config()
    groups = list(groups or grouping.groups)
    out = _map_groups(lambda g: _train_xfer_group(trocar_ds, step1.models[g], grouping, cfg),
                      groups, threads)
    return ModelSet(Method.SEAL_XFER, {g: m for g, (m, _) in zip(groups, out)}, step1=step1,
                    reports=[r for _, r in out])


# -------------------------------------------------------------- prediction


@dataclass
class Prediction:
    tau: np.ndarray           # (n, 6)
    valid: np.ndarray         # (n,) bool, false during warm-up
    step1: np.ndarray | None = None
    correction: np.ndarray | None = None


def predict(models: ModelSet, tr: Trajectory, warmup: int = LSTM_WARMUP) -> Prediction:
    """Causal per-sample joint-torque prediction for one method."""
    n = len(tr)
    feats = tr.features()
    valid = np.arange(n) >= warmup
    if models.method in (Method.BASE_CORR, Method.SEAL_CORR):
        if models.step1 is None:
            raise PrerequisiteError(f"{models.method.value} needs its step-1 models")
        s1 = np.zeros((n, 6))
        corr = np.zeros((n, 6))
        for g, m in models.models.items():
            m1 = models.step1.models[g]
            p1 = m1.predict_sequence(feats)
            s1[:, list(g)] = p1
            W = m.window
            if n >= W:
                inp = corr_inputs(m1, tr, p1, W)
                c = m.net.predict(inp[:, None, :])[:, 0, :] * m.out_scaler.std
                corr[W - 1:, list(g)] = c
            valid &= np.arange(n) >= W - 1
        return Prediction(s1 + corr, valid, s1, corr)
    tau = np.zeros((n, 6))
    for g, m in models.models.items():
        tau[:, list(g)] = m.predict_sequence(feats)
    return Prediction(tau, valid)


def predict_batch(models: ModelSet, trajectories: list[Trajectory], warmup: int = LSTM_WARMUP) -> list[Prediction]:
    """Same as :func:`predict` for equal-length trajectories, batched through the LSTMs."""
    lens = {len(tr) for tr in trajectories}
    if len(lens) != 1 or models.method in (Method.BASE_CORR, Method.SEAL_CORR):
        return [predict(models, tr, warmup) for tr in trajectories]
    n = lens.pop()
    feats = np.stack([tr.features() for tr in trajectories], axis=1)   # (n, B, 12)
    tau = np.zeros((n, len(trajectories), 6))
    for g, m in models.models.items():
        tau[:, :, list(g)] = m.predict_sequence(feats)
    valid = np.arange(n) >= warmup
    return [Prediction(tau[:, b, :].copy(), valid.copy()) for b in range(len(trajectories))]
