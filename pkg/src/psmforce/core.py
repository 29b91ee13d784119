"""Domain types, dataset container, splitting, serialization and RMSE."""
from __future__ import annotations

import csv
import enum
import json
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

NJ = 6
AXES = ("Fx", "Fy", "Fz", "tx", "ty", "tz")
SPLIT_NAMES = ("train", "validation", "test")
SPLIT_FRACTIONS = (0.8, 0.1, 0.1)

CSV_HEADER = (
    ["t"]
    + [f"q{i}" for i in range(1, 7)]
    + [f"qd{i}" for i in range(1, 7)]
    + [f"tau{i}" for i in range(1, 7)]
    + ["fx", "fy", "fz", "tx", "ty", "tz", "condition"]
)


class DatasetError(ValueError):
    """Raised for malformed dataset files or invalid dataset operations."""


class Condition(str, enum.Enum):
    FREE_SPACE = "free-space"
    SEAL_ONLY = "seal"
    TROCAR = "trocar"
    TROCAR_CONTACT = "trocar-contact"

    @classmethod
    def parse(cls, value: "str | Condition") -> "Condition":
        if isinstance(value, Condition):
            return value
        aliases = {
            "freespace": cls.FREE_SPACE,
            "free_space": cls.FREE_SPACE,
            "sealonly": cls.SEAL_ONLY,
            "seal-only": cls.SEAL_ONLY,
            "trocarcontact": cls.TROCAR_CONTACT,
            "contact": cls.TROCAR_CONTACT,
        }
        key = str(value).strip().lower()
        for c in cls:
            if c.value == key or c.name.lower() == key:
                return c
        if key in aliases:
            return aliases[key]
        raise ValueError(f"unknown condition {value!r}")


class Frame(str, enum.Enum):
    TOOL_TIP = "tool-tip"
    BASE = "base"


@dataclass(frozen=True)
class Wrench:
    force: np.ndarray
    torque: np.ndarray
    frame: Frame = Frame.BASE

    def __post_init__(self):
        f = np.asarray(self.force, dtype=float).reshape(3)
        t = np.asarray(self.torque, dtype=float).reshape(3)
        if not (np.all(np.isfinite(f)) and np.all(np.isfinite(t))):
            raise ValueError("wrench components must be finite")
        object.__setattr__(self, "force", f)
        object.__setattr__(self, "torque", t)

    @classmethod
    def from_vector(cls, w, frame: Frame = Frame.BASE) -> "Wrench":
        w = np.asarray(w, dtype=float).reshape(6)
        return cls(w[:3], w[3:], frame)

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.force, self.torque])


@dataclass(frozen=True)
class TelemetrySample:
    t: float
    q: np.ndarray
    qdot: np.ndarray
    tau_meas: np.ndarray
    wrench_gt: np.ndarray | None
    condition: Condition


def _frozen(a, shape_tail=None, name="array") -> np.ndarray:
    a = np.array(a, dtype=float, copy=True)
    if shape_tail is not None and (a.ndim != 2 or a.shape[1] != shape_tail):
        raise ValueError(f"{name} must have shape (n, {shape_tail}), got {a.shape}")
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Trajectory:
    """A time-ordered run of telemetry under one condition.

    Arrays are stored read-only with shape ``(n,)`` for ``t`` and ``(n, 6)``
    for the joint and wrench series.
    """

    t: np.ndarray
    q: np.ndarray
    qdot: np.ndarray
    tau: np.ndarray
    condition: Condition
    wrench: np.ndarray | None = None
    instrumented: bool = False

    def __post_init__(self):
        object.__setattr__(self, "condition", Condition.parse(self.condition))
        t = _frozen(self.t, name="t").reshape(-1)
        object.__setattr__(self, "t", t)
        for name in ("q", "qdot", "tau"):
            object.__setattr__(self, name, _frozen(getattr(self, name), NJ, name))
        n = len(t)
        if any(len(getattr(self, k)) != n for k in ("q", "qdot", "tau")):
            raise ValueError("trajectory series lengths differ")
        if self.wrench is not None:
            w = _frozen(self.wrench, NJ, "wrench")
            if len(w) != n:
                raise ValueError("wrench series length differs")
            object.__setattr__(self, "wrench", w)
        needs_wrench = self.condition is Condition.TROCAR_CONTACT or self.instrumented
        if needs_wrench != (self.wrench is not None):
            raise ValueError(
                "wrench_gt must be present iff condition is trocar-contact "
                "or the trajectory is sensor-instrumented"
            )
        if n > 1 and not np.all(np.diff(t) > 0):
            raise ValueError("t must be strictly increasing")
        for name in ("t", "q", "qdot", "tau", "wrench"):
            a = getattr(self, name)
            if a is not None and not np.all(np.isfinite(a)):
                raise ValueError(f"non-finite values in {name}")

    def __len__(self) -> int:
        return len(self.t)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Trajectory):
            return NotImplemented
        if self.condition != other.condition or self.instrumented != other.instrumented:
            return False
        if (self.wrench is None) != (other.wrench is None):
            return False
        pairs = [(self.t, other.t), (self.q, other.q), (self.qdot, other.qdot), (self.tau, other.tau)]
        if self.wrench is not None:
            pairs.append((self.wrench, other.wrench))
        return all(np.array_equal(a, b) for a, b in pairs)

    def sample(self, i: int) -> TelemetrySample:
        return TelemetrySample(
            float(self.t[i]), self.q[i], self.qdot[i], self.tau[i],
            None if self.wrench is None else self.wrench[i], self.condition,
        )

    def __iter__(self) -> Iterator[TelemetrySample]:
        for i in range(len(self)):
            yield self.sample(i)

    def slice(self, start: int, stop: int) -> "Trajectory":
        return Trajectory(
            self.t[start:stop], self.q[start:stop], self.qdot[start:stop],
            self.tau[start:stop], self.condition,
            None if self.wrench is None else self.wrench[start:stop],
            self.instrumented,
        )

    def features(self) -> np.ndarray:
        """Network input rows ``[q, qdot]`` of shape ``(n, 12)``."""
        return np.concatenate([self.q, self.qdot], axis=1)


@dataclass(frozen=True)
class Block:
    trajectory: int
    start: int
    stop: int

    def __len__(self) -> int:
        return self.stop - self.start


@dataclass(frozen=True)
class Split:
    train: tuple[Block, ...] = ()
    validation: tuple[Block, ...] = ()
    test: tuple[Block, ...] = ()

    def blocks(self, name: str) -> tuple[Block, ...]:
        if name not in SPLIT_NAMES:
            raise KeyError(name)
        return getattr(self, name)

    def size(self, name: str) -> int:
        return sum(len(b) for b in self.blocks(name))


@dataclass(frozen=True, eq=False)
class Dataset:
    trajectories: tuple[Trajectory, ...]
    sample_rate: float
    split: Split | None = None
    split_seed: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "trajectories", tuple(self.trajectories))
        if not self.sample_rate > 0:
            raise ValueError("sample_rate must be positive")

    def __eq__(self, other) -> bool:
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            self.sample_rate == other.sample_rate
            and self.split == other.split
            and self.split_seed == other.split_seed
            and len(self.trajectories) == len(other.trajectories)
            and all(a == b for a, b in zip(self.trajectories, other.trajectories))
        )

    @property
    def n_samples(self) -> int:
        return sum(len(tr) for tr in self.trajectories)

    @property
    def conditions(self) -> set[Condition]:
        return {tr.condition for tr in self.trajectories}

    def segments(self, name: str) -> list[Trajectory]:
        """Contiguous trajectory pieces belonging to split ``name``."""
        if self.split is None:
            raise DatasetError("dataset has no split; call split_dataset first")
        return [self.trajectories[b.trajectory].slice(b.start, b.stop)
                for b in self.split.blocks(name) if len(b)]

    def prefix(self, seconds: float) -> "Dataset":
        """Leading ``seconds`` of data (first trajectories first), unsplit."""
        keep = int(round(seconds * self.sample_rate))
        out = []
        for tr in self.trajectories:
            if keep <= 0:
                break
            n = min(keep, len(tr))
            out.append(tr.slice(0, n))
            keep -= n
        if keep > 0:
            raise DatasetError(
                f"dataset holds {self.n_samples / self.sample_rate:.1f} s, "
                f"{seconds} s requested"
            )
        return Dataset(tuple(out), self.sample_rate)


def split_dataset(ds: Dataset, seed: int = 0) -> Dataset:
    """Assign contiguous train/validation/test blocks to every trajectory.

    Each trajectory contributes its first 80 % to train, the next 10 % to
    validation and the last 10 % to test.  Validation and test sizes are
    ``floor(0.1 * n)``; the remainder goes to train.  The seed is recorded
    but the assignment is purely positional, so it never reorders samples.
    """
    if ds.n_samples < 10:
        raise DatasetError(f"dataset too small to split ({ds.n_samples} samples, need >= 10)")
    train, val, test = [], [], []
    for k, tr in enumerate(ds.trajectories):
        n = len(tr)
        n_hold = int(math.floor(n * SPLIT_FRACTIONS[1]))
        n_train = n - 2 * n_hold
        train.append(Block(k, 0, n_train))
        val.append(Block(k, n_train, n_train + n_hold))
        test.append(Block(k, n_train + n_hold, n))
    split = Split(tuple(train), tuple(val), tuple(test))
    if split.size("validation") == 0 or split.size("test") == 0:
        raise DatasetError("dataset too small to populate all three splits")
    return replace(ds, split=split, split_seed=int(seed))


# --------------------------------------------------------------------------- io


def _fmt(x: float) -> str:
    return repr(float(x))


def write_trajectory_csv(tr: Trajectory, path: str | Path) -> None:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for i in range(len(tr)):
            row = [_fmt(tr.t[i])]
            row += [_fmt(v) for v in tr.q[i]]
            row += [_fmt(v) for v in tr.qdot[i]]
            row += [_fmt(v) for v in tr.tau[i]]
            if tr.wrench is None:
                row += [""] * 6
            else:
                row += [_fmt(v) for v in tr.wrench[i]]
            row.append(tr.condition.value)
            w.writerow(row)


def read_trajectory_csv(path: str | Path, instrumented: bool | None = None) -> Trajectory | None:
    """Parse one trajectory file; returns None for a header-only file."""
    path = Path(path)
    rows = []
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            return None
        if [h.strip() for h in header] != CSV_HEADER:
            raise DatasetError(f"{path}:1: unexpected header")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(CSV_HEADER):
                raise DatasetError(
                    f"{path}:{lineno}: expected {len(CSV_HEADER)} fields, got {len(row)}"
                )
            try:
                nums = [float(v) for v in row[:19]]
                wr = row[19:25]
                wvals = None if all(v.strip() == "" for v in wr) else [float(v) for v in wr]
                cond = Condition.parse(row[25])
            except ValueError as exc:
                raise DatasetError(f"{path}:{lineno}: {exc}") from None
            if not all(math.isfinite(v) for v in nums + (wvals or [])):
                raise DatasetError(f"{path}:{lineno}: non-finite value")
            rows.append((nums, wvals, cond, lineno))
    if not rows:
        return None
    conds = {r[2] for r in rows}
    if len(conds) != 1:
        raise DatasetError(f"{path}: mixed conditions in one trajectory file")
    has_w = [r[1] is not None for r in rows]
    if any(has_w) and not all(has_w):
        bad = rows[has_w.index(not has_w[0])][3]
        raise DatasetError(f"{path}:{bad}: wrench columns must be all present or all empty")
    data = np.array([r[0] for r in rows])
    wrench = np.array([r[1] for r in rows]) if has_w[0] else None
    cond = conds.pop()
    if instrumented is None:
        instrumented = wrench is not None and cond is not Condition.TROCAR_CONTACT
    try:
        return Trajectory(data[:, 0], data[:, 1:7], data[:, 7:13], data[:, 13:19],
                          cond, wrench, instrumented)
    except ValueError as exc:
        raise DatasetError(f"{path}: {exc}") from None


def write_dataset(ds: Dataset, path: str | Path) -> Path:
    """Write ``ds`` as a JSON manifest plus one CSV per trajectory.

    ``path`` is the manifest file; trajectory files are placed next to it.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    stem = path.stem
    entries = []
    for k, tr in enumerate(ds.trajectories):
        fname = f"{stem}_{k:03d}.csv"
        write_trajectory_csv(tr, path.parent / fname)
        entries.append({"file": fname, "condition": tr.condition.value,
                        "instrumented": tr.instrumented, "samples": len(tr)})
    manifest = {
        "format": "psmforce-dataset",
        "version": 1,
        "sample_rate": ds.sample_rate,
        "split_seed": ds.split_seed,
        "trajectories": entries,
    }
    if ds.split is not None:
        manifest["split"] = {
            name: [[b.trajectory, b.start, b.stop] for b in ds.split.blocks(name)]
            for name in SPLIT_NAMES
        }
    path.write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    return path


def read_dataset(path: str | Path, sample_rate: float | None = None) -> Dataset:
    """Load a dataset manifest (``.json``) or a single trajectory CSV."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    if path.suffix.lower() == ".csv":
        tr = read_trajectory_csv(path)
        trs = () if tr is None else (tr,)
        if sample_rate is None:
            sample_rate = 1.0 / float(np.median(np.diff(tr.t))) if tr is not None and len(tr) > 1 else 1.0
        return Dataset(trs, sample_rate)
    try:
        meta = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DatasetError(f"{path}: invalid manifest: {exc}") from None
    trs = []
    for entry in meta.get("trajectories", []):
        tr = read_trajectory_csv(path.parent / entry["file"], entry.get("instrumented"))
        if tr is not None:
            trs.append(tr)
    split = None
    if "split" in meta:
        split = Split(*(tuple(Block(*b) for b in meta["split"][name]) for name in SPLIT_NAMES))
    return Dataset(tuple(trs), float(meta["sample_rate"]), split, meta.get("split_seed"))


# ----------------------------------------------------------------------- metrics


def rmse(pred, truth) -> np.ndarray:
    """Per-component root-mean-square error over the leading (time) axis."""
    p = np.asarray(pred, dtype=float)
    t = np.asarray(truth, dtype=float)
    if p.shape != t.shape:
        raise ValueError(f"shape mismatch: {p.shape} vs {t.shape}")
    if p.ndim == 0 or len(p) < 1:
        raise ValueError("rmse needs at least one sample")
    return np.sqrt(np.mean((p - t) ** 2, axis=0))


@dataclass(frozen=True)
class TrialStats:
    mean: np.ndarray
    std: np.ndarray
    trials: int


def aggregate_trials(per_trial: Sequence) -> TrialStats:
    """Mean and sample standard deviation of per-trial RMSE vectors."""
    arr = np.asarray(per_trial, dtype=float)
    if arr.ndim != 2 or len(arr) == 0:
        raise ValueError("need a non-empty (trials, k) array")
    std = arr.std(axis=0, ddof=1) if len(arr) > 1 else np.zeros(arr.shape[1])
    return TrialStats(arr.mean(axis=0), std, len(arr))


__all__ = [
    "AXES", "Block", "CSV_HEADER", "Condition", "Dataset", "DatasetError", "Frame",
    "Split", "TelemetrySample", "Trajectory", "TrialStats", "Wrench",
    "aggregate_trials", "read_dataset", "read_trajectory_csv", "rmse",
    "split_dataset", "write_dataset", "write_trajectory_csv",
]
