"""Experiment harness: training time vs. trocar data length, fictitious
wrenches during free motion in the trocar, and contact-force accuracy.

A :class:`Workbench` owns an output directory with generated datasets and
trained models; the ``run_*`` functions fill a :class:`BenchReport` that
:func:`emit_report` renders as CSV or markdown tables.
"""
from __future__ import annotations

import json
import logging
import math
import os
import platform
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .core import AXES, Condition, Dataset, DatasetError, aggregate_trials, read_dataset, rmse, split_dataset, write_dataset
from .dynsim import DisturbanceModel, ScenarioScript, default_script, generate
from .estimator import COND_THRESHOLD, wrench_series
from .manipulator import KinematicModel
from .pipeline import (
    LSTM_WARMUP, DivergenceError, JointGrouping, Method, ModelSet, PrerequisiteError,
    corr_config, predict, step1_config, train_corr, train_step1, train_troc, train_xfer,
    xfer_config,
)

log = logging.getLogger(__name__)

DEFAULT_LENGTHS = (229.0, 474.0, 874.0, 1013.0)
TIMED_METHODS = ("troc", "corr", "xfer")
CORRECTED = (Method.BASE_CORR, Method.SEAL_CORR, Method.SEAL_XFER)
REPORT_FILES = ("timing", "nocontact", "contact", "fig8_series")


def derive_seed(seed: int, *keys) -> int:
    """Stable child seed for a named purpose (e.g. ``("contact", 3)``)."""
    words = [int(seed)] + [k if isinstance(k, int) else int.from_bytes(str(k).encode(), "little") % (2**32)
                           for k in keys]
    return int(np.random.SeedSequence(words).generate_state(1)[0])


# ------------------------------------------------------------------ setup


@dataclass(frozen=True)
class ExperimentMatrix:
    methods: tuple[Method, ...] = tuple(Method)
    lengths: tuple[float, ...] = DEFAULT_LENGTHS
    nocontact_trials: int = 20
    contact_trials: int = 12
    nocontact_length: float = 474.0
    trial_duration: float = 60.0

    def __post_init__(self):
        object.__setattr__(self, "methods", tuple(Method(m) for m in self.methods))
        object.__setattr__(self, "lengths", tuple(float(x) for x in self.lengths))
        if any(x <= 0 for x in self.lengths) or list(self.lengths) != sorted(set(self.lengths)):
            raise ValueError("trocar lengths must be positive and strictly ascending")
        if self.nocontact_trials < 1 or self.contact_trials < 1:
            raise ValueError("trial counts must be at least 1")
        if self.nocontact_length <= 0 or self.trial_duration <= 0:
            raise ValueError("nocontact_length and trial_duration must be positive")

    @property
    def max_length(self) -> float:
        return max((*self.lengths, self.nocontact_length))


@dataclass(frozen=True)
class DataPlan:
    """How much telemetry of one condition to simulate."""

    duration: float
    trajectories: int = 1
    script: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.duration > 0 or self.trajectories < 1:
            raise ValueError("duration must be positive and trajectories >= 1")


@dataclass(frozen=True)
class Experiment:
    """Everything needed to regenerate data, retrain and re-evaluate."""

    kinematics: KinematicModel = KinematicModel()
    disturbance: DisturbanceModel = DisturbanceModel()
    rate: float = 5.0
    velocity_cutoff: float = 20.0
    data: dict = field(default_factory=lambda: {
        Condition.FREE_SPACE: DataPlan(1800.0, 8),
        Condition.SEAL_ONLY: DataPlan(1800.0, 8),
        Condition.TROCAR: DataPlan(1013.0, 1),
        Condition.TROCAR_CONTACT: DataPlan(60.0, 1),
    })
    grouping: JointGrouping = JointGrouping()
    training: dict = field(default_factory=lambda: {
        "step1": step1_config(), "troc": step1_config(), "corr": corr_config(), "xfer": xfer_config(),
    })
    matrix: ExperimentMatrix = ExperimentMatrix()
    seed: int = 0
    threads: int = 1

    def script(self, condition: Condition, duration: float) -> ScenarioScript:
        base = default_script(condition, duration)
        extra = dict(self.data[condition].script) if condition in self.data else {}
        return replace(base, **extra) if extra else base

    def simulate(self, condition: Condition, duration: float, seed: int):
        return generate(self.kinematics, self.disturbance, self.script(condition, duration), seed,
                        rate=self.rate, cutoff=self.velocity_cutoff)


# ------------------------------------------------------------- workbench


class Workbench:
    """Datasets under ``root/data/<condition>/`` and models under
    ``root/models/<method>[/<length>]/``."""

    def __init__(self, experiment: Experiment, root, train_missing: bool = False):
        self.exp = experiment
        self.root = Path(root)
        self.train_missing = train_missing
        self._data: dict = {}
        self._models: dict = {}

    # data
    def dataset_path(self, condition: Condition) -> Path:
        return self.root / "data" / condition.value / "dataset.json"

    def generate(self, condition: Condition, duration: float | None = None) -> Dataset:
        plan = self.exp.data[condition]
        total = plan.duration if duration is None else float(duration)
        if not total > 0:
            raise ValueError("duration must be positive")
        each = total / plan.trajectories
        trs = tuple(self.exp.simulate(condition, each, derive_seed(self.exp.seed, condition.value, k))
                    for k in range(plan.trajectories))
        ds = split_dataset(Dataset(trs, self.exp.rate), seed=self.exp.seed)
        write_dataset(ds, self.dataset_path(condition))
        self._data[condition] = ds
        return ds

    def dataset(self, condition: Condition) -> Dataset:
        if condition in self._data:
            return self._data[condition]
        path = self.dataset_path(condition)
        if path.exists():
            ds = read_dataset(path)
            if ds.split is None:
                ds = split_dataset(ds, seed=self.exp.seed)
        elif self.train_missing:
            ds = self.generate(condition)
        else:
            raise PrerequisiteError(f"missing {condition.value} dataset {path}; "
                                    f"run `generate --condition {condition.value}` first")
        self._data[condition] = ds
        return ds

    def trocar_dataset(self, length: float) -> Dataset:
        """Leading ``length`` seconds of the trocar recording, freshly split."""
        full = self.dataset(Condition.TROCAR)
        try:
            return split_dataset(full.prefix(length), seed=self.exp.seed)
        except DatasetError as exc:
            raise DatasetError(f"trocar length {length:g} s: {exc}") from None

    # models
    def model_dir(self, method: Method, length: float | None = None) -> Path:
        d = self.root / "models" / method.value
        return d / f"{length:g}" if method.uses_trocar_data else d

    def has_models(self, method: Method, length: float | None = None) -> bool:
        d = self.model_dir(method, length)
        return all((d / f"{'j' + ''.join(str(j + 1) for j in g)}.psmnet").exists()
                   for g in self.exp.grouping.groups)

    def models(self, method: Method, length: float | None = None) -> ModelSet:
        method = Method(method)
        key = (method, length if method.uses_trocar_data else None)
        if key in self._models:
            return self._models[key]
        if method.uses_trocar_data and length is None:
            raise ValueError(f"{method.value} needs a trocar dataset length")
        step1 = self.models(method.step1) if method.step1 is not None else None
        d = self.model_dir(method, length)
        if self.has_models(method, length):
            ms = ModelSet.load(method, d, self.exp.grouping, step1)
        elif self.train_missing:
            ms = self.train(method, length)
        else:
            raise PrerequisiteError(f"missing {method.value} models in {d}; "
                                    f"run `train --method {method.value}` or pass --train-missing")
        self._models[key] = ms
        return ms

    def train(self, method: Method, length: float | None = None) -> ModelSet:
        """Train (and save) one method; prerequisites must already exist."""
        method = Method(method)
        exp = self.exp
        cfg = exp.training
        g = exp.grouping
        if method is Method.BASE:
            ms = train_step1(self.dataset(Condition.FREE_SPACE), g, cfg["step1"], exp.threads)
        elif method is Method.SEAL:
            ms = train_step1(self.dataset(Condition.SEAL_ONLY), g, cfg["step1"], exp.threads)
        else:
            if length is None:
                raise ValueError(f"{method.value} needs a trocar dataset length")
            ds = self.trocar_dataset(length)
            if method is Method.TROC:
                ms = train_troc(ds, g, cfg["troc"], exp.threads)
            else:
                step1 = self.models(method.step1)
                if method is Method.SEAL_XFER:
                    ms = train_xfer(ds, step1, g, cfg["xfer"], exp.threads)
                else:
                    ms = train_corr(ds, step1, g, cfg["corr"], exp.threads)
        d = self.model_dir(method, length)
        ms.save(d)
        (d / "report.json").write_text(json.dumps(
            {"method": method.value, "trocar_length_s": length,
             "reports": [r.to_json() for r in ms.reports]}, indent=1))
        self._models[(method, length if method.uses_trocar_data else None)] = ms
        return ms

    # trials
    def trial(self, kind: str, index: int):
        cond = Condition.TROCAR if kind == "nocontact" else Condition.TROCAR_CONTACT
        return self.exp.simulate(cond, self.exp.matrix.trial_duration,
                                 derive_seed(self.exp.seed, kind, index))


# ---------------------------------------------------------------- reports


@dataclass
class Cell:
    method: str
    length_s: float | None
    mean: list
    std: list
    trials: int
    status: str = "ok"
    reason: str = ""


@dataclass
class TimingRow:
    length_s: float
    seconds: dict                      # method kind -> seconds or None
    status: str = "ok"
    reason: str = ""


@dataclass
class BenchReport:
    timing: list = field(default_factory=list)
    nocontact: list = field(default_factory=list)
    contact: list = field(default_factory=list)
    environment: dict = field(default_factory=dict)

    def cell(self, table: str, method, length=None) -> Cell | None:
        method = Method(method).value
        for c in getattr(self, table):
            if c.method == method and (length is None or c.length_s == length):
                return c
        return None


def environment_fingerprint(exp: Experiment) -> dict:
    return {
        "python": platform.python_version(),
        "numpy": np.__version__,
        "machine": platform.machine(),
        "processor": platform.processor() or platform.machine(),
        "cpu_count": os.cpu_count(),
        "threads": exp.threads,
        "seed": exp.seed,
    }


def _failed(method: Method, length, trials, exc: Exception) -> Cell:
    nan = [math.nan] * 6
    return Cell(method.value, length, nan, nan, trials, "failed", f"{type(exc).__name__}: {exc}")


def _trial_rmse(bench: Workbench, ms: ModelSet, tr, contact: bool) -> np.ndarray:
    p = predict(ms, tr, LSTM_WARMUP)
    w, _, valid = wrench_series(bench.exp.kinematics, tr.q, tr.tau, p.tau, COND_THRESHOLD)
    keep = p.valid & valid
    if not keep.any():
        raise DatasetError("no valid samples after warm-up and conditioning")
    truth = tr.wrench if contact else np.zeros_like(w)
    return rmse(w[keep], truth[keep])


def _evaluate(bench: Workbench, method: Method, length, trials: list, contact: bool) -> Cell:
    try:
        ms = bench.models(method, length)
        per = [_trial_rmse(bench, ms, tr, contact) for tr in trials]
    except (DivergenceError, DatasetError, PrerequisiteError, FloatingPointError) as exc:
        if isinstance(exc, PrerequisiteError) and not bench.train_missing:
            raise
        return _failed(method, length, len(trials), exc)
    st = aggregate_trials(per)
    return Cell(method.value, length, [float(x) for x in st.mean], [float(x) for x in st.std], st.trials)


def run_nocontact(bench: Workbench, report: BenchReport | None = None) -> BenchReport:
    """Fictitious wrench RMSE over fresh no-contact trocar trials."""
    report = report or BenchReport()
    m = bench.exp.matrix
    trials = [bench.trial("nocontact", i) for i in range(m.nocontact_trials)]
    for method in m.methods:
        length = m.nocontact_length if method.uses_trocar_data else None
        report.nocontact.append(_evaluate(bench, method, length, trials, contact=False))
    return report


def run_contact(bench: Workbench, report: BenchReport | None = None) -> BenchReport:
    """Wrench RMSE against the simulated contact wrench, per trocar length.

    The same trial trajectories are used at every length, and pretrained
    methods are evaluated once, so their rows are constant across lengths.
    """
    report = report or BenchReport()
    m = bench.exp.matrix
    trials = [bench.trial("contact", i) for i in range(m.contact_trials)]
    for method in m.methods:
        if method.uses_trocar_data:
            for length in m.lengths:
                report.contact.append(_evaluate(bench, method, length, trials, contact=True))
        else:
            cell = _evaluate(bench, method, None, trials, contact=True)
            for length in m.lengths:
                report.contact.append(replace(cell, length_s=length))
    return report


def _timed(fn) -> float:
    t0 = time.perf_counter()
    fn()
    return time.perf_counter() - t0


def run_timing(bench: Workbench, report: BenchReport | None = None, group=(4, 5)) -> BenchReport:
    """Wall-clock to train one group network (default joints 5-6) per method
    and trocar length, data already in memory.  One warm-up run is discarded.
    """
    report = report or BenchReport()
    exp = bench.exp
    m = exp.matrix
    if not m.lengths:
        return report
    group = tuple(group)
    g, cfg = exp.grouping, exp.training
    seal = bench.models(Method.SEAL)
    data = {L: bench.trocar_dataset(L) for L in m.lengths}
    jobs = {
        "troc": lambda ds: train_troc(ds, g, cfg["troc"], groups=[group]),
        "corr": lambda ds: train_corr(ds, seal, g, cfg["corr"], groups=[group]),
        "xfer": lambda ds: train_xfer(ds, seal, g, cfg["xfer"], groups=[group]),
    }
    jobs["corr"](data[m.lengths[0]])          # warm-up, discarded
    for L in m.lengths:
        row = TimingRow(L, {})
        for kind in TIMED_METHODS:
            try:
                row.seconds[kind] = _timed(lambda: jobs[kind](data[L]))
            except (DivergenceError, DatasetError) as exc:
                row.seconds[kind] = None
                row.status = "failed"
                row.reason = (row.reason + "; " if row.reason else "") + f"{kind}: {exc}"
        report.timing.append(row)
    return report


def run_all(bench: Workbench, which: str = "all") -> BenchReport:
    if which not in ("timing", "nocontact", "contact", "all"):
        raise ValueError(f"unknown benchmark {which!r}")
    report = BenchReport(environment=environment_fingerprint(bench.exp))
    if which in ("timing", "all"):
        run_timing(bench, report)
    if which in ("nocontact", "all"):
        run_nocontact(bench, report)
    if which in ("contact", "all"):
        run_contact(bench, report)
    return report


# ------------------------------------------------------------------ checks


@dataclass(frozen=True)
class Check:
    name: str
    passed: bool
    detail: str


def fig8_series(report: BenchReport) -> list[dict]:
    """Mean force and torque RMSE per method and trocar length."""
    rows = []
    for c in report.contact:
        rows.append({"method": c.method, "length_s": c.length_s,
                     "mean_force_rmse": float(np.mean(c.mean[:3])),
                     "mean_torque_rmse": float(np.mean(c.mean[3:])),
                     "status": c.status})
    return rows


def ordering_checks(report: BenchReport) -> list[Check]:
    """Qualitative orderings the benchmark is expected to reproduce."""
    out = []
    nc = {c.method: c for c in report.nocontact if c.status == "ok"}
    pairs = [(Method.BASE, Method.SEAL, ">"), (Method.SEAL, Method.SEAL_CORR, ">="),
             (Method.BASE, Method.BASE_CORR, ">")]
    for a, b, op in pairs:
        if a.value in nc and b.value in nc:
            for k, ax in enumerate(AXES[:3]):
                x, y = nc[a.value].mean[k], nc[b.value].mean[k]
                ok = x > y if op == ">" else x >= y
                out.append(Check(f"nocontact {ax}: {a.label} {op} {b.label}", ok, f"{x:.4g} vs {y:.4g}"))
    series = {(r["method"], r["length_s"]): r for r in fig8_series(report) if r["status"] == "ok"}
    lengths = sorted({c.length_s for c in report.contact})
    for L in lengths:
        base = series.get((Method.BASE.value, L))
        if base is None:
            continue
        for mth in CORRECTED:
            r = series.get((mth.value, L))
            if r is not None:
                out.append(Check(f"contact {L:g} s: {mth.label} <= Base mean force",
                                 r["mean_force_rmse"] <= base["mean_force_rmse"],
                                 f"{r['mean_force_rmse']:.4g} vs {base['mean_force_rmse']:.4g}"))
    for row in report.timing:
        t = row.seconds
        if t.get("troc") is not None and t.get("corr") is not None:
            out.append(Check(f"timing {row.length_s:g} s: Troc > 10x Corr", t["troc"] > 10 * t["corr"],
                             f"{t['troc']:.3g} s vs {t['corr']:.3g} s"))
        if t.get("troc") is not None and t.get("xfer") is not None:
            out.append(Check(f"timing {row.length_s:g} s: Xfer < Troc", t["xfer"] < t["troc"],
                             f"{t['xfer']:.3g} s vs {t['troc']:.3g} s"))
    ok_rows = [r for r in report.timing if r.seconds.get("corr") is not None]
    if len(ok_rows) >= 2:
        first, last = ok_rows[0], ok_rows[-1]
        ratio = last.seconds["corr"] / first.seconds["corr"]
        bound = last.length_s / first.length_s * 1.5
        out.append(Check("timing: Corr scales at most linearly (x1.5)", ratio <= bound,
                         f"t({last.length_s:g})/t({first.length_s:g}) = {ratio:.3g}, bound {bound:.3g}"))
    return out


# ----------------------------------------------------------------- output


def _f(x) -> str:
    return "" if x is None or (isinstance(x, float) and math.isnan(x)) else repr(float(x))


def _table_rows(cells: list[Cell]):
    header = ["method", "length_s", "statistic", *AXES, "trials", "status", "reason"]
    rows = []
    for c in cells:
        for stat, vals in (("mean", c.mean), ("std", c.std)):
            rows.append([c.method, _f(c.length_s), stat, *[_f(v) for v in vals], str(c.trials),
                         c.status, c.reason])
    return header, rows


def _hms(s: float | None) -> str:
    if s is None:
        return "failed"
    m, sec = divmod(s, 60.0)
    h, m = divmod(int(m), 60)
    return f"{h}:{m:02d}:{sec:05.2f} ({s:.2f})"


def _ms(c: Cell | None, k: int) -> str:
    if c is None or c.status != "ok":
        return "failed" if c is not None else ""
    prec = 2 if k < 3 else 3
    return f"{c.mean[k]:.{prec}f} ({c.std[k]:.{prec}f})"


def render_csv(report: BenchReport, table: str) -> str:
    import csv
    import io

    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    if table == "timing":
        w.writerow(["length_s", *(f"{k}_s" for k in TIMED_METHODS), "status", "reason"])
        for r in report.timing:
            w.writerow([_f(r.length_s), *(_f(r.seconds.get(k)) for k in TIMED_METHODS), r.status, r.reason])
    elif table in ("nocontact", "contact"):
        header, rows = _table_rows(getattr(report, table))
        w.writerow(header)
        w.writerows(rows)
    elif table == "fig8_series":
        w.writerow(["method", "length_s", "mean_force_rmse", "mean_torque_rmse", "status"])
        for r in fig8_series(report):
            w.writerow([r["method"], _f(r["length_s"]), _f(r["mean_force_rmse"]),
                        _f(r["mean_torque_rmse"]), r["status"]])
    else:
        raise ValueError(f"unknown table {table!r}")
    return buf.getvalue()


def render_markdown(report: BenchReport, table: str) -> str:
    lines = []
    if table == "timing":
        lines += ["| Training dataset (s) | Troc | Corr | Xfer |", "|---:|---:|---:|---:|"]
        for r in report.timing:
            lines.append(f"| {r.length_s:g} | " + " | ".join(_hms(r.seconds.get(k)) for k in TIMED_METHODS) + " |")
    elif table == "nocontact":
        lines += ["| Method | " + " | ".join(AXES) + " |", "|---|" + "---:|" * 6]
        for c in report.nocontact:
            lines.append(f"| {Method(c.method).label} | " + " | ".join(_ms(c, k) for k in range(6)) + " |")
    elif table == "contact":
        lengths = sorted({c.length_s for c in report.contact})
        methods = list(dict.fromkeys(c.method for c in report.contact))
        lines += ["| Axis | Method | " + " | ".join(f"{L:g} s" for L in lengths) + " |",
                  "|---|---|" + "---:|" * len(lengths)]
        for k, ax in enumerate(AXES):
            for mth in methods:
                vals = [_ms(report.cell("contact", mth, L), k) for L in lengths]
                lines.append(f"| {ax} | {Method(mth).label} | " + " | ".join(vals) + " |")
    elif table == "fig8_series":
        lines += ["| Method | Length (s) | Mean force RMSE (N) | Mean torque RMSE (Nm) |",
                  "|---|---:|---:|---:|"]
        for r in fig8_series(report):
            lines.append(f"| {Method(r['method']).label} | {r['length_s']:g} | "
                         f"{r['mean_force_rmse']:.3f} | {r['mean_torque_rmse']:.4f} |")
    else:
        raise ValueError(f"unknown table {table!r}")
    return "\n".join(lines) + "\n"


def emit_report(report: BenchReport, directory, fmt: str = "csv", tables=REPORT_FILES) -> list[Path]:
    """Write one file per table (``timing.csv`` ... or ``.md``) into ``directory``."""
    if fmt not in ("csv", "markdown"):
        raise ValueError(f"unknown report format {fmt!r}")
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    out = []
    for t in tables:
        path = directory / f"{t}.{'csv' if fmt == 'csv' else 'md'}"
        text = render_csv(report, t) if fmt == "csv" else render_markdown(report, t)
        path.write_text(text, encoding="utf-8")
        out.append(path)
    return out


def read_table_csv(path) -> list[dict]:
    """Parse a ``nocontact.csv``/``contact.csv`` file back into dict rows with float cells."""
    import csv

    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        for r in csv.DictReader(fh):
            for k in (*AXES, "length_s"):
                if k in r:
                    r[k] = float(r[k]) if r[k] != "" else None
            if "trials" in r:
                r["trials"] = int(r["trials"])
            rows.append(r)
    return rows


def write_environment(report: BenchReport, directory) -> Path:
    path = Path(directory) / "environment.json"
    path.write_text(json.dumps(report.environment, indent=1, sort_keys=True), encoding="utf-8")
    return path


__all__ = [
    "BenchReport", "Cell", "Check", "DataPlan", "Experiment", "ExperimentMatrix", "TimingRow",
    "Workbench", "derive_seed", "emit_report", "environment_fingerprint", "fig8_series",
    "ordering_checks", "read_table_csv", "render_csv", "render_markdown", "run_all",
    "run_contact", "run_nocontact", "run_timing", "write_environment",
]
