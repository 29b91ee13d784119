"""Command-line entry point: ``psmforce {generate,train,predict,bench}``.

Exit codes: 0 success, 1 usage or manifest error, 2 runtime failure,
3 benchmark assertion failure.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from importlib import resources
from pathlib import Path

import numpy as np

from .core import Condition, DatasetError, read_dataset, read_trajectory_csv
from .dynsim import BoucWen, DisturbanceModel, ScenarioError, ScenarioScript
from .estimator import wrench_series
from .evalbench import (
    DataPlan, Experiment, ExperimentMatrix, Workbench, emit_report, ordering_checks, run_all,
    write_environment,
)
from .manipulator import KinematicModel
from .pipeline import (
    Architecture, DivergenceError, EarlyStopping, JointGrouping, Method, PrerequisiteError,
    TrainConfig, corr_config, predict, step1_config, xfer_config,
)

log = logging.getLogger("psmforce")

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME, EXIT_ASSERT = 0, 1, 2, 3
OUTPUT_ENV = "PSMFORCE_OUTPUT_DIR"

MANIFEST_KEYS = {"output_dir", "seed", "threads", "kinematics", "disturbance", "simulation",
                 "scenarios", "architecture", "training", "experiment"}


class ManifestError(ValueError):
    pass


class UsageError(Exception):
    pass


# ---------------------------------------------------------------- manifest


def _fields(cls) -> set[str]:
    return {f.name for f in dataclasses.fields(cls)}


def _strict(section: str, cfg, allowed: set[str]) -> dict:
    if cfg is None:
        return {}
    if not isinstance(cfg, dict):
        raise ManifestError(f"{section}: expected an object, got {type(cfg).__name__}")
    unknown = sorted(set(cfg) - allowed)
    if unknown:
        raise ManifestError(f"{section}: unknown key(s) {', '.join(unknown)}")
    return dict(cfg)


def _build(section: str, cls, cfg, **defaults):
    cfg = _strict(section, cfg, _fields(cls))
    try:
        return cls(**{**defaults, **cfg})
    except (TypeError, ValueError) as exc:
        raise ManifestError(f"{section}: {exc}") from None


def _train_cfg(section: str, cfg, factory) -> TrainConfig:
    cfg = _strict(section, cfg, _fields(TrainConfig))
    if isinstance(cfg.get("early_stopping"), dict):
        cfg["early_stopping"] = _build(f"{section}.early_stopping", EarlyStopping, cfg["early_stopping"])
    try:
        return factory(**cfg)
    except (TypeError, ValueError) as exc:
        raise ManifestError(f"{section}: {exc}") from None


def default_manifest() -> dict:
    text = resources.files("psmforce").joinpath("default_manifest.json").read_text(encoding="utf-8")
    return json.loads(text)


def load_manifest(path: str | None) -> dict:
    if path is None:
        return default_manifest()
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except OSError as exc:
        raise ManifestError(f"cannot read manifest {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ManifestError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from None
    if not isinstance(data, dict):
        raise ManifestError(f"{path}: top level must be an object")
    return data


def parse_manifest(m: dict) -> tuple[Experiment, str]:
    """Validate a manifest dict into an :class:`Experiment` and output directory."""
    m = _strict("manifest", m, MANIFEST_KEYS)
    kin = dict(_strict("kinematics", m.get("kinematics"), _fields(KinematicModel)))
    if "limits" in kin:
        kin["limits"] = tuple(tuple(x) for x in kin["limits"])
    kinematics = _build("kinematics", KinematicModel, kin)

    dist = _strict("disturbance", m.get("disturbance"), _fields(DisturbanceModel))
    for k in ("seal_insertion", "seal_roll"):
        if k in dist:
            dist[k] = _build(f"disturbance.{k}", BoucWen, dist[k])
    disturbance = _build("disturbance", DisturbanceModel, dist)

    sim = _strict("simulation", m.get("simulation"), {"rate", "velocity_cutoff"})
    scen = _strict("scenarios", m.get("scenarios"), {c.value for c in Condition})
    defaults = Experiment().data
    data = dict(defaults)
    script_keys = _fields(ScenarioScript) - {"condition", "duration"}
    for name, cfg in scen.items():
        cond = Condition(name)
        cfg = _strict(f"scenarios.{name}", cfg, {"duration", "trajectories"} | script_keys)
        script = {k: cfg.pop(k) for k in list(cfg) if k in script_keys}
        if "amplitude" in script and isinstance(script["amplitude"], list):
            script["amplitude"] = tuple(script["amplitude"])
        plan = {"duration": defaults[cond].duration, "trajectories": defaults[cond].trajectories, **cfg}
        data[cond] = _build(f"scenarios.{name}", DataPlan, plan, script=script)
        try:
            ScenarioScript(condition=cond, duration=1.0, **{"family": _family_for(cond), **script}).validate()
        except (TypeError, ValueError, ScenarioError) as exc:
            raise ManifestError(f"scenarios.{name}: {exc}") from None

    arch = _build("architecture", Architecture, m.get("architecture"))
    tr = _strict("training", m.get("training"), {"step1", "troc", "corr", "xfer"})
    training = {
        "step1": _train_cfg("training.step1", tr.get("step1"), step1_config),
        "troc": _train_cfg("training.troc", tr.get("troc", tr.get("step1")), step1_config),
        "corr": _train_cfg("training.corr", tr.get("corr"), corr_config),
        "xfer": _train_cfg("training.xfer", tr.get("xfer"), xfer_config),
    }
    mat = dict(_strict("experiment", m.get("experiment"), _fields(ExperimentMatrix)))
    try:
        if "methods" in mat:
            mat["methods"] = tuple(Method(x) for x in mat["methods"])
    except ValueError as exc:
        raise ManifestError(f"experiment.methods: {exc}") from None
    matrix = _build("experiment", ExperimentMatrix, mat)
    seed, threads = m.get("seed", 0), m.get("threads", 1)
    if not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
        raise ManifestError("seed: must be a nonnegative integer")
    if not isinstance(threads, int) or threads < 1:
        raise ManifestError("threads: must be a positive integer")
    try:
        exp = Experiment(kinematics=kinematics, disturbance=disturbance,
                         rate=float(sim.get("rate", 5.0)), velocity_cutoff=float(sim.get("velocity_cutoff", 20.0)),
                         data=data, grouping=JointGrouping(arch=arch), training=training,
                         matrix=matrix, seed=seed, threads=threads)
    except (TypeError, ValueError) as exc:
        raise ManifestError(str(exc)) from None
    if not exp.rate > 0:
        raise ManifestError("simulation.rate: must be positive")
    return exp, str(m.get("output_dir", "psmforce-out"))


def _family_for(cond: Condition) -> str:
    return "contact-press" if cond is Condition.TROCAR_CONTACT else "waypoints"


# --------------------------------------------------------------- commands


def _coverage(ds, model: KinematicModel) -> str:
    q = np.concatenate([tr.q for tr in ds.trajectories])
    span = model.upper - model.lower
    lines = ["joint  min        max        coverage"]
    for j in range(6):
        lo, hi = q[:, j].min(), q[:, j].max()
        lines.append(f"q{j + 1}     {lo:+.4f}   {hi:+.4f}   {100 * (hi - lo) / span[j]:5.1f} %")
    return "\n".join(lines)


def cmd_generate(args, exp: Experiment, out: Path) -> int:
    cond = Condition.parse(args.condition)
    if args.duration is not None and not args.duration > 0:
        raise UsageError("--duration must be positive")
    if args.trajectories is not None:
        if args.trajectories < 1:
            raise UsageError("--trajectories must be at least 1")
        exp = dataclasses.replace(exp, data={**exp.data, cond: dataclasses.replace(
            exp.data[cond], trajectories=args.trajectories)})
    bench = Workbench(exp, out)
    ds = bench.generate(cond, args.duration)
    print(f"wrote {bench.dataset_path(cond)}")
    print(f"condition {cond.value}: {len(ds.trajectories)} trajectories, {ds.n_samples} samples "
          f"({ds.n_samples / exp.rate:.1f} s at {exp.rate:g} Hz); split "
          + ", ".join(f"{n} {ds.split.size(n)}" for n in ("train", "validation", "test")))
    print(_coverage(ds, exp.kinematics))
    return EXIT_OK


def _length(args, method: Method, exp: Experiment) -> float | None:
    if not method.uses_trocar_data:
        if args.trocar_len is not None:
            raise UsageError(f"--trocar-len does not apply to {method.value}")
        return None
    return float(args.trocar_len) if args.trocar_len is not None else exp.matrix.nocontact_length


def cmd_train(args, exp: Experiment, out: Path) -> int:
    method = Method(args.method)
    length = _length(args, method, exp)
    bench = Workbench(exp, out, train_missing=args.train_missing)
    if method.step1 is not None and not bench.has_models(method.step1) and not args.train_missing:
        raise PrerequisiteError(f"{method.value} needs the {method.step1.value} models "
                                f"({bench.model_dir(method.step1)}); run `train --method {method.step1.value}` first")
    ms = bench.train(method, length)
    for r in ms.reports:
        note = f"  fallback: {r.fallback}" if r.fallback else ""
        print(f"{method.value} {r.group}: {r.epochs_run} epochs, {r.seconds:.2f} s, "
              f"val loss {r.val_loss[-1] if r.val_loss else r.initial_val_loss:.4g}{note}")
    print(f"models and report in {bench.model_dir(method, length)}")
    return EXIT_OK


def cmd_predict(args, exp: Experiment, out: Path) -> int:
    method = Method(args.method)
    length = _length(args, method, exp)
    bench = Workbench(exp, out, train_missing=args.train_missing)
    ms = bench.models(method, length)
    src = Path(args.input)
    if src.suffix == ".json":
        trs = read_dataset(src).trajectories
    else:
        tr = read_trajectory_csv(src)
        if tr is None:
            raise DatasetError(f"{src}: no samples")
        trs = (tr,)
    dest = Path(args.output) if args.output else out / "predictions" / f"{method.value}.csv"
    dest.parent.mkdir(parents=True, exist_ok=True)
    with open(dest, "w", encoding="utf-8") as fh:
        fh.write("trajectory,t," + ",".join(f"tau{j}" for j in range(1, 7))
                 + ",fx,fy,fz,tx,ty,tz,valid\n")
        for k, tr in enumerate(trs):
            p = predict(ms, tr)
            w, _, ok = wrench_series(exp.kinematics, tr.q, tr.tau, p.tau)
            valid = p.valid & ok
            for i in range(len(tr)):
                vals = [repr(float(x)) for x in (*p.tau[i], *w[i])]
                fh.write(f"{k},{tr.t[i]!r}," + ",".join(vals) + f",{int(valid[i])}\n")
    print(f"wrote {dest}")
    return EXIT_OK


def cmd_bench(args, exp: Experiment, out: Path) -> int:
    bench = Workbench(exp, out, train_missing=args.train_missing)
    report = run_all(bench, args.which)
    reports = out / "reports"
    tables = {"timing": ("timing",), "nocontact": ("nocontact",),
              "contact": ("contact", "fig8_series")}
    names = [t for w, ts in tables.items() if args.which in (w, "all") for t in ts]
    paths = emit_report(report, reports, "csv", names) + emit_report(report, reports, "markdown", names)
    write_environment(report, reports)
    for p in paths:
        print(f"wrote {p}")
    checks = ordering_checks(report)
    for c in checks:
        print(f"[{'PASS' if c.passed else 'FAIL'}] {c.name} ({c.detail})")
    failed_cells = [c for t in ("nocontact", "contact") for c in getattr(report, t) if c.status != "ok"]
    failed_cells += [r for r in report.timing if r.status != "ok"]
    for c in failed_cells:
        print(f"[FAILED CELL] {c.reason}")
    if args.assert_ and (any(not c.passed for c in checks) or failed_cells):
        return EXIT_ASSERT
    return EXIT_OK


# ------------------------------------------------------------------ parser


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="psmforce", description="Simulated trocar force-estimation experiments.")
    p.add_argument("--manifest", help="JSON manifest (default: the packaged desk-scale manifest)")
    p.add_argument("--output-dir", help=f"overrides the manifest output_dir and ${OUTPUT_ENV}")
    p.add_argument("--seed", type=int, help="overrides the manifest seed")
    p.add_argument("--threads", type=int, help="caps worker threads for group training")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("generate", help="simulate a dataset for one condition")
    g.add_argument("--condition", required=True, choices=[c.value for c in Condition])
    g.add_argument("--duration", type=float, help="total seconds (default from the manifest)")
    g.add_argument("--trajectories", type=int, help="number of trajectories the duration is split over")

    methods = [m.value for m in Method]
    t = sub.add_parser("train", help="train one method")
    t.add_argument("--method", required=True, choices=methods)
    t.add_argument("--trocar-len", type=float, help="seconds of trocar data (trocar-trained methods)")
    t.add_argument("--train-missing", action="store_true", help="also generate data and train prerequisites")

    r = sub.add_parser("predict", help="predict joint torques and wrenches for recorded telemetry")
    r.add_argument("--method", required=True, choices=methods)
    r.add_argument("--trocar-len", type=float)
    r.add_argument("--input", required=True, help="trajectory CSV or dataset manifest JSON")
    r.add_argument("--output", help="CSV path (default: <output>/predictions/<method>.csv)")
    r.add_argument("--train-missing", action="store_true")

    b = sub.add_parser("bench", help="run benchmark tables")
    b.add_argument("--which", default="all", choices=["timing", "nocontact", "contact", "all"])
    b.add_argument("--train-missing", action="store_true", help="generate data and train missing models")
    b.add_argument("--assert", dest="assert_", action="store_true",
                   help="exit 3 when an ordering check fails or a cell failed")
    return p


COMMANDS = {"generate": cmd_generate, "train": cmd_train, "predict": cmd_predict, "bench": cmd_bench}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        raw = load_manifest(args.manifest)
        if args.seed is not None:
            raw["seed"] = args.seed
        if args.threads is not None:
            raw["threads"] = args.threads
        exp, out = parse_manifest(raw)
        out = args.output_dir or os.environ.get(OUTPUT_ENV) or out
        return COMMANDS[args.command](args, exp, Path(out))
    except (ManifestError, UsageError) as exc:
        print(f"psmforce: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (PrerequisiteError, DatasetError, DivergenceError, ScenarioError, OSError, ValueError) as exc:
        print(f"psmforce: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
