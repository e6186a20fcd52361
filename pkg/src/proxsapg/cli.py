"""Command-line experiment runner.

Configs are flat ``key = value`` files; model and diagnostic options carry a
``model.`` or ``diagnose.`` prefix.  Example::

    model = gaussian_conjugate
    model.y = 2.0
    model.sigma2 = 1.0
    kernel = MYULA
    schedule.delta0 = 0.3
    schedule.gamma0 = 0.05
    iterations = 200
    seed = 1

Exit codes: 0 success, 1 runtime failure, 2 invalid config, 3 invalid schedule.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import diagnostics, oracle
from .errors import InvalidArgument, ProxSapgError, ScheduleInvalid, UnsupportedConfiguration
from .model import (ProblemInstance, builtin_gaussian_conjugate, builtin_group_lasso,
                    builtin_laplace_scalar)
from .samplers import KernelConfig, check_admissible, step_bound
from .sapg import FIXED, INCREASING, Schedule, run, validate_schedule

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG, EXIT_SCHEDULE = 0, 1, 2, 3


class ConfigError(InvalidArgument):
    """Malformed or inconsistent experiment config."""


def _floats(text: str) -> tuple:
    return tuple(float(v) for v in text.replace(",", " ").split())


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, tuple):
        return ", ".join(_fmt(x) for x in v)
    return str(v)


@dataclass
class ExperimentConfig:
    model: str = "gaussian_conjugate"
    model_params: dict = field(default_factory=dict)
    estimator: str = "auto"
    lower: Optional[tuple] = None
    upper: Optional[tuple] = None
    kernel: str = "MYULA"
    kappa: float = 1.0
    delta0: float = 0.1
    gamma0: float = 0.01
    m0: int = 1
    a: float = 0.0
    b: float = 0.0
    c: float = 0.0
    batch_mode: str = INCREASING
    iterations: int = 100
    seed: int = 0
    warmup: int = 0
    theta0: Optional[tuple] = None
    out: str = "out"
    diagnose: dict = field(default_factory=dict)

    _SCHEDULE_KEYS = ("delta0", "gamma0", "m0", "a", "b", "c", "batch_mode")

    def to_text(self) -> str:
        lines = [f"model = {self.model}"]
        lines += [f"model.{k} = {v}" for k, v in sorted(self.model_params.items())]
        lines.append(f"estimator = {self.estimator}")
        if self.lower is not None:
            lines.append(f"domain.lower = {_fmt(self.lower)}")
        if self.upper is not None:
            lines.append(f"domain.upper = {_fmt(self.upper)}")
        lines += [f"kernel = {self.kernel}", f"kappa = {_fmt(self.kappa)}"]
        lines += [f"schedule.{k} = {_fmt(getattr(self, k))}" for k in self._SCHEDULE_KEYS]
        lines += [f"iterations = {self.iterations}", f"seed = {self.seed}",
                  f"warmup = {self.warmup}"]
        if self.theta0 is not None:
            lines.append(f"theta0 = {_fmt(self.theta0)}")
        lines.append(f"out = {self.out}")
        lines += [f"diagnose.{k} = {v}" for k, v in sorted(self.diagnose.items())]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "ExperimentConfig":
        cfg = cls()
        seen = set()
        for num, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {num}: expected 'key = value'")
            key, value = (s.strip() for s in line.split("=", 1))
            if key in seen:
                raise ConfigError(f"line {num}: duplicate key {key!r}")
            seen.add(key)
            try:
                cfg._set(key, value)
            except ValueError as exc:
                raise ConfigError(f"line {num}: bad value for {key!r}: {exc}") from None
        return cfg

    def _set(self, key: str, value: str) -> None:
        if key.startswith("model."):
            self.model_params[key[6:]] = value
        elif key.startswith("diagnose."):
            self.diagnose[key[9:]] = value
        elif key.startswith("schedule."):
            name = key[9:]
            if name not in self._SCHEDULE_KEYS:
                raise ConfigError(f"unknown schedule key {key!r}")
            if name == "batch_mode":
                setattr(self, name, value.lower())
            else:
                setattr(self, name, int(value) if name == "m0" else float(value))
        elif key in ("domain.lower", "domain.upper"):
            setattr(self, key[7:], _floats(value))
        elif key in ("model", "estimator", "kernel", "out"):
            setattr(self, key, value)
        elif key in ("kappa",):
            self.kappa = float(value)
        elif key in ("iterations", "seed", "warmup"):
            setattr(self, key, int(value))
        elif key == "theta0":
            self.theta0 = _floats(value)
        else:
            raise ConfigError(f"unknown key {key!r}")

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from None
        return cls.from_text(text)

    def schedule(self) -> Schedule:
        return Schedule(self.delta0, self.gamma0, self.m0, self.a, self.b, self.c, self.batch_mode)

    def param(self, name: str, default=None, convert=float):
        if name not in self.model_params:
            if default is None:
                raise ConfigError(f"missing model parameter model.{name}")
            return default
        try:
            return convert(self.model_params[name])
        except ValueError:
            raise ConfigError(f"bad value for model.{name}") from None

    def diag(self, name: str, default, convert=float):
        if name not in self.diagnose:
            return default
        try:
            return convert(self.diagnose[name])
        except ValueError:
            raise ConfigError(f"bad value for diagnose.{name}") from None


def _bounds(cfg: ExperimentConfig, lo: float, hi: float):
    lower = cfg.lower[0] if cfg.lower else lo
    upper = cfg.upper[0] if cfg.upper else hi
    return float(lower), float(upper)


def build_instance(cfg: ExperimentConfig) -> ProblemInstance:
    est = cfg.estimator.lower()
    if cfg.model == "gaussian_conjugate":
        if est not in ("auto", "homogeneous"):
            raise ConfigError("gaussian_conjugate supports the homogeneous estimator only")
        lo, hi = _bounds(cfg, 0.05, 10.0)
        return builtin_gaussian_conjugate(cfg.param("y"), cfg.param("sigma2"), lo, hi,
                                          cfg.param("split", "smooth", str))
    if cfg.model == "laplace_scalar":
        if est not in ("auto", "homogeneous", "inhomogeneous"):
            raise ConfigError("laplace_scalar supports homogeneous or inhomogeneous estimators")
        lo, hi = _bounds(cfg, 0.1, 5.0)
        return builtin_laplace_scalar(cfg.param("y"), cfg.param("sigma2"), lo, hi,
                                      est == "inhomogeneous")
    if cfg.model == "group_lasso":
        if est not in ("auto", "separable"):
            raise ConfigError("group_lasso supports the separable estimator only")
        rows = cfg.param("A", convert=lambda s: [_floats(r) for r in s.split(";")])
        blocks = cfg.param("blocks", convert=lambda s: [[int(v) for v in _floats(b)]
                                                        for b in s.split(";")])
        y = cfg.param("y", convert=_floats)
        lower = cfg.lower if cfg.lower else 0.1
        upper = cfg.upper if cfg.upper else 5.0
        return builtin_group_lasso(np.array(rows), np.array(y), cfg.param("sigma2"), blocks,
                                   lower, upper)
    raise ConfigError(f"unknown model {cfg.model!r}")


def _prepare(cfg: ExperimentConfig, allow_invalid: bool):
    """Build and validate everything a run needs; raises ConfigError or ScheduleInvalid."""
    try:
        instance = build_instance(cfg)
        schedule = cfg.schedule()
        kcfg = KernelConfig(cfg.kernel, schedule.gamma0, cfg.kappa)
        check_admissible(instance.model, kcfg)
    except ConfigError:
        raise
    except (InvalidArgument, UnsupportedConfiguration) as exc:
        raise ConfigError(str(exc)) from None
    if cfg.iterations < 1:
        raise ConfigError("iterations must be positive")
    report = validate_schedule(schedule)
    if not report.valid and not allow_invalid:
        failed = "; ".join(f"{c.name} (margin {c.margin:+.6g})" for c in report.failures)
        raise ScheduleInvalid(f"schedule violates {failed}")
    return instance, schedule, kcfg


def _write_csv(path: Path, header, rows) -> None:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) if isinstance(v, float) else v for v in row])


def write_trace(path: Path, trace) -> None:
    k = trace.theta.shape[1]
    header = (["n"] + [f"theta_{i}" for i in range(k)] + [f"theta_bar_{i}" for i in range(k)]
              + ["gamma", "delta", "m"] + [f"grad_est_{i}" for i in range(k)])
    rows = ([int(trace.n[j])] + [float(v) for v in trace.theta[j]]
            + [float(v) for v in trace.theta_bar[j]]
            + [float(trace.gamma[j]), float(trace.delta[j]), int(trace.batch[j])]
            + [float(v) for v in trace.grad[j]] for j in range(len(trace)))
    _write_csv(path, header, rows)


def read_trace_theta_bar(path) -> np.ndarray:
    """Final averaged iterate recomputed from the ``theta_*`` and ``delta`` columns."""
    with Path(path).open() as fh:
        rows = list(csv.DictReader(fh))
    keys = sorted(k for k in rows[0] if k.startswith("theta_") and not k.startswith("theta_bar"))
    theta = np.array([[float(r[k]) for k in keys] for r in rows])
    delta = np.array([float(r["delta"]) for r in rows])
    return (delta[:, None] * theta).sum(axis=0) / delta.sum()


def _out_dir(cfg: ExperimentConfig, out: Optional[str]) -> Path:
    path = Path(out or cfg.out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def cmd_run(config_path, seed: Optional[int] = None, out: Optional[str] = None,
            allow_constant_step: bool = False) -> int:
    try:
        cfg = ExperimentConfig.load(config_path)
        if seed is not None:
            cfg.seed = seed
        if out is not None:
            cfg.out = out
        instance, schedule, _ = _prepare(cfg, allow_constant_step)
    except (ConfigError, ScheduleInvalid) as exc:
        print(f"config invalid: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    path = _out_dir(cfg, None)
    (path / "config.txt").write_text(cfg.to_text())
    try:
        theta_bar, trace = run(instance, schedule, cfg.kappa, cfg.iterations, cfg.seed,
                               kind=cfg.kernel, theta0=cfg.theta0,
                               allow_invalid_schedule=allow_constant_step, warmup=cfg.warmup)
    except ProxSapgError as exc:
        print(f"run failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    write_trace(path / "trace.csv", trace)
    _write_csv(path / "timing.csv", ["n", "elapsed_s"],
               ([int(n), float(t)] for n, t in zip(trace.n, trace.elapsed)))
    summary = [f"iterations = {len(trace)}",
               f"theta_bar = {_fmt(tuple(float(v) for v in theta_bar))}",
               f"kernel_steps = {int(trace.batch.sum())}"]
    (path / "summary.txt").write_text("\n".join(summary) + "\n")
    print(summary[1])
    return EXIT_OK


def cmd_validate_schedule(a: float, b: float, c: float, mode: str) -> int:
    try:
        # only the exponents matter for the summability conditions
        report = validate_schedule(Schedule(1.0, 1.0, 1, a, b, c, mode))
    except InvalidArgument as exc:
        print(f"config invalid: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    for line in report.lines():
        print(line)
    print("valid" if report.valid else "invalid")
    return EXIT_OK if report.valid else EXIT_SCHEDULE


def _theta(cfg: ExperimentConfig, instance: ProblemInstance) -> np.ndarray:
    default = instance.domain.initial_point()
    return np.atleast_1d(np.asarray(cfg.diag("theta", tuple(default), _floats), dtype=float))


def _diag_drift(cfg, instance, kcfg, path) -> bool:
    model = instance.model
    theta = _theta(cfg, instance)
    gbar = step_bound(model, kcfg.kind, kcfg.kappa)
    fractions = cfg.diag("gamma_fractions", (0.9, 0.5, 0.1), _floats)
    lo, hi = cfg.diag("grid_min", -10.0), cfg.diag("grid_max", 10.0)
    pts = np.linspace(lo, hi, int(cfg.diag("grid_points", 101)))
    rows, total = [], 0
    for frac in fractions:
        k = dataclasses.replace(kcfg, gamma=frac * gbar)
        rep = diagnostics.drift_grid(model, theta, k, pts)
        total += rep.violations
        rows += [[k.gamma, float(p[0]), float(l), float(r), float(r - l), int(r < l)]
                 for p, l, r in zip(rep.points, rep.lhs, rep.rhs)]
    _write_csv(path, ["gamma", "x", "lhs", "rhs", "margin", "violation"], rows)
    return total == 0


def _diag_coupling(cfg, instance, kcfg, path) -> bool:
    model = instance.model
    theta = _theta(cfg, instance)
    d = model.dim
    x0 = np.broadcast_to(np.asarray(cfg.diag("x0", (5.0,), _floats)), (d,))
    y0 = np.broadcast_to(np.asarray(cfg.diag("y0", (-5.0,), _floats)), (d,))
    n = int(cfg.diag("steps", 1000))
    fit = diagnostics.coupling_contraction(model, theta, kcfg, x0, y0, n, cfg.seed)
    _write_csv(path, ["k", "distance"], ([k, float(v)] for k, v in enumerate(fit.distances)))
    ok = fit.max_step_ratio <= 1.0 + 1e-9
    if model.strong_convexity is not None:
        ok = ok and fit.max_step_ratio <= diagnostics.contraction_bound(model, kcfg.gamma) + 1e-9
    print(f"fitted factor = {fit.factor!r}, max step ratio = {fit.max_step_ratio!r}")
    return ok


def _diag_bias(cfg, instance, kcfg, path) -> bool:
    theta = _theta(cfg, instance)
    gammas = cfg.diag("gammas", (kcfg.gamma,), _floats)
    budget = int(cfg.diag("budget", 100_000))
    entries = diagnostics.bias_sweep(instance, theta, kcfg, gammas, budget=budget, seed=cfg.seed)
    rows = []
    for i, e in enumerate(entries):
        ratio = diagnostics.bias_ratio(entries[i + 1], e) if i + 1 < len(entries) else None
        rows.append([e.gamma, e.estimate, e.reference, e.bias, e.stderr,
                     "indistinguishable" if e.indistinguishable else "resolved",
                     "" if ratio is None else float(ratio)])
    _write_csv(path, ["gamma", "estimate", "reference", "bias", "stderr", "status",
                      "ratio_to_next"], rows)
    return True


def _diag_plateau(cfg, instance, kcfg, path) -> bool:
    schedule = cfg.schedule()
    g0 = schedule.gamma0
    gammas = cfg.diag("gamma0_list", (g0, g0 / 4.0), _floats)
    seeds = [int(s) for s in cfg.diag("seeds", (cfg.seed,), _floats)]
    f = oracle.objective_oracle(instance)
    entries = diagnostics.plateau_study(instance, gammas, schedule, cfg.iterations, seeds, f,
                                        kind=kcfg.kind, kappa=kcfg.kappa, warmup=cfg.warmup)
    rows = [[e.gamma0, s, g, e.median_gap] for e in entries for s, g in zip(seeds, e.gaps)]
    _write_csv(path, ["gamma0", "seed", "gap", "median_gap"], rows)
    return all(g >= 0.0 for e in entries for g in e.gaps)


_DIAGNOSTICS = {"drift": _diag_drift, "coupling": _diag_coupling, "bias": _diag_bias,
                "plateau": _diag_plateau}


def cmd_diagnose(config_path, which: str, seed: Optional[int] = None,
                 out: Optional[str] = None) -> int:
    if which not in _DIAGNOSTICS:
        print(f"config invalid: unknown diagnostic {which!r}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        cfg = ExperimentConfig.load(config_path)
        if seed is not None:
            cfg.seed = seed
        if out is not None:
            cfg.out = out
        instance = build_instance(cfg)
        kcfg = KernelConfig(cfg.kernel, cfg.gamma0, cfg.kappa)
        check_admissible(instance.model, kcfg)
    except (InvalidArgument, UnsupportedConfiguration) as exc:
        print(f"config invalid: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    path = _out_dir(cfg, None)
    (path / "config.txt").write_text(cfg.to_text())
    try:
        ok = _DIAGNOSTICS[which](cfg, instance, kcfg, path / f"diagnose_{which}.csv")
    except ProxSapgError as exc:
        print(f"diagnostic failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    print("hard invariants hold" if ok else "hard invariant violated")
    return EXIT_OK if ok else EXIT_RUNTIME


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="proxsapg", description=__doc__.split("\n")[0])
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run the SAPG driver and write a trace")
    r.add_argument("--config", required=True)
    r.add_argument("--seed", type=int)
    r.add_argument("--out")
    r.add_argument("--allow-constant-step", action="store_true",
                   help="run schedules that fail the summability conditions")
    v = sub.add_parser("validate-schedule", help="check schedule exponents")
    v.add_argument("a", type=float)
    v.add_argument("b", type=float)
    v.add_argument("c", type=float)
    v.add_argument("mode", choices=[INCREASING, FIXED])
    d = sub.add_parser("diagnose", help="write a diagnostics CSV")
    d.add_argument("--config", required=True)
    d.add_argument("--which", required=True, choices=sorted(_DIAGNOSTICS))
    d.add_argument("--seed", type=int)
    d.add_argument("--out")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "run":
        return cmd_run(args.config, args.seed, args.out, args.allow_constant_step)
    if args.command == "validate-schedule":
        return cmd_validate_schedule(args.a, args.b, args.c, args.mode)
    return cmd_diagnose(args.config, args.which, args.seed, args.out)


if __name__ == "__main__":
    sys.exit(main())
