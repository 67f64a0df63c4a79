"""Experiment runner.

Runs one problem under one mode for a list of seeds, writes a history CSV per
seed plus ``summary.json``.  The objective is either a registered benchmark
(``--problem``) or an external program (``--external-cmd``) that speaks a
line-delimited JSON protocol on stdin/stdout::

    -> {"x": [0.1, 2.5]}
    <- {"y": 0.73, "feasible": true}

``y`` may be null together with ``"feasible": false`` for points where the
objective is undefined.  One child process serves every evaluation of a run.

A JSON config file may hold any of the flag names (dashes or underscores)
plus ``xi0``, ``kappa``, ``delta``, ``epsilon``, ``eigen_mode``,
``lower``/``upper`` and ``timeout``; command-line flags take precedence.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import re
import selectors
import shlex
import subprocess
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from .adaptive_control import ControlParams
from .benchmarks import PROBLEMS, BlackBox, get_problem, initial_window, metrics
from .expansion import EigenMode
from .optimizer import EvaluationError, HistoryRow, Mode, OptimizerConfig, RunRecord, run

log = logging.getLogger(__name__)

DEFAULT_TIMEOUT = 3600.0
SUMMARY_NAME = "summary.json"


class ProtocolError(EvaluationError):
    """The external black box broke the line protocol."""


class ExternalBlackBox:
    """Evaluates points by talking to a long-lived child process."""

    def __init__(self, command, dim: int, timeout: float = DEFAULT_TIMEOUT):
        self.command = shlex.split(command) if isinstance(command, str) else list(command)
        self.dim = dim
        self.timeout = timeout
        self.proc: Optional[subprocess.Popen] = None
        self._selector: Optional[selectors.BaseSelector] = None

    def start(self):
        if self.proc is None:
            self.proc = subprocess.Popen(self.command, stdin=subprocess.PIPE, stdout=subprocess.PIPE,
                                         text=True, bufsize=1)
            self._selector = selectors.DefaultSelector()
            self._selector.register(self.proc.stdout, selectors.EVENT_READ)
        return self

    def close(self):
        if self.proc is None:
            return
        try:
            self.proc.stdin.close()
        except OSError:
            pass
        try:
            self.proc.wait(timeout=5)
        except subprocess.TimeoutExpired:
            self.proc.kill()
            self.proc.wait()
        self._selector.close()
        self.proc = None

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.close()

    def __call__(self, x):
        self.start()
        try:
            self.proc.stdin.write(json.dumps({"x": [float(v) for v in x]}) + "\n")
            self.proc.stdin.flush()
        except (BrokenPipeError, OSError) as exc:
            raise ProtocolError(f"child process is gone ({exc})") from exc
        if not self._selector.select(self.timeout):
            raise ProtocolError(f"no reply within {self.timeout:g} s")
        line = self.proc.stdout.readline()
        if not line:
            raise ProtocolError(f"child exited (return code {self.proc.poll()})")
        return parse_reply(line)


def parse_reply(line: str):
    """Decode one reply line into (y, feasible); y is None when undefined."""
    try:
        msg = json.loads(line)
    except json.JSONDecodeError as exc:
        raise ProtocolError(f"malformed reply {line.strip()[:80]!r}") from exc
    if not isinstance(msg, dict) or "y" not in msg:
        raise ProtocolError(f"reply lacks 'y': {line.strip()[:80]!r}")
    y = msg["y"]
    feasible = msg.get("feasible", True)
    if not isinstance(feasible, bool):
        raise ProtocolError("'feasible' must be a boolean")
    if y is None:
        if feasible:
            raise ProtocolError("null 'y' requires \"feasible\": false")
        return None, False
    if isinstance(y, bool) or not isinstance(y, (int, float)):
        raise ProtocolError("'y' must be a number or null")
    return float(y), feasible


@dataclass
class ExperimentSpec:
    problem: Optional[str] = None
    external_cmd: Optional[str] = None
    mode: str = "aebo"
    seeds: List[int] = field(default_factory=lambda: [0])
    out: str = "results"
    budget: Optional[int] = None
    n_init: Optional[int] = None
    noise_std: float = 0.0
    dim: Optional[int] = None
    sense: str = "minimize"
    lower: Optional[List[float]] = None
    upper: Optional[List[float]] = None
    timeout: float = DEFAULT_TIMEOUT
    workers: int = 1
    xi0: float = 0.1
    kappa: float = 0.1
    delta: float = 0.01
    epsilon: float = 0.01
    eigen_mode: str = "lambda_min"

    def __post_init__(self):
        if (self.problem is None) == (self.external_cmd is None):
            raise ValueError("give exactly one of problem or external_cmd")
        if not self.seeds:
            raise ValueError("at least one seed is required")
        Mode(self.mode)
        if self.external_cmd is not None and (self.lower is None or self.upper is None):
            raise ValueError("an external black box needs lower and upper initial bounds")

    @property
    def label(self) -> str:
        return self.problem if self.problem is not None else "external"


def history_columns(dim: int) -> List[str]:
    return (["iteration"] + [f"x_{i}" for i in range(1, dim + 1)]
            + ["y", "feasible", "best", "tau"]
            + [f"box_lo_{i}" for i in range(1, dim + 1)]
            + [f"box_hi_{i}" for i in range(1, dim + 1)]
            + ["fallback", "xi"])


def _f(v: float) -> str:
    return format(float(v), ".17g")


def write_history(path, record: RunRecord, dim: int):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(history_columns(dim))
        for r in record.rows:
            w.writerow([r.iteration, *map(_f, r.x), _f(r.y), int(r.feasible), _f(r.best), _f(r.tau),
                        *map(_f, r.box_lower), *map(_f, r.box_upper), int(r.fallback), _f(r.xi)])


def read_history(path, sense: str = "minimize") -> RunRecord:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        dim = sum(1 for h in header if h.startswith("x_"))
        rows = []
        for line in reader:
            v = iter(line)
            it = int(next(v))
            x = np.array([float(next(v)) for _ in range(dim)])
            y, feas, best, tau = float(next(v)), next(v) == "1", float(next(v)), float(next(v))
            lo = np.array([float(next(v)) for _ in range(dim)])
            hi = np.array([float(next(v)) for _ in range(dim)])
            fallback, xi = next(v) == "1", float(next(v))
            rows.append(HistoryRow(it, x, y, feas, best, tau, xi, lo, hi, fallback))
    record = RunRecord(rows, sense)
    if rows and np.isfinite(rows[-1].best):
        final = rows[-1].best
        first = next(r for r in rows if r.best == final)
        record.x_best, record.f_best = first.x.copy(), first.best
    return record


def _config_for(spec: ExperimentSpec, seed: int, lower, upper) -> OptimizerConfig:
    control = ControlParams(xi0=spec.xi0, kappa=spec.kappa, delta=spec.delta)
    return OptimizerConfig(lower, upper, n_init=spec.n_init, budget=spec.budget, control=control,
                           epsilon=spec.epsilon, mode=Mode(spec.mode), sense=spec.sense, seed=seed,
                           noisy=spec.noise_std > 0, eigen_mode=EigenMode(spec.eigen_mode))


def run_seed(spec: ExperimentSpec, seed: int) -> dict:
    """One replication; writes its history file and returns its summary entry."""
    started = time.perf_counter()
    problem = None
    if spec.problem is not None:
        problem = get_problem(spec.problem, spec.dim)
        if spec.lower is not None:
            lower, upper = np.asarray(spec.lower, float), np.asarray(spec.upper, float)
        else:
            lower, upper, _ = initial_window(problem)
        cfg = _config_for(spec, seed, lower, upper)
        bb = problem.as_blackbox(spec.noise_std, np.random.default_rng([seed, 7919]))
        record = run(bb, cfg)
    else:
        lower, upper = np.asarray(spec.lower, float), np.asarray(spec.upper, float)
        cfg = _config_for(spec, seed, lower, upper)
        with ExternalBlackBox(spec.external_cmd, len(lower), spec.timeout) as bb:
            record = run(bb, cfg)
    elapsed = time.perf_counter() - started

    name = f"history_seed{seed}.csv"
    write_history(os.path.join(spec.out, name), record, cfg.dim)
    entry = {"seed": seed, "status": "failed" if record.failed else "ok", "error": record.error,
             "history": name, "best": _num(record.f_best),
             "x_best": None if record.x_best is None else [float(v) for v in record.x_best],
             "gap": None, "distance_to_center": None, "wall_time": elapsed}
    if record.x_best is not None:
        center = 0.5 * (lower + upper)
        if problem is not None:
            m = metrics(record, problem, center)
            entry["gap"], entry["distance_to_center"] = m.optimality_gap, m.distance_to_center
        else:
            entry["distance_to_center"] = float(np.linalg.norm(record.x_best - center))
    return entry


def _num(v):
    return float(v) if v is not None and np.isfinite(v) else None


def summarize(spec: ExperimentSpec, runs: Sequence[dict]) -> dict:
    done = [r for r in runs if r["status"] == "ok" and r["best"] is not None]

    def stat(key, fn):
        vals = [r[key] for r in done if r[key] is not None]
        return fn(np.array(vals)) if vals else None

    return {
        "problem": spec.label,
        "mode": spec.mode,
        "n_runs": len(runs),
        "n_completed": len(done),
        "best_mean": stat("best", lambda a: float(a.mean())),
        "best_std": stat("best", lambda a: float(a.std(ddof=1)) if len(a) > 1 else 0.0),
        "gap_mean": stat("gap", lambda a: float(a.mean())),
        "distance_to_center_mean": stat("distance_to_center", lambda a: float(a.mean())),
        "wall_time_mean": stat("wall_time", lambda a: float(a.mean())),
    }


def run_experiment(spec: ExperimentSpec) -> dict:
    """Run every seed, then write ``summary.json``; returns the summary dict."""
    if spec.problem is not None:
        get_problem(spec.problem, spec.dim)
    os.makedirs(spec.out, exist_ok=True)
    seeds = list(spec.seeds)
    if spec.workers > 1 and len(seeds) > 1:
        with ProcessPoolExecutor(max_workers=spec.workers) as pool:
            runs = list(pool.map(run_seed, [spec] * len(seeds), seeds))
    else:
        runs = [run_seed(spec, s) for s in seeds]
    result = {"spec": spec.__dict__, "summary": summarize(spec, runs), "runs": runs}
    with open(os.path.join(spec.out, SUMMARY_NAME), "w") as fh:
        json.dump(result, fh, indent=2)
    return result


def _floats(text):
    if isinstance(text, (list, tuple)):
        return [float(v) for v in text]
    return [float(v) for v in str(text).split(",") if v.strip()]


def _ints(text):
    """Seed list from a list, "1,2,3", "0-9" or a mix such as "0-4,10"."""
    if isinstance(text, (list, tuple)):
        return [int(v) for v in text]
    out = []
    for part in str(text).split(","):
        part = part.strip()
        m = re.fullmatch(r"(\d+)-(\d+)", part)
        if m:
            out.extend(range(int(m.group(1)), int(m.group(2)) + 1))
        elif part:
            out.append(int(part))
    return out


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="aebo", description=__doc__.split("\n\n")[0],
                                formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--config", help="JSON file with experiment settings")
    p.add_argument("--problem", help=f"benchmark name ({', '.join(PROBLEMS)})")
    p.add_argument("--external-cmd", help="command of an external black box")
    p.add_argument("--mode", choices=[m.value for m in Mode])
    p.add_argument("--budget", type=int)
    p.add_argument("--n-init", type=int)
    p.add_argument("--seeds", help="comma list and/or ranges, e.g. 0-9 or 1,2,3")
    p.add_argument("--noise-std", type=float)
    p.add_argument("--dim", type=int)
    p.add_argument("--out")
    p.add_argument("--sense", choices=["minimize", "maximize"])
    p.add_argument("--lower", help="comma-separated initial lower bounds")
    p.add_argument("--upper", help="comma-separated initial upper bounds")
    p.add_argument("--timeout", type=float, help="seconds to wait for each external evaluation")
    p.add_argument("--workers", type=int)
    p.add_argument("--list", action="store_true", help="list benchmark problems and exit")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def spec_from_args(args) -> ExperimentSpec:
    settings = {}
    if args.config:
        with open(args.config) as fh:
            settings = {k.replace("-", "_"): v for k, v in json.load(fh).items()}
    for key in ("problem", "external_cmd", "mode", "budget", "n_init", "noise_std", "dim",
                "out", "sense", "timeout", "workers", "seeds", "lower", "upper"):
        value = getattr(args, key)
        if value is not None:
            settings[key] = value
    if "seeds" in settings:
        settings["seeds"] = _ints(settings["seeds"])
    for key in ("lower", "upper"):
        if settings.get(key) is not None:
            settings[key] = _floats(settings[key])
    known = set(ExperimentSpec.__dataclass_fields__)
    unknown = set(settings) - known
    if unknown:
        raise ValueError(f"unknown settings: {', '.join(sorted(unknown))}")
    return ExperimentSpec(**settings)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.list:
        for name in PROBLEMS:
            prob = get_problem(name)
            print(f"{name:24s} d={prob.dim}  f*={prob.y_opt:.6g}")
        return 0
    try:
        spec = spec_from_args(args)
        result = run_experiment(spec)
    except (KeyError, ValueError) as exc:
        print(f"aebo: error: {exc.args[0] if exc.args else exc}", file=sys.stderr)
        return 2
    s = result["summary"]
    best = "n/a" if s["best_mean"] is None else f"{s['best_mean']:.4g} +/- {s['best_std']:.2g}"
    print(f"{s['problem']} [{s['mode']}] {s['n_completed']}/{s['n_runs']} runs, best {best}")
    print(f"wrote {os.path.join(spec.out, SUMMARY_NAME)}")
    return 0 if s["n_completed"] == s["n_runs"] else 1


if __name__ == "__main__":
    sys.exit(main())
