"""Command line runner: ``sampleability run CONFIG`` and ``sampleability suite``.

Exit codes: 0 all checks pass, 1 a check failed, 2 configuration error,
3 numerical error raised by a module.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from .experiments import COVERAGE, EXPERIMENTS, ConfigError, validate_params
from .report import ExperimentReport, jsonable

log = logging.getLogger("sampleability")

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3


@dataclass
class ExperimentConfig:
    experiment: str
    parameters: dict = field(default_factory=dict)
    seed: int = 0
    output: str | None = None

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
        extra = set(d) - {"experiment", "parameters", "seed", "output", "defaults"}
        if extra:
            raise ConfigError(f"unknown config keys: {', '.join(sorted(extra))}")
        if "experiment" not in d:
            raise ConfigError("config needs an 'experiment' id")
        exp = d["experiment"]
        if exp not in EXPERIMENTS:
            raise ConfigError(f"unknown experiment {exp!r}; valid ids: {', '.join(EXPERIMENTS)}")
        params = dict(d.get("defaults") or {})
        params.update(d.get("parameters") or {})
        seed = d.get("seed", 0)
        if not isinstance(seed, int) or isinstance(seed, bool):
            raise ConfigError("seed must be an integer")
        return cls(exp, params, seed, d.get("output"))

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            d = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return cls.from_dict(d)


def run(config: ExperimentConfig, outdir=None) -> ExperimentReport:
    """Validate the parameters, run the experiment and write its outputs."""
    exp = EXPERIMENTS.get(config.experiment)
    if exp is None:
        raise ConfigError(f"unknown experiment {config.experiment!r}; valid ids: {', '.join(EXPERIMENTS)}")
    params = validate_params(exp, config.parameters)
    rep = exp.fn(params, config.seed)
    rep.inputs = {"experiment": exp.id, "seed": config.seed, "parameters": params}
    out = outdir or config.output
    if out is not None:
        rep.write(out)
    return rep


def _status(rep: ExperimentReport) -> int:
    return EXIT_OK if rep.passed else EXIT_FAIL


def suite(tag: str = "all", outdir=None, workers: int = 1, seed: int = 0) -> tuple[list, int]:
    """Run every experiment carrying ``tag`` (or all); returns (rows, exit code).

    A member failure is recorded in its row and the suite continues.
    """
    chosen = [e for e in EXPERIMENTS.values() if tag == "all" or tag in e.tags or tag == e.id]

    def one(e):
        sub = Path(outdir) / e.id if outdir else None
        try:
            rep = run(ExperimentConfig(e.id, {}, seed), sub)
            return e, rep, None
        except Exception as exc:  # recorded, suite continues
            log.exception("experiment %s raised", e.id)
            return e, None, f"{type(exc).__name__}: {exc}"

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        results = list(pool.map(one, chosen))
    rows = []
    code = EXIT_OK
    for e, rep, err in results:
        for claim in e.claims:
            if rep is not None:
                status = "pass" if rep.passed else "fail"
                n_fail = len(rep.failures())
                wall = rep.wall_time
            else:
                status, n_fail, wall = "error", -1, 0.0
            rows.append([claim, e.id, status, n_fail, round(wall, 3), err or ""])
        if rep is None:
            code = max(code, EXIT_NUMERIC)
        elif not rep.passed:
            code = max(code, EXIT_FAIL) if code != EXIT_NUMERIC else code
    if outdir:
        Path(outdir).mkdir(parents=True, exist_ok=True)
        with open(Path(outdir) / "suite.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["claim", "experiment", "status", "failed_checks", "wall_time", "error"])
            w.writerows(rows)
        (Path(outdir) / "suite.json").write_text(json.dumps(jsonable({"tag": tag, "rows": rows,
                                                                      "coverage": COVERAGE}), indent=2))
    return rows, code


def _print_report(rep: ExperimentReport) -> None:
    for c in rep.checks:
        print(f"{'PASS' if c.passed else 'FAIL'}  {c.name}: {c.value:.6g} {c.relation} {c.bound:.6g}"
              f" (tol {c.tol:.2g})  {c.claim}")
    print(f"{rep.experiment}: {'all checks pass' if rep.passed else f'{len(rep.failures())} failed'}"
          f" in {rep.wall_time:.1f}s")


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="sampleability", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="cmd", required=True)
    p_run = sub.add_parser("run", help="run one experiment from a JSON config")
    p_run.add_argument("config", help="path to a JSON config, or an experiment id for its defaults")
    p_run.add_argument("--out", help="output directory (overrides the config)")
    p_suite = sub.add_parser("suite", help="run all experiments matching a tag")
    p_suite.add_argument("tag", nargs="?", default="all")
    p_suite.add_argument("--tag", dest="tag_opt")
    p_suite.add_argument("--out")
    p_suite.add_argument("--workers", type=int, default=1)
    p_suite.add_argument("--seed", type=int, default=0)
    sub.add_parser("list", help="list experiment ids and tags")
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")

    if args.cmd == "list":
        for e in EXPERIMENTS.values():
            print(f"{e.id:20s} tags={','.join(e.tags)}  covers: {'; '.join(e.claims)}")
        return EXIT_OK
    if args.cmd == "run":
        try:
            if args.config in EXPERIMENTS:
                cfg = ExperimentConfig(args.config)
            else:
                cfg = ExperimentConfig.load(args.config)
            rep = run(cfg, args.out)
        except ConfigError as exc:
            print(f"configuration error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        except (ArithmeticError, RuntimeError, ValueError, np_error()) as exc:
            print(f"numerical error: {type(exc).__name__}: {exc}", file=sys.stderr)
            return EXIT_NUMERIC
        _print_report(rep)
        return _status(rep)
    tag = args.tag_opt or args.tag
    rows, code = suite(tag, args.out, args.workers, args.seed)
    if not rows:
        print(f"no experiments match tag {tag!r}")
        return EXIT_OK
    w = max(len(r[0]) for r in rows)
    for claim, eid, status, n_fail, wall, err in rows:
        print(f"{claim:<{w}}  {eid:<20s} {status:<5s} {wall:8.1f}s {err}")
    return code


def np_error():
    import numpy as np

    return np.linalg.LinAlgError


if __name__ == "__main__":
    sys.exit(main())
