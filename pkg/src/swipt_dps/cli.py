"""Command-line front end: region sweeps, single solves, oracle checks, Q_max."""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import platform
import sys
import time
from importlib import metadata
from pathlib import Path

import numpy as np
import scipy

from . import csi, csir
from .config import ConfigError, load_config
from .errors import DomainError, GuardrailExceeded
from .region import (get_scheme, oracle_solve, q_max_csi, q_max_csir, sweep_region,
                     write_region_csv, write_region_json)

log = logging.getLogger("swipt_dps")

EXIT_OK, EXIT_CHECK_FAILED, EXIT_CONFIG, EXIT_SOLVER = 0, 1, 2, 3
OUT_ENV = "SWIPT_DPS_OUT"
ORACLE_TOL = 1e-4


def _versions():
    try:
        pkg = metadata.version("artifact")
    except metadata.PackageNotFoundError:
        pkg = "unknown"
    return {"python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__, "artifact": pkg}


def _sha256(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


class Run:
    """Collects emitted files and writes the manifest."""

    def __init__(self, command, cfg, out_dir):
        self.command = command
        self.cfg = cfg
        self.out = Path(out_dir)
        self.out.mkdir(parents=True, exist_ok=True)
        self.files = []
        self.errors = []
        self.t0 = time.perf_counter()

    def add(self, path, seconds, status="ok", **extra):
        self.files.append({"path": Path(path).name, "sha256": _sha256(path),
                           "seconds": seconds, "status": status, **extra})

    def finish(self, status):
        # keep entries of earlier runs into the same directory whose files survive
        path = self.out / "manifest.json"
        files = list(self.files)
        if path.exists():
            try:
                old = json.loads(path.read_text()).get("files", [])
            except (ValueError, AttributeError):
                old = []
            mine = {f["path"] for f in files}
            files = [f for f in old if isinstance(f, dict) and f.get("path") not in mine
                     and (self.out / f.get("path", "")).is_file()] + files
        manifest = {
            "command": self.command,
            "status": status,
            "config_path": self.cfg.source,
            "config": self.cfg.raw,
            "versions": _versions(),
            "seconds": time.perf_counter() - self.t0,
            "files": files,
            "errors": self.errors,
        }
        with open(path, "w") as fh:
            json.dump(manifest, fh, indent=1)
            fh.write("\n")


def _out_dir(args, cfg):
    if args.out:
        return args.out
    return os.environ.get(OUT_ENV) or cfg.out_dir


def _load(args):
    over = {"seed": args.seed, "n_states": args.n_states, "q_points": args.q_points,
            "schemes": args.schemes, "cases": args.case, "snr_db": args.snr,
            "workers": args.workers}
    cfg = load_config(args.config, over)
    ens = cfg.validate()
    return cfg, ens


def cmd_region(args) -> int:
    cfg, ens = _load(args)
    run = Run("region", cfg, _out_dir(args, cfg))
    status = EXIT_OK
    for case in cfg.cases:
        for snr in cfg.snr_db:
            eh, sys_ = cfg.params(ens, snr)
            t0 = time.perf_counter()
            regions = []
            for name in cfg.schemes:
                log.info("sweep case=%s snr=%g scheme=%s", case, snr, name)
                reg = sweep_region(name, ens, cfg.q_points, eh, sys_, case=case,
                                   workers=cfg.workers)
                reg.ensemble_meta["snr_db"] = snr
                for err in reg.errors:
                    err = {"case": case, "snr_db": snr, "scheme": name, **err}
                    run.errors.append(err)
                    # an unreachable target truncates a baseline curve; anything else is fatal
                    if err["error"] != "InfeasibleTarget":
                        status = EXIT_SOLVER
                regions.append(reg)
            stem = f"region_{case}_snr{snr:g}dB"
            file_status = "partial" if any(r.errors for r in regions) else "ok"
            write_region_csv(regions, run.out / f"{stem}.csv")
            write_region_json(regions, run.out / f"{stem}.json")
            dt = time.perf_counter() - t0
            meta = {"case": case, "snr_db": snr, "schemes": cfg.schemes}
            run.add(run.out / f"{stem}.csv", dt, file_status, **meta)
            run.add(run.out / f"{stem}.json", dt, file_status, **meta)
            print(f"{stem}: {sum(len(r.points) for r in regions)} points in {dt:.1f} s")
    run.finish("ok" if status == EXIT_OK else "failed")
    return status


def _solve_one(case, name, ens, q, eh, sys_, tol=None):
    if tol is not None and name == "optimal":
        if case == "csir":
            return csir.find_lambda(ens, q, eh=eh, sys=sys_, tol=tol)
        return csi.find_duals(ens, q, eh=eh, sys=sys_, tol=tol,
                              q_max=q_max_csi(ens, eh, sys_))
    return get_scheme(case, name).solve(ens.gains, q, eh, sys_, None)


def cmd_solve(args) -> int:
    cfg, ens = _load(args)
    case, name, snr = cfg.cases[0], cfg.schemes[0], cfg.snr_db[0]
    eh, sys_ = cfg.params(ens, snr)
    qm = get_scheme(case, name).q_max(ens.gains, eh, sys_)
    q = args.q if args.q is not None else args.q_fraction * qm
    sol = _solve_one(case, name, ens, q, eh, sys_)
    out = {"case": case, "scheme": name, "snr_db": snr, "q_max": qm,
           **sol.to_json(with_policy=args.policy)}
    text = json.dumps(out, indent=1)
    if args.out or os.environ.get(OUT_ENV):
        run = Run("solve", cfg, _out_dir(args, cfg))
        path = run.out / f"solve_{case}_{name}_snr{snr:g}dB.json"
        path.write_text(text + "\n")
        run.add(path, 0.0)
        run.finish("ok")
    print(text)
    return EXIT_OK


def cmd_oracle_check(args) -> int:
    cfg, ens = _load(args)
    run = Run("oracle-check", cfg, _out_dir(args, cfg))
    rows = []
    for case in cfg.cases:
        for snr in cfg.snr_db:
            eh, sys_ = cfg.params(ens, snr)
            qm = q_max_csir(ens, eh, sys_) if case == "csir" else q_max_csi(ens, eh, sys_)
            for q in np.linspace(0.0, qm * (1 - 1e-6), cfg.q_points):
                sol = _solve_one(case, "optimal", ens, float(q), eh, sys_, tol=args.solver_tol)
                ref = oracle_solve(ens, float(q), case, eh, sys_)
                dev = abs(sol.achieved_rate - ref.rate) / max(abs(ref.rate), 1e-300)
                rows.append((case, snr, float(q), sol.achieved_rate, ref.rate, dev))
                log.info("%s snr=%g q=%.6g dev=%.3g", case, snr, q, dev)
    path = run.out / "oracle_report.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["case", "snr_db", "q_target", "solver_rate", "oracle_rate", "rel_dev"])
        for r in rows:
            w.writerow([r[0], repr(r[1])] + [repr(v) for v in r[2:]])
    worst = max(r[5] for r in rows)
    ok = worst <= ORACLE_TOL
    run.add(path, time.perf_counter() - run.t0, "ok" if ok else "failed",
            max_rel_dev=worst)
    run.finish("ok" if ok else "failed")
    print(f"max relative rate deviation {worst:.3e} over {len(rows)} points "
          f"({'pass' if ok else 'FAIL'} at {ORACLE_TOL:g})")
    return EXIT_OK if ok else EXIT_CHECK_FAILED


def cmd_qmax(args) -> int:
    cfg, ens = _load(args)
    rows = []
    for snr in cfg.snr_db:
        eh, sys_ = cfg.params(ens, snr)
        rows.append((snr, q_max_csir(ens, eh, sys_), q_max_csi(ens, eh, sys_)))
    print("snr_db,q_max_csir,q_max_csi")
    for r in rows:
        print(",".join(repr(float(v)) for v in r))
    if args.out or os.environ.get(OUT_ENV):
        run = Run("qmax", cfg, _out_dir(args, cfg))
        path = run.out / "qmax.csv"
        with open(path, "w", newline="") as fh:
            fh.write("snr_db,q_max_csir,q_max_csi\n")
            for r in rows:
                fh.write(",".join(repr(float(v)) for v in r) + "\n")
        run.add(path, time.perf_counter() - run.t0)
        run.finish("ok")
    return EXIT_OK


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML experiment config (defaults: built-in)")
    common.add_argument("--out", help=f"output directory (else ${OUT_ENV}, else config)")
    common.add_argument("--seed", type=int)
    common.add_argument("--schemes", help="comma-separated scheme names")
    common.add_argument("--case", choices=["csir", "csi"])
    common.add_argument("--n-states", type=int)
    common.add_argument("--q-points", type=int)
    common.add_argument("--snr", type=float, help="single SNR in dB")
    common.add_argument("--workers", type=int, help="processes per sweep")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="swipt-dps",
                                description="Rate-energy tradeoff solvers for power-splitting "
                                            "receivers with a logistic harvester")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("region", parents=[common], help="sweep R-E regions")
    s = sub.add_parser("solve", parents=[common], help="solve one energy target")
    g = s.add_mutually_exclusive_group()
    g.add_argument("--q", type=float, help="energy target in J")
    g.add_argument("--q-fraction", type=float, default=0.5, help="target as a fraction of Q_max")
    s.add_argument("--policy", action="store_true", help="include per-state policy")
    o = sub.add_parser("oracle-check", parents=[common], help="compare solver and oracle")
    o.add_argument("--solver-tol", type=float, default=1e-10, help=argparse.SUPPRESS)
    sub.add_parser("qmax", parents=[common], help="print Q_max endpoints")
    return p


COMMANDS = {"region": cmd_region, "solve": cmd_solve, "oracle-check": cmd_oracle_check,
            "qmax": cmd_qmax}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, GuardrailExceeded, DomainError, OSError, TypeError,
            ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        if isinstance(exc, (ConfigError, GuardrailExceeded, DomainError, OSError, TypeError)):
            return EXIT_CONFIG
        return EXIT_SOLVER
    except (ArithmeticError, RuntimeError) as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
