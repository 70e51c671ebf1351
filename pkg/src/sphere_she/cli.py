"""Command-line entry point.

Exit status: 0 when every check passes, 1 when any check or ledger row fails, 2 on usage or
configuration errors.
"""
from __future__ import annotations

import argparse
import dataclasses
import datetime as _dt
import json
import logging
import math
import sys
from dataclasses import dataclass
from importlib import metadata
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .functionals import functional_ledger, ledger_json
from .geometry import build_grid, write_grid_csv
from .heat_kernel import (
    HeatKernelSeries,
    kernel_eval,
    kernel_matrix,
    write_kernel_binary,
    write_kernel_csv,
)
from .montecarlo import EXPERIMENTS, ConfigError, ExperimentConfig, run_experiment
from .noise import CovarianceKernel, NoiseConstants, build_factor, replica_stream
from .solver import FieldState, simulate, transition_operator

__all__ = ["main", "build_parser", "RunManifest", "dispatch"]

log = logging.getLogger("sphere_she")

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


def _version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "0+unknown"


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


@dataclass
class RunManifest:
    command: str
    config_path: str | None
    config_snapshot: dict | None
    master_seed: int | None
    output_dir: str
    version: str
    started: str
    finished: str | None = None
    exit_status: int | None = None
    outputs: list = dataclasses.field(default_factory=list)

    def write(self) -> Path:
        p = Path(self.output_dir) / "manifest.json"
        p.parent.mkdir(parents=True, exist_ok=True)
        p.write_text(json.dumps(dataclasses.asdict(self), indent=2, sort_keys=True) + "\n")
        return p


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse already exits with 2; keep the message terse
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _floats(text: str) -> tuple:
    return tuple(cfgmod.parse_number(x) for x in text.split(",") if x.strip())


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="sphere-she", description="Stochastic heat equation on large spheres.")
    p.add_argument("--verbose", "-v", action="store_true")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    k = sub.add_parser("kernel-check", help="row-sum defect and scaling-identity residual of the heat kernel")
    k.add_argument("--R", type=cfgmod.parse_number, required=True)
    k.add_argument("--t", type=cfgmod.parse_number, required=True)
    k.add_argument("--n", type=int, required=True)
    k.add_argument("--tol", type=float, default=1e-12)
    k.add_argument("--points", type=int, default=1000)
    k.add_argument("--max-defect", type=float, default=1e-3)
    k.add_argument("--out", type=Path, default=None, help="write kernel matrix (binary and CSV) and grid here")

    f = sub.add_parser("functionals-ledger", help="evaluate the covariance-functional inequalities")
    f.add_argument("--alphas", type=_floats, default=(0.5, 1.0, 2.0))
    f.add_argument("--betas", type=_floats, default=(0.5, 1.0, 2.0))
    f.add_argument("--ts", type=_floats, default=(0.5, 1.0))
    f.add_argument("--Rs", type=_floats, default=(math.e**2, math.e**3, math.e**4))
    f.add_argument("--C-lo", type=float, default=0.5)
    f.add_argument("--C-up", type=float, default=1.0)
    f.add_argument("--kernels", default="exponential_geodesic,askey")
    f.add_argument("--resolution", type=int, default=1)
    f.add_argument("--slack", type=float, default=0.10)
    f.add_argument("--out", type=Path, default=Path("runs/ledger"))

    s = sub.add_parser("simulate", help="one realisation of the field at time t")
    s.add_argument("--config", type=Path, required=True)
    s.add_argument("--replica", type=int, default=0)
    s.add_argument("--out", type=Path, default=Path("runs/simulate"))

    e = sub.add_parser("experiment", help="run a statistical experiment")
    e.add_argument("name", choices=[x.replace("_", "-") for x in EXPERIMENTS])
    e.add_argument("--config", type=Path, required=True)
    e.add_argument("--threads", type=int, default=None, help="worker threads (0 = auto)")
    e.add_argument("--out", type=Path, default=None)
    return p


def _ledger_kernel(name: str, C: NoiseConstants):
    if name == "exponential_geodesic":
        return lambda R: CovarianceKernel("exponential_geodesic", R, C, {"kappa": 2.0})
    if name == "askey":
        return lambda R: CovarianceKernel("askey", R, C, {"theta_c": math.pi / 8})
    if name == "constant":
        return lambda R: CovarianceKernel("constant", R, C)
    raise ValueError(f"ledger kernels are exponential_geodesic, askey or constant, not {name!r}")


def cmd_kernel_check(a) -> int:
    if not (a.R > 0 and a.t > 0 and a.n >= 0):
        raise ValueError("need R > 0, t > 0 and n >= 0")
    grid = build_grid(a.R, a.n)
    km = kernel_matrix(grid, a.t, a.tol)
    th = np.linspace(0.0, math.pi, a.points)
    big = HeatKernelSeries(a.R, a.t, a.tol)
    unit = HeatKernelSeries(1.0, a.t / a.R**2, a.tol)
    resid = float(np.max(np.abs(kernel_eval(big, th) - kernel_eval(unit, th) / a.R**2)))
    print(f"R={a.R!r} t={a.t!r} n={a.n} nodes={grid.size} L={km.series.truncation_L}")
    print(f"row_defect {km.row_defect:.6e}")
    print(f"scaling_residual {resid:.6e}")
    if a.out is not None:
        a.out.mkdir(parents=True, exist_ok=True)
        write_grid_csv(grid, a.out / "grid.csv")
        write_kernel_binary(km, a.out / "kernel.bin")
        if grid.size <= 5000:
            write_kernel_csv(km, a.out / "kernel.csv")
    ok = km.row_defect < a.max_defect and resid < 2 * a.tol
    return EXIT_OK if ok else EXIT_FAIL


def cmd_ledger(a) -> int:
    C = NoiseConstants(a.C_lo, a.C_up)
    kernels = {name: _ledger_kernel(name.strip(), C) for name in a.kernels.split(",") if name.strip()}
    man = RunManifest("functionals-ledger", None, vars_snapshot(a), None, str(a.out), _version(), _now())
    led = functional_ledger(kernels, a.alphas, a.betas, a.ts, a.Rs, slack=a.slack, resolution=a.resolution)
    a.out.mkdir(parents=True, exist_ok=True)
    path = a.out / "ledger.json"
    path.write_text(ledger_json({"snapshot": man.config_snapshot, **led}) + "\n")
    for name, st in led["by_lemma"].items():
        print(f"{name:24s} {st['pass']}/{st['count']}")
    status = EXIT_OK if led["all_pass"] else EXIT_FAIL
    man.outputs, man.finished, man.exit_status = [str(path)], _now(), status
    man.write()
    return status


def vars_snapshot(a) -> dict:
    return {k: (str(v) if isinstance(v, Path) else v) for k, v in sorted(vars(a).items()) if k != "func"}


def _load(path: Path, threads: int | None = None, name: str | None = None) -> ExperimentConfig:
    cfg = cfgmod.parse_config(path)
    changes = {}
    if threads is not None:
        changes["threads"] = threads
    if name is not None:
        changes["experiment"] = name
    return dataclasses.replace(cfg, **changes) if changes else cfg


def _write_snapshot(cfg: ExperimentConfig, out: Path) -> Path:
    out.mkdir(parents=True, exist_ok=True)
    p = out / "config.snapshot.ini"
    p.write_text(cfgmod.config_to_ini(cfg))
    return p


def cmd_simulate(a) -> int:
    cfg = _load(a.config)
    man = RunManifest("simulate", str(a.config), cfg.to_dict(), cfg.master_seed, str(a.out), _version(), _now())
    snap = _write_snapshot(cfg, a.out)
    R = cfg.R_list[0]
    grid = build_grid(R, cfg.grid_level)
    fac = build_factor(grid, cfg.kernel.build(R))
    sol = cfg.solver()
    st = simulate(
        FieldState.constant(grid), cfg.t, sol, cfg.sigma.build(), fac, replica_stream(cfg.master_seed, a.replica),
        operator=transition_operator(grid, sol),
    )
    path = a.out / "field.csv"
    with open(path, "w") as fh:
        fh.write(f"# config_hash={cfg.hash} master_seed={cfg.master_seed} replica={a.replica} R={R!r} t={cfg.t!r}\n")
        fh.write("colatitude,longitude,u\n")
        for c, l, u in zip(grid.colatitudes, grid.longitudes, st.values):
            fh.write(f"{c!r},{l!r},{u!r}\n")
    hist = a.out / "history.dat"
    with open(hist, "w") as fh:
        fh.write(f"# config_hash={cfg.hash} step max_abs_u\n")
        for i, m in enumerate(st.history, start=1):
            fh.write(f"{i} {float(m)!r}\n")
    print(f"max |u| = {float(np.max(np.abs(st.values))):.6g} over {grid.size} nodes")
    man.outputs, man.finished, man.exit_status = [str(snap), str(path), str(hist)], _now(), EXIT_OK
    man.write()
    return EXIT_OK


def cmd_experiment(a) -> int:
    name = a.name.replace("-", "_")
    cfg = _load(a.config, a.threads, name)
    out = a.out or Path("runs") / name
    man = RunManifest(f"experiment {a.name}", str(a.config), cfg.to_dict(), cfg.master_seed, str(out), _version(), _now())
    snap = _write_snapshot(cfg, out)
    rep = run_experiment(cfg)
    paths = rep.write(out)
    for c in rep.checks:
        print(f"{c['status']:15s} {c['name']}")
    for n in rep.notes:
        print(f"note: {n}")
    status = EXIT_OK if rep.all_pass else EXIT_FAIL
    man.outputs, man.finished, man.exit_status = [str(snap)] + [str(p) for p in paths], _now(), status
    man.write()
    return status


def dispatch(args) -> int:
    return {
        "kernel-check": cmd_kernel_check,
        "functionals-ledger": cmd_ledger,
        "simulate": cmd_simulate,
        "experiment": cmd_experiment,
    }[args.command](args)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR, format="%(levelname)s %(name)s: %(message)s")
    try:
        return dispatch(args)
    except ConfigError as exc:
        for e in exc.errors:
            print(f"config error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
