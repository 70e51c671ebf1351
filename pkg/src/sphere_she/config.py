"""Strict ``key = value`` configuration files with sections, and their canonical snapshot.

Numeric values may be plain numbers or small arithmetic expressions in ``e`` and ``pi``
(``e^3``, ``pi/8``, ``2*pi/3``).  Unknown sections or keys are errors, and all problems are
reported together.
"""
from __future__ import annotations

import ast
import configparser
import math
import operator
import os
from pathlib import Path

from .montecarlo import EXPERIMENTS, ConfigError, ExperimentConfig, KernelSpec, SigmaSpec
from .noise import load_table

__all__ = ["parse_config", "parse_config_text", "config_to_ini", "parse_number", "MASTER_SEED_ENV"]

MASTER_SEED_ENV = "MASTER_SEED"

_OPS = {
    ast.Add: operator.add,
    ast.Sub: operator.sub,
    ast.Mult: operator.mul,
    ast.Div: operator.truediv,
    ast.Pow: operator.pow,
    ast.USub: operator.neg,
    ast.UAdd: operator.pos,
}
_NAMES = {"e": math.e, "pi": math.pi}


def parse_number(text: str) -> float:
    """Evaluate a constant arithmetic expression over numbers, ``e`` and ``pi``."""

    def ev(node):
        if isinstance(node, ast.Expression):
            return ev(node.body)
        if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)) and not isinstance(node.value, bool):
            return float(node.value)
        if isinstance(node, ast.Name) and node.id in _NAMES:
            return _NAMES[node.id]
        if isinstance(node, ast.BinOp) and type(node.op) in _OPS:
            return _OPS[type(node.op)](ev(node.left), ev(node.right))
        if isinstance(node, ast.UnaryOp) and type(node.op) in _OPS:
            return _OPS[type(node.op)](ev(node.operand))
        raise ValueError(f"not a number: {text!r}")

    try:
        tree = ast.parse(text.strip().replace("^", "**"), mode="eval")
        return float(ev(tree))
    except (SyntaxError, ZeroDivisionError, OverflowError) as exc:
        raise ValueError(f"not a number: {text!r}") from exc


def _numbers(text: str) -> tuple:
    return tuple(parse_number(x) for x in text.split(",") if x.strip())


def _int(text: str) -> int:
    v = parse_number(text)
    if v != int(v):
        raise ValueError(f"not an integer: {text!r}")
    return int(v)


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("true", "yes", "1", "on"):
        return True
    if t in ("false", "no", "0", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _seed(text: str) -> int:
    t = text.strip()
    if not t.isdigit():
        raise ValueError(f"master seed must be a decimal integer, got {text!r}")
    v = int(t)
    if v >= 2**64:
        raise ValueError("master seed must fit in 64 bits")
    return v


# section -> key -> (ExperimentConfig field or special target, converter)
_SCHEMA = {
    "experiment": {
        "name": ("experiment", str.strip),
        "R_list": ("R_list", _numbers),
        "t": ("t", parse_number),
        "grid_level": ("grid_level", _int),
        "replicas": ("replicas", _int),
        "master_seed": ("master_seed", _seed),
        "chunk": ("chunk", _int),
        "threads": ("threads", _int),
        "z": ("z", parse_number),
    },
    "solver": {
        "steps": ("steps", _int),
        "kernel_tol": ("kernel_tol", parse_number),
        "clamp_negative_kernel": ("clamp_negative_kernel", _bool),
        "renormalize_rows": ("renormalize_rows", _bool),
    },
    "kernel": {
        "family": ("kernel.family", str.strip),
        "C_h_lo": ("kernel.C_h_lo", parse_number),
        "C_h_up": ("kernel.C_h_up", parse_number),
        "strict": ("kernel.strict", _bool),
        "floor": ("kernel.floor", parse_number),
        "peak": ("kernel.peak", parse_number),
        "h0": ("kernel.h0", parse_number),
        "kappa": ("kernel.kappa", parse_number),
        "theta_c": ("kernel.theta_c", parse_number),
        "power": ("kernel.power", parse_number),
        "table": ("kernel.table", str.strip),
        "theta_knots": ("kernel.theta", _numbers),
        "h_knots": ("kernel.h", _numbers),
    },
    "sigma": {
        "kind": ("sigma.kind", str.strip),
        "value": ("sigma.value", parse_number),
        "a": ("sigma.a", parse_number),
        "b": ("sigma.b", parse_number),
        "lo": ("sigma.lo", parse_number),
        "hi": ("sigma.hi", parse_number),
        "table": ("sigma.table", str.strip),
        "v_knots": ("sigma.v", _numbers),
        "sigma_knots": ("sigma.sigma", _numbers),
    },
    "tails": {"M_grid": ("M_grid", _numbers)},
    "holder": {"gamma": ("gamma", parse_number), "levels": ("holder_levels", lambda s: tuple(_int(x) for x in s.split(",")))},
    "independence": {
        "separations": ("separations", _numbers),
        "beta": ("beta", parse_number),
        "picard_n": ("picard_n", _int),
    },
}


def parse_config_text(text: str, base_dir: Path | None = None, env: dict | None = None) -> ExperimentConfig:
    """Parse configuration text; raises :class:`ConfigError` listing every problem."""
    env = os.environ if env is None else env
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    cp.optionxform = str
    errors: list[str] = []
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError([f"malformed configuration: {exc}"]) from exc
    top: dict = {}
    kern: dict = {}
    sig: dict = {}
    for section in cp.sections():
        schema = _SCHEMA.get(section)
        if schema is None:
            errors.append(f"unknown section [{section}]")
            continue
        for key, raw in cp.items(section):
            if key not in schema:
                errors.append(f"unknown key {key!r} in [{section}]")
                continue
            target, conv = schema[key]
            try:
                val = conv(raw)
            except ValueError as exc:
                errors.append(f"[{section}] {key}: {exc}")
                continue
            if target.startswith("kernel."):
                kern[target[7:]] = val
            elif target.startswith("sigma."):
                sig[target[6:]] = val
            else:
                top[target] = val
    if MASTER_SEED_ENV in env and env[MASTER_SEED_ENV] != "":
        try:
            top["master_seed"] = _seed(env[MASTER_SEED_ENV])
        except ValueError as exc:
            errors.append(f"{MASTER_SEED_ENV}: {exc}")
    if "experiment" in top and top["experiment"] not in EXPERIMENTS:
        errors.append(f"experiment name must be one of {', '.join(EXPERIMENTS)}")
    base = base_dir or Path.cwd()
    kspec = sspec = None
    try:
        kspec = _kernel_spec(kern, base)
    except (ValueError, OSError) as exc:
        errors.append(f"[kernel] {exc}")
    try:
        sspec = _sigma_spec(sig, base)
    except (ValueError, OSError) as exc:
        errors.append(f"[sigma] {exc}")
    if kspec is not None:
        top["kernel"] = kspec
    if sspec is not None:
        top["sigma"] = sspec
    if "experiment" in top and top["experiment"] not in EXPERIMENTS:
        top.pop("experiment")
    try:
        cfg = ExperimentConfig(**top)
    except ConfigError as exc:
        errors.extend(exc.errors)
    if errors:
        raise ConfigError(errors)
    return cfg


def _kernel_spec(d: dict, base: Path) -> KernelSpec:
    d = dict(d)
    family = d.pop("family", KernelSpec.family)
    lo = d.pop("C_h_lo", 0.0)
    up = d.pop("C_h_up", 0.0)
    strict = d.pop("strict", True)
    if "theta_c" in d and not (0 < d["theta_c"] <= math.pi):
        raise ValueError(f"theta_c = {d['theta_c']} must lie in (0, pi]")
    if "table" in d:
        th, hv = load_table(base / d.pop("table"))
        d["theta"], d["h"] = tuple(th), tuple(hv)
    return KernelSpec(family, lo, up, tuple(sorted(d.items())), strict)


def _sigma_spec(d: dict, base: Path) -> SigmaSpec:
    d = dict(d)
    kind = d.pop("kind", "constant")
    if kind == "table":
        if "table" in d:
            v, s = load_table(base / d.pop("table"))
            d["v"], d["sigma"] = tuple(v), tuple(s)
        if "v" not in d or "sigma" not in d:
            raise ValueError("table sigma needs a table file or v_knots and sigma_knots")
    elif kind == "constant":
        d.setdefault("value", 1.0)
    elif kind != "affine_clamped":
        raise ValueError(f"unknown sigma kind {kind!r}")
    return SigmaSpec(kind, tuple(sorted(d.items())))


def parse_config(path, env: dict | None = None) -> ExperimentConfig:
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"configuration file not found: {p}")
    return parse_config_text(p.read_text(), p.parent, env)


def config_to_ini(cfg: ExperimentConfig) -> str:
    """Canonical snapshot; parsing it back gives an equal configuration."""
    lines = [
        "[experiment]",
        f"name = {cfg.experiment}",
        "R_list = " + ", ".join(repr(float(r)) for r in cfg.R_list),
        f"t = {cfg.t!r}",
        f"grid_level = {cfg.grid_level}",
        f"replicas = {cfg.replicas}",
        f"master_seed = {cfg.master_seed}",
        f"chunk = {cfg.chunk}",
        f"threads = {cfg.threads}",
        f"z = {cfg.z!r}",
        "",
        "[solver]",
        f"steps = {cfg.steps}",
        f"kernel_tol = {cfg.kernel_tol!r}",
        f"clamp_negative_kernel = {str(cfg.clamp_negative_kernel).lower()}",
        f"renormalize_rows = {str(cfg.renormalize_rows).lower()}",
        "",
        "[kernel]",
        f"family = {cfg.kernel.family}",
        f"C_h_lo = {cfg.kernel.C_h_lo!r}",
        f"C_h_up = {cfg.kernel.C_h_up!r}",
        f"strict = {str(cfg.kernel.strict).lower()}",
    ]
    kp = dict(cfg.kernel.params)
    for key, name in (("theta", "theta_knots"), ("h", "h_knots")):
        if key in kp:
            lines.append(f"{name} = " + ", ".join(repr(float(x)) for x in kp.pop(key)))
    lines += [f"{k} = {float(v)!r}" for k, v in sorted(kp.items())]
    lines += ["", "[sigma]", f"kind = {cfg.sigma.kind}"]
    sp = dict(cfg.sigma.params)
    for key, name in (("v", "v_knots"), ("sigma", "sigma_knots")):
        if key in sp:
            lines.append(f"{name} = " + ", ".join(repr(float(x)) for x in sp.pop(key)))
    lines += [f"{k} = {float(v)!r}" for k, v in sorted(sp.items())]
    if cfg.M_grid:
        lines += ["", "[tails]", "M_grid = " + ", ".join(repr(float(m)) for m in cfg.M_grid)]
    lines += ["", "[holder]", f"gamma = {cfg.gamma!r}", "levels = " + ", ".join(str(j) for j in cfg.holder_levels)]
    lines += ["", "[independence]", f"beta = {cfg.beta!r}", f"picard_n = {cfg.picard_n}"]
    if cfg.separations:
        lines.append("separations = " + ", ".join(repr(float(s)) for s in cfg.separations))
    return "\n".join(lines) + "\n"
