"""Run configuration: INI-style sections, strict keys, safe coefficient expressions."""
from __future__ import annotations

import ast
import configparser
import hashlib
import math
import operator
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .geometry import DomainDisk, Grid, build_grid, check_margin, make_disk
from .medium import CoefficientSpec, Medium, Phantom, make_medium, make_phantom, random_phantom


class ConfigError(ValueError):
    pass


_FUNCS = {name: getattr(np, name) for name in (
    "exp", "sin", "cos", "tan", "sqrt", "log", "log10", "abs", "tanh", "sinh", "cosh",
    "arctan", "arctan2", "hypot", "minimum", "maximum", "clip", "where", "sign", "heaviside")}
_CONSTS = {"pi": math.pi, "e": math.e}
_BINOPS = {ast.Add: operator.add, ast.Sub: operator.sub, ast.Mult: operator.mul,
           ast.Div: operator.truediv, ast.Pow: operator.pow, ast.Mod: operator.mod}
_UNOPS = {ast.USub: operator.neg, ast.UAdd: operator.pos}
_CMPOPS = {ast.Lt: operator.lt, ast.LtE: operator.le, ast.Gt: operator.gt, ast.GtE: operator.ge}


class Expression:
    """Arithmetic expression over named arrays, evaluated by walking the AST.

    Only numbers, the listed numpy functions, ``pi``, ``e``, comparisons and
    the declared variables are accepted; anything else is rejected at parse
    time.
    """

    def __init__(self, text: str, variables: tuple[str, ...]):
        self.text = text.strip()
        self.variables = variables
        try:
            tree = ast.parse(self.text, mode="eval")
        except SyntaxError as exc:
            raise ConfigError(f"cannot parse expression {text!r}: {exc.msg}") from None
        self._check(tree.body)
        self.tree = tree.body

    def _check(self, node):
        if isinstance(node, ast.Constant):
            if isinstance(node.value, bool) or not isinstance(node.value, (int, float)):
                raise ConfigError(f"only numeric constants are allowed in {self.text!r}")
        elif isinstance(node, ast.Name):
            if node.id not in self.variables and node.id not in _CONSTS:
                raise ConfigError(f"unknown name {node.id!r} in {self.text!r}; "
                                  f"allowed: {', '.join(self.variables + tuple(_CONSTS))}")
        elif isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
            self._check(node.left)
            self._check(node.right)
        elif isinstance(node, ast.UnaryOp) and type(node.op) in _UNOPS:
            self._check(node.operand)
        elif isinstance(node, ast.Compare) and len(node.ops) == 1 and type(node.ops[0]) in _CMPOPS:
            self._check(node.left)
            self._check(node.comparators[0])
        elif isinstance(node, ast.Call) and isinstance(node.func, ast.Name) and not node.keywords:
            if node.func.id not in _FUNCS:
                raise ConfigError(f"function {node.func.id!r} is not allowed in {self.text!r}")
            for arg in node.args:
                self._check(arg)
        else:
            raise ConfigError(f"unsupported syntax {type(node).__name__} in {self.text!r}")

    def __call__(self, **env):
        return self._eval(self.tree, env)

    def _eval(self, node, env):
        if isinstance(node, ast.Constant):
            return float(node.value)
        if isinstance(node, ast.Name):
            return env[node.id] if node.id in env else _CONSTS[node.id]
        if isinstance(node, ast.BinOp):
            return _BINOPS[type(node.op)](self._eval(node.left, env), self._eval(node.right, env))
        if isinstance(node, ast.UnaryOp):
            return _UNOPS[type(node.op)](self._eval(node.operand, env))
        if isinstance(node, ast.Compare):
            res = _CMPOPS[type(node.ops[0])](self._eval(node.left, env),
                                             self._eval(node.comparators[0], env))
            return np.asarray(res, dtype=float)
        return _FUNCS[node.func.id](*(self._eval(a, env) for a in node.args))

    def spatial(self, center=(0.0, 0.0)):
        """Callable of ``(X, Y)``; ``r`` is the distance to `center`."""
        def fn(X, Y):
            return self(x=X, y=Y, r=np.hypot(X - center[0], Y - center[1]))
        return fn


@dataclass
class GeometryConfig:
    nx: int = 197
    radius: float = 0.7
    center: tuple[float, float] = (0.0, 0.0)
    box_halfwidth: float | None = None  # None: smallest wall-safe box
    n_boundary: int = 256
    margin_factor: float = 1.1
    absorbing: bool = False


@dataclass
class MediumConfig:
    c: str = "1"
    a: str = "0"
    b: str = "0"
    q: str = "0"
    alpha_decay: float = 1.0
    kernel: str = "exponential"
    kernel_table: str = ""
    c_max: float | None = None
    c0: float | None = None
    x0: tuple[float, float] | None = None


@dataclass
class RunSection:
    T: float = 3.0
    cfl_safety: float = 0.5
    snapshot_stride: int = 0
    seed: int = 0
    threads: int = 1


@dataclass
class ReconstructConfig:
    m_max: int = 30
    tol_rel: float = 1e-4
    filter_order: int = 2
    n_samples: int = 10


@dataclass
class PhantomConfig:
    kind: str = "gaussian_bumps"
    features: str = "0.0 0.0 0.25 1.0"
    n_random: int = 3


_SECTIONS = {"geometry": GeometryConfig, "medium": MediumConfig, "run": RunSection,
             "reconstruct": ReconstructConfig, "phantom": PhantomConfig}
_FEATURE_KEYS = {"gaussian_bumps": ("cx", "cy", "width", "amplitude"),
                 "smoothed_disks": ("cx", "cy", "radius", "amplitude"),
                 "annulus": ("cx", "cy", "r_in", "r_out", "amplitude")}


@dataclass
class RunConfig:
    geometry: GeometryConfig = field(default_factory=GeometryConfig)
    medium: MediumConfig = field(default_factory=MediumConfig)
    run: RunSection = field(default_factory=RunSection)
    reconstruct: ReconstructConfig = field(default_factory=ReconstructConfig)
    phantom: PhantomConfig = field(default_factory=PhantomConfig)
    source: str | None = None

    def with_seed(self, seed: int) -> "RunConfig":
        return replace(self, run=replace(self.run, seed=int(seed)))

    @property
    def hash(self) -> str:
        return hashlib.sha256(dump_config(self).encode()).hexdigest()


def _convert(section: str, f, raw: str):
    # field annotations are strings under postponed evaluation
    kind = str(f.type)
    raw = raw.strip()
    if "None" in kind and raw.lower() in ("", "auto", "none"):
        return None
    base = kind.split("|")[0].strip()
    try:
        if base.startswith("tuple"):
            parts = [float(v) for v in raw.replace(",", " ").split()]
            if len(parts) != 2:
                raise ValueError("expected two numbers")
            return tuple(parts)
        if base == "bool":
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError("expected a boolean")
        if base == "int":
            return int(raw)
        if base == "float":
            val = float(raw)
            if not math.isfinite(val):
                raise ValueError("must be finite")
            return val
        return raw
    except ValueError as exc:
        raise ConfigError(f"{section}.{f.name}: cannot read {raw!r} ({exc})") from None


def _validate(cfg: RunConfig) -> None:
    g, m, r, rc, ph = cfg.geometry, cfg.medium, cfg.run, cfg.reconstruct, cfg.phantom

    def need(cond, where, msg):
        if not cond:
            raise ConfigError(f"{where}: {msg}")

    need(g.nx >= 16, "geometry.nx", f"must be at least 16, got {g.nx}")
    need(g.radius > 0, "geometry.radius", "must be positive")
    need(g.n_boundary >= 8, "geometry.n_boundary", "must be at least 8")
    need(g.margin_factor > 0, "geometry.margin_factor", "must be positive")
    if g.box_halfwidth is not None:
        need(g.radius < g.box_halfwidth, "geometry.radius",
             f"disk radius {g.radius} must be smaller than the box half-width {g.box_halfwidth}")
    need(m.alpha_decay > 0, "medium.alpha_decay", "must be positive")
    need(m.kernel in ("exponential", "tabulated"), "medium.kernel",
         f"must be exponential or tabulated, got {m.kernel!r}")
    need(m.kernel != "tabulated" or m.kernel_table.strip(), "medium.kernel_table",
         "required for a tabulated kernel")
    need(m.c_max is None or m.c_max > 0, "medium.c_max", "must be positive")
    need(m.c0 is None or 0 < m.c0 <= 1, "medium.c0", "must lie in (0, 1]")
    for key in ("c", "a", "b", "q"):
        try:
            Expression(getattr(m, key), ("x", "y", "r"))
        except ConfigError as exc:
            raise ConfigError(f"medium.{key}: {exc}") from None
    if m.kernel_table.strip():
        try:
            Expression(m.kernel_table, ("t",))
        except ConfigError as exc:
            raise ConfigError(f"medium.kernel_table: {exc}") from None
    need(r.T > 0, "run.T", "must be positive")
    need(0 < r.cfl_safety <= 1, "run.cfl_safety", "must lie in (0, 1]")
    need(r.snapshot_stride >= 0, "run.snapshot_stride", "must be non-negative")
    need(0 <= r.seed < 2 ** 64, "run.seed", "must be an unsigned 64-bit integer")
    need(r.threads >= 1, "run.threads", "must be at least 1")
    need(rc.m_max >= 1, "reconstruct.m_max", "must be at least 1")
    need(rc.tol_rel > 0, "reconstruct.tol_rel", "must be positive")
    need(rc.filter_order >= 0, "reconstruct.filter_order", "must be non-negative")
    need(rc.n_samples >= 1, "reconstruct.n_samples", "must be at least 1")
    need(ph.kind in (*_FEATURE_KEYS, "random"), "phantom.kind",
         f"must be one of {', '.join((*_FEATURE_KEYS, 'random'))}")
    need(ph.n_random >= 1, "phantom.n_random", "must be at least 1")
    if ph.kind != "random":
        phantom_features(ph)


def phantom_features(ph: PhantomConfig) -> list[dict]:
    """Features are ``;``-separated groups of numbers in the order of the kind."""
    keys = _FEATURE_KEYS[ph.kind]
    out = []
    for group in filter(None, (g.strip() for g in ph.features.split(";"))):
        try:
            vals = [float(v) for v in group.replace(",", " ").split()]
        except ValueError:
            raise ConfigError(f"phantom.features: non-numeric entry in {group!r}") from None
        if len(vals) != len(keys):
            raise ConfigError(f"phantom.features: {ph.kind} needs {len(keys)} numbers "
                              f"({' '.join(keys)}), got {group!r}")
        d = dict(zip(keys, vals))
        out.append({"center": (d.pop("cx"), d.pop("cy")), **d})
    return out


def parse_config(text: str, source: str | None = None) -> RunConfig:
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",),
                                       empty_lines_in_values=False)
    parser.optionxform = str
    try:
        parser.read_string(text, source=source or "<config>")
    except configparser.Error as exc:
        line = getattr(exc, "lineno", None)
        if line is None and getattr(exc, "errors", None):
            line = exc.errors[0][0]
        where = f"line {line}: " if line is not None else ""
        raise ConfigError(f"{where}{exc.message if hasattr(exc, 'message') else exc}") from None
    cfg = RunConfig(source=source)
    for section in parser.sections():
        if section not in _SECTIONS:
            raise ConfigError(f"unknown section [{section}]; expected one of {', '.join(_SECTIONS)}")
        cls_fields = {f.name: f for f in fields(_SECTIONS[section])}
        values = {}
        for key, raw in parser.items(section):
            if key not in cls_fields:
                raise ConfigError(f"unknown key {key!r} in [{section}]; valid keys: "
                                  f"{', '.join(cls_fields)}")
            values[key] = _convert(section, cls_fields[key], raw)
        setattr(cfg, section, _SECTIONS[section](**values))
    _validate(cfg)
    return cfg


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config(text, str(path))


def _fmt(val) -> str:
    if val is None:
        return "auto"
    if isinstance(val, bool):
        return "true" if val else "false"
    if isinstance(val, tuple):
        return ", ".join(repr(float(v)) for v in val)
    if isinstance(val, float):
        return repr(val)
    return str(val)


def dump_config(cfg: RunConfig) -> str:
    """Canonical text; ``parse_config(dump_config(c))`` reproduces `c`."""
    lines = []
    for section in _SECTIONS:
        lines.append(f"[{section}]")
        obj = getattr(cfg, section)
        for f in fields(obj):
            lines.append(f"{f.name} = {_fmt(getattr(obj, f.name))}")
        lines.append("")
    return "\n".join(lines)


@dataclass
class Problem:
    config: RunConfig
    grid: Grid
    domain: DomainDisk
    medium: Medium
    x0: tuple[float, float]


def _design_speed(cfg: RunConfig) -> float:
    m, g = cfg.medium, cfg.geometry
    if m.c_max is not None:
        return m.c_max
    # sample the closed form densely over the disk; outside it c = 1
    s = np.linspace(-g.radius, g.radius, 401)
    X, Y = np.meshgrid(s + g.center[0], s + g.center[1])
    vals = np.broadcast_to(Expression(m.c, ("x", "y", "r")).spatial(g.center)(X, Y), X.shape)
    inside = np.hypot(X - g.center[0], Y - g.center[1]) < g.radius
    return max(1.0, float(vals[inside].max())) * (1.0 + 1e-9)


def build_problem(cfg: RunConfig) -> Problem:
    """Grid, disk and validated medium described by `cfg`."""
    g, m, r = cfg.geometry, cfg.medium, cfg.run
    c_max = _design_speed(cfg)
    need = g.radius + g.margin_factor * c_max * r.T / 2.0
    L = g.box_halfwidth if g.box_halfwidth is not None else need
    grid = build_grid(L, g.nx, r.T, c_max, r.cfl_safety, center=g.center)
    domain = make_disk(grid, g.radius, g.center, g.n_boundary)
    if not g.absorbing:
        check_margin(grid, domain, c_max, g.margin_factor)
    table = None
    if m.kernel == "tabulated":
        tt = grid.dt * np.arange(grid.nt + 2)
        table = np.broadcast_to(Expression(m.kernel_table, ("t",))(t=tt), tt.shape).astype(float)
    coef = {k: Expression(getattr(m, k), ("x", "y", "r")).spatial(g.center) for k in "cabq"}
    spec = CoefficientSpec(
        **coef, alpha_decay=m.alpha_decay, kernel_family=m.kernel, kernel_table=table,
        kernel_table_dt=grid.dt if table is not None else None, c0=m.c0)
    medium = make_medium(spec, grid, domain)
    x0 = m.x0 if m.x0 is not None else g.center
    return Problem(cfg, grid, domain, medium, x0)


def build_phantom(cfg: RunConfig, grid: Grid, domain: DomainDisk) -> Phantom:
    ph = cfg.phantom
    if ph.kind == "random":
        return random_phantom(grid, domain, np.random.default_rng(cfg.run.seed), ph.n_random)
    return make_phantom(ph.kind, phantom_features(ph), grid, domain)
