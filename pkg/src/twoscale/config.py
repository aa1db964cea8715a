"""Simulation settings and the flat ``key = value`` configuration format.

Example::

    # Test case with a corner sink
    dt = 0.01
    T = 0.25
    macro_domain = 0, 1, 0, 0.5
    macro_n = 40, 20
    micro_n = 10
    u_init = 0.5
    phi_init = circle(0.5)
    u_bc = corner_ll=0

Initial phase fields: ``circle(porosity)``, ``rect(x0, x1, y0, y1)`` (mineral
inside the box) and ``split(x; <left shape>; <right shape>)`` for different
shapes left and right of ``x1 = x``.
"""
import dataclasses
import re
from dataclasses import dataclass, field, fields
from pathlib import Path

from .phasefield import ChemistryParams, SolverKnobs

REQUIRED = ("dt", "T", "macro_domain", "macro_n", "micro_n", "u_init", "phi_init")


class ConfigError(ValueError):
    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


@dataclass
class SimConfig:
    dt: float = None
    T: float = None
    macro_domain: tuple = None
    macro_n: tuple = None
    micro_n: int = None
    u_init: float = None
    phi_init: str = None
    name: str = "run"
    # chemistry
    D: float = 1.0
    u_star: float = 1.0
    u_eq: float = 0.5
    k: float = 1.0
    gamma: float = 0.01
    lam: float = 0.08
    delta: float = 1e-4
    mu_f: float = 1.0
    # solvers
    tol_M: float = 1e-6
    tol_mu: float = 1e-8
    L_coup: float = 1e-4
    L_lin: str = "dynamic"
    max_coupling_iters: int = 200
    max_micro_iters: int = 500
    bound_tol: float = 1e-9
    mass: str = "lumped"
    # micro adaptivity
    micro_adapt: bool = True
    theta_r: float = 2.0
    h_min: float = None
    # macro adaptivity
    macro_adapt: str = "dE"
    Lambda: float = 0.1
    C_r: float = 0.0
    C_c: float = 0.2
    por_max: float = 0.9686
    # macro problem
    flow: bool = False
    p_bc: dict = field(default_factory=dict)
    u_bc: dict = field(default_factory=dict)
    dt_limit: float = 0.0
    # output
    output_dir: str = None
    snapshot_every: int = 0

    @property
    def params(self):
        return ChemistryParams(self.D, self.u_star, self.u_eq, self.k, self.gamma, self.lam, self.delta)

    @property
    def knobs(self):
        L = self.L_lin if self.L_lin in ("dynamic", "bound") else float(self.L_lin)
        return SolverKnobs(self.L_coup, L, self.tol_mu, self.max_micro_iters, self.bound_tol, self.mass)

    @property
    def n_steps(self):
        return int(round(self.T / self.dt))

    @property
    def cell_h_min(self):
        return self.h_min if self.h_min is not None else self.lam / 3.0

    def replace(self, **changes):
        return dataclasses.replace(self, **changes).validate()

    def validate(self):
        problems = [f"missing required key {k!r}" for k in REQUIRED if getattr(self, k) is None]
        if problems:
            raise ConfigError(problems)
        try:
            self.params
        except ValueError as exc:
            problems.append(str(exc))
        try:
            self.knobs
        except ValueError as exc:
            problems.append(str(exc))
        if not self.dt > 0:
            problems.append("dt must be positive")
        if self.T < 0:
            problems.append("T must be nonnegative")
        elif self.dt > 0 and abs(self.T / self.dt - round(self.T / self.dt)) > 1e-9:
            problems.append("T must be a multiple of dt")
        if not (self.tol_M > 0 and self.tol_mu > 0):
            problems.append("tolerances must be positive")
        elif not self.tol_mu < self.tol_M:
            problems.append("tol_mu must be smaller than tol_M")
        if len(self.macro_domain) != 4:
            problems.append("macro_domain needs four numbers x0, x1, y0, y1")
        if len(self.macro_n) != 2 or min(self.macro_n) < 1:
            problems.append("macro_n needs two positive counts")
        if self.micro_n < 1:
            problems.append("micro_n must be >= 1")
        if self.macro_adapt not in ("dE", "off", "bottom_row"):
            problems.append("macro_adapt must be dE, off or bottom_row")
        if not 0 <= self.C_c < 1:
            problems.append("C_c must lie in [0, 1)")
        if self.C_r < 0 or self.Lambda < 0:
            problems.append("C_r and Lambda must be nonnegative")
        if not 0 < self.theta_r < 1 / (2 * self.lam):
            problems.append(f"theta_r must lie in (0, {1 / (2 * self.lam):g})")
        if not 0 < self.por_max <= 1:
            problems.append("por_max must lie in (0, 1]")
        if not 0 <= self.u_init:
            problems.append("u_init must be nonnegative")
        try:
            parse_shape(self.phi_init)
        except ValueError as exc:
            problems.append(str(exc))
        names = {"left", "right", "bottom", "top", "corner_ll", "corner_lr", "corner_ul", "corner_ur"}
        for key in ("p_bc", "u_bc"):
            bad = set(getattr(self, key)) - names
            if bad:
                problems.append(f"{key}: unknown boundary segments {sorted(bad)}")
        if problems:
            raise ConfigError(problems)
        return self


# -- shapes ----------------------------------------------------------------------
_SHAPE = re.compile(r"^\s*(\w+)\s*\((.*)\)\s*$", re.S)


def parse_shape(text):
    """Parse an initial phase-field shape into a nested tuple description."""
    if text is None:
        raise ValueError("phi_init is missing")
    m = _SHAPE.match(text)
    if not m:
        raise ValueError(f"cannot parse phase-field shape {text!r}")
    kind, args = m.group(1), m.group(2)
    if kind == "circle":
        por = float(args)
        if not 0 < por < 1:
            raise ValueError("circle porosity must lie in (0, 1)")
        return ("circle", por)
    if kind == "rect":
        box = tuple(float(a) for a in args.split(","))
        if len(box) != 4 or not (box[0] < box[1] and box[2] < box[3]):
            raise ValueError(f"rect needs x0 < x1, y0 < y1, got {args!r}")
        return ("rect", box)
    if kind == "uniform":
        v = float(args)
        if not 0 <= v <= 1:
            raise ValueError("uniform phase field must lie in [0, 1]")
        return ("uniform", v)
    if kind == "split":
        parts = _split_top(args)
        if len(parts) != 3:
            raise ValueError("split needs x; left shape; right shape")
        return ("split", float(parts[0]), parse_shape(parts[1]), parse_shape(parts[2]))
    raise ValueError(f"unknown phase-field shape {kind!r}")


def _split_top(text):
    """Split on ';' outside parentheses."""
    out, depth, cur = [], 0, ""
    for ch in text:
        depth += ch == "("
        depth -= ch == ")"
        if ch == ";" and depth == 0:
            out.append(cur)
            cur = ""
        else:
            cur += ch
    out.append(cur)
    return [p.strip() for p in out]


# -- file format ---------------------------------------------------------------
def _to_bool(v):
    s = v.strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {v!r}")


def _to_tuple(v, conv):
    return tuple(conv(x) for x in v.replace(" ", "").split(",") if x)


def _to_bc(v):
    """``name=value, name=value`` into a dict."""
    out = {}
    for item in v.split(","):
        item = item.strip()
        if not item:
            continue
        name, _, val = item.partition("=")
        if not _:
            raise ValueError(f"boundary entry {item!r} needs name=value")
        out[name.strip()] = float(val)
    return out


def _optional(conv):
    return lambda v: None if v.strip().lower() in ("none", "") else conv(v)


_CONVERTERS = {
    "macro_domain": lambda v: _to_tuple(v, float),
    "macro_n": lambda v: _to_tuple(v, int),
    "micro_n": int,
    "max_coupling_iters": int,
    "max_micro_iters": int,
    "snapshot_every": int,
    "micro_adapt": _to_bool,
    "flow": _to_bool,
    "p_bc": _to_bc,
    "u_bc": _to_bc,
    "h_min": _optional(float),
    "output_dir": _optional(str),
    "L_lin": lambda v: v.strip(),
    "name": str,
    "phi_init": str,
    "macro_adapt": str,
    "mass": str,
}


def parse_config(text, source="<string>"):
    known = {f.name for f in fields(SimConfig)}
    values, problems = {}, []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep:
            problems.append(f"{source}:{lineno}: expected 'key = value'")
            continue
        if key not in known:
            problems.append(f"{source}:{lineno}: unknown key {key!r}")
            continue
        try:
            values[key] = _CONVERTERS.get(key, float)(value.strip())
        except ValueError as exc:
            problems.append(f"{source}:{lineno}: bad value for {key!r}: {exc}")
    missing = [k for k in REQUIRED if k not in values]
    problems += [f"missing required key {k!r}" for k in missing]
    if problems:
        raise ConfigError(problems)
    return SimConfig(**values).validate()


def load_config(path):
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError([f"cannot read {path}: {exc}"]) from None
    return parse_config(text, str(path))


def bundled_config(name):
    """Path of a configuration file shipped with the package."""
    return Path(__file__).parent / "configs" / name
