"""Scenario files: sectioned ``key = value`` text with a typed schema.

Vectors are whitespace- or comma-separated numbers, matrix rows are
separated by ``;`` and lists of matrices by ``|``.  Comments start with
``#``.  Every validation error names the section, key and line.
"""

import configparser
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from vhisolve.exceptions import ConfigurationError

KINDS = ("abstract", "contact")


def _fmt(x):
    x = float(x)
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return "%.17g" % x


class _Type:
    def __init__(self, default=None, required=False):
        self.default = default
        self.required = required

    def parse(self, text):
        raise NotImplementedError

    def dump(self, value):
        return str(value)


class Text(_Type):
    def parse(self, text):
        if not text:
            raise ValueError("empty value")
        return text


class Float(_Type):
    def __init__(self, default=None, required=False, low=None, strict=False):
        super().__init__(default, required)
        self.low, self.strict = low, strict

    def parse(self, text):
        try:
            v = float(text)
        except ValueError:
            raise ValueError(f"expected a number, got {text!r}") from None
        if math.isnan(v):
            raise ValueError("nan is not allowed")
        if self.low is not None:
            if self.strict and not v > self.low:
                raise ValueError(f"must be > {self.low:g}, got {text}")
            if not self.strict and v < self.low:
                raise ValueError(f"must be >= {self.low:g}, got {text}")
        return v

    def dump(self, value):
        return _fmt(value)


def Positive(default=None, required=False):
    return Float(default, required, low=0.0, strict=True)


def NonNegative(default=None, required=False):
    return Float(default, required, low=0.0)


class Int(_Type):
    def __init__(self, default=None, required=False, low=0):
        super().__init__(default, required)
        self.low = low

    def parse(self, text):
        try:
            v = int(text)
        except ValueError:
            raise ValueError(f"expected an integer, got {text!r}") from None
        if v < self.low:
            raise ValueError(f"must be >= {self.low}, got {v}")
        return v


class Bool(_Type):
    _WORDS = {"true": True, "yes": True, "1": True, "on": True,
              "false": False, "no": False, "0": False, "off": False}

    def parse(self, text):
        try:
            return self._WORDS[text.strip().lower()]
        except KeyError:
            raise ValueError(f"expected true or false, got {text!r}") from None

    def dump(self, value):
        return "true" if value else "false"


class Choice(_Type):
    def __init__(self, options, default=None, required=False):
        super().__init__(default, required)
        self.options = tuple(options)

    def parse(self, text):
        if text not in self.options:
            raise ValueError(f"expected one of {', '.join(self.options)}, got {text!r}")
        return text


def _numbers(text):
    parts = text.replace(",", " ").split()
    if not parts:
        raise ValueError("empty vector")
    try:
        vals = [float(p) for p in parts]
    except ValueError:
        raise ValueError(f"expected numbers, got {text!r}") from None
    if any(math.isnan(v) for v in vals):
        raise ValueError("nan is not allowed")
    return vals


class Vector(_Type):
    def __init__(self, default=None, required=False, length=None):
        super().__init__(default, required)
        self.length = length

    def parse(self, text):
        v = np.array(_numbers(text))
        if self.length is not None and v.size != self.length:
            raise ValueError(f"expected {self.length} entries, got {v.size}")
        return v

    def dump(self, value):
        return " ".join(_fmt(x) for x in value)


class Matrix(_Type):
    def parse(self, text):
        rows = [_numbers(r) for r in text.split(";") if r.strip()]
        if not rows or len({len(r) for r in rows}) != 1:
            raise ValueError("matrix rows must be nonempty and of equal length")
        return np.array(rows)

    def dump(self, value):
        return "; ".join(" ".join(_fmt(x) for x in row) for row in np.atleast_2d(value))


class MatrixList(_Type):
    def parse(self, text):
        return [Matrix().parse(chunk) for chunk in text.split("|")]

    def dump(self, value):
        return " | ".join(Matrix().dump(m) for m in value)


TAGS = ("gamma1", "gamma2", "gamma3")

COMMON = {
    "scenario": {"kind": Choice(KINDS, required=True),
                 "name": Text()},
    "grid": {"horizon": Positive(required=True), "steps": Int(required=True, low=0)},
    "solver": {"mode": Choice(("marching", "fixed-point"), "marching"),
               "tol": Positive(1e-8),
               "static_tol": Positive(),
               "max_sweeps": Int(200, low=1),
               "quadrature": Choice(("trapezoid", "left"), "trapezoid")},
    "output": {"vtk_every": Int(1, low=1), "plots": Bool(True), "dpi": Int(100, low=10)},
}

ABSTRACT = {
    "space": {"dim": Int(required=True, low=1), "gram": Matrix()},
    "operator": {"matrix": Matrix(required=True)},
    "constraint": {"kind": Choice(("whole-space", "box", "polyhedron"), "whole-space"),
                   "lower": Vector(), "upper": Vector(), "normals": Matrix(),
                   "bounds": Vector(), "feasible": Vector()},
    "coupling": {"P": Matrix(), "L_P": NonNegative(), "uses_history": Bool(True)},
    "functional": {"kind": Choice(("zero", "block-norm"), "zero"), "map": Matrix(),
                   "x_gram": Matrix(), "blocks": MatrixList(), "weights": Vector(),
                   "concavity": NonNegative(0.0)},
    "history": {"kind": Choice(("zero", "kernel"), "zero"), "scale": Float(0.0),
                "rate": NonNegative(0.0), "matrix": Matrix()},
    "load": {"value": Vector(), "rate": Vector()},
}

CONTACT = {
    "mesh": {"width": Positive(required=True), "height": Positive(required=True),
             "nx": Int(required=True, low=1), "ny": Int(required=True, low=1),
             "left": Choice(TAGS, "gamma1"), "right": Choice(TAGS, "gamma2"),
             "bottom": Choice(TAGS, "gamma3"), "top": Choice(TAGS, "gamma2")},
    "material": {"theta": Positive(required=True), "zeta": NonNegative(0.0),
                 "lam": NonNegative(required=True), "mu": Positive(required=True),
                 "k": NonNegative(0.0), "r": NonNegative(0.0)},
    "contact": {"c_p": NonNegative(0.0), "gap": Positive(math.inf),
                "b0": NonNegative(0.0), "b_rate": NonNegative(0.0),
                "friction": NonNegative(1.0),
                "variant": Choice(("clamp-only", "literal"), "clamp-only")},
    "loading": {"f0": Vector(np.zeros(2), length=2),
                "traction_left": Vector(length=2), "traction_right": Vector(length=2),
                "traction_bottom": Vector(length=2), "traction_top": Vector(length=2),
                "ramp": Bool(False)},
}


def schema(kind):
    out = dict(COMMON)
    out.update(ABSTRACT if kind == "abstract" else CONTACT)
    return out


def _line_index(text):
    """``(section, key) -> line`` and ``section -> line`` for error messages."""
    index, section = {}, None
    for no, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line[0] in "#;":
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            index.setdefault((section, None), no)
        elif section is not None and ("=" in line or ":" in line):
            cut = min(i for i in (line.find("="), line.find(":")) if i >= 0)
            index.setdefault((section, line[:cut].strip()), no)
    return index


@dataclass
class ScenarioConfig:
    kind: str
    values: dict
    path: str = "<string>"
    lines: dict = field(default_factory=dict)

    def get(self, section, key):
        return self.values.get(section, {}).get(key)

    def line(self, section, key=None):
        return self.lines.get((section, key), self.lines.get((section, None)))

    def error(self, message, section, key=None):
        where = f"{section}.{key}" if key else section
        return ConfigurationError(f"{self.path}: [{where}] {message}", field=where,
                                  line=self.line(section, key))

    def to_text(self):
        """Canonical form: schema order, defaults filled in, 17-digit floats."""
        out = []
        for section, keys in schema(self.kind).items():
            vals = self.values.get(section, {})
            body = [f"{k} = {t.dump(vals[k])}" for k, t in keys.items()
                    if vals.get(k) is not None]
            if body:
                out.append(f"[{section}]")
                out.extend(body)
                out.append("")
        return "\n".join(out)

    def with_overrides(self, steps=None, mode=None):
        vals = {s: dict(v) for s, v in self.values.items()}
        if steps is not None:
            if int(steps) < 0:
                raise ConfigurationError("steps must be >= 0", field="grid.steps")
            vals["grid"]["steps"] = int(steps)
        if mode is not None:
            vals["solver"]["mode"] = Choice(("marching", "fixed-point")).parse(mode)
        return ScenarioConfig(self.kind, vals, self.path, self.lines)

    def __eq__(self, other):
        return isinstance(other, ScenarioConfig) and self.to_text() == other.to_text()


def parse_config(text, path="<string>"):
    """Parse and validate scenario text; raises :class:`ConfigurationError`."""
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",),
                                       comment_prefixes=("#",), strict=True,
                                       empty_lines_in_values=False)
    parser.optionxform = str
    try:
        parser.read_string(text, source=path)
    except configparser.MissingSectionHeaderError as exc:
        raise ConfigurationError(f"{path}: line {exc.lineno}: key outside of any section",
                                 line=exc.lineno) from None
    except configparser.DuplicateOptionError as exc:
        raise ConfigurationError(f"{path}: line {exc.lineno}: duplicate key "
                                 f"[{exc.section}.{exc.option}]",
                                 field=f"{exc.section}.{exc.option}",
                                 line=exc.lineno) from None
    except configparser.DuplicateSectionError as exc:
        raise ConfigurationError(f"{path}: line {exc.lineno}: duplicate section "
                                 f"[{exc.section}]", field=exc.section,
                                 line=exc.lineno) from None
    except configparser.ParsingError as exc:
        lineno = exc.errors[0][0] if exc.errors else None
        raise ConfigurationError(f"{path}: line {lineno}: malformed line", line=lineno) \
            from None
    except configparser.Error as exc:
        raise ConfigurationError(f"{path}: {exc}") from None

    lines = _line_index(text)
    raw_kind = parser.get("scenario", "kind", fallback=None)
    probe = ScenarioConfig("abstract", {}, path, lines)
    if raw_kind is None:
        raise probe.error("missing required key", "scenario", "kind")
    if raw_kind not in KINDS:
        raise probe.error(f"expected one of {', '.join(KINDS)}, got {raw_kind!r}",
                          "scenario", "kind")
    cfg = ScenarioConfig(raw_kind, {}, path, lines)
    layout = schema(raw_kind)
    for section in parser.sections():
        if section not in layout:
            raise cfg.error("unknown section", section)
        for key in parser[section]:
            if key not in layout[section]:
                raise cfg.error("unknown key", section, key)
    for section, keys in layout.items():
        vals = {}
        for key, typ in keys.items():
            text_val = parser.get(section, key, fallback=None)
            if text_val is None:
                if typ.required:
                    raise cfg.error("missing required key", section, key)
                vals[key] = typ.default
                continue
            try:
                vals[key] = typ.parse(text_val.strip())
            except ValueError as exc:
                raise cfg.error(str(exc), section, key) from None
        cfg.values[section] = vals
    return cfg


def load_config(path):
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigurationError(f"cannot read {path}: {exc.strerror}") from None
    except UnicodeDecodeError:
        raise ConfigurationError(f"{path} is not a text file") from None
    return parse_config(text, str(path))


# --------------------------------------------------------------------------
# builders


def _grid(cfg):
    from vhisolve.core import TimeGrid
    return TimeGrid(cfg.get("grid", "horizon"), cfg.get("grid", "steps"))


def _square(cfg, section, key, value, n, m=None):
    m = n if m is None else m
    if value.shape != (n, m):
        raise cfg.error(f"expected a {n}x{m} matrix, got {value.shape[0]}x{value.shape[1]}",
                        section, key)
    return value


def _vec(cfg, section, key, value, n):
    if value.shape != (n,):
        raise cfg.error(f"expected {n} entries, got {value.size}", section, key)
    return value


def build_abstract(cfg):
    """Assemble a :class:`VHIProblem` from an ``abstract`` scenario."""
    from vhisolve import core

    grid = _grid(cfg)
    dim = cfg.get("space", "dim")
    gram = cfg.get("space", "gram")
    gram = np.eye(dim) if gram is None else _square(cfg, "space", "gram", gram, dim)
    if not np.allclose(gram, gram.T, rtol=0, atol=1e-12 * np.abs(gram).max()):
        raise cfg.error("gram matrix must be symmetric", "space", "gram")
    try:
        space = core.InnerProductSpace(gram)
    except (ValueError, np.linalg.LinAlgError, ConfigurationError):
        raise cfg.error("gram matrix must be positive definite", "space", "gram") from None

    A_mat = _square(cfg, "operator", "matrix", cfg.get("operator", "matrix"), dim)
    A = core.MonotoneOperator.linear(A_mat, space)
    if not A.m_A > 0:
        raise cfg.error("operator is not strongly monotone", "operator", "matrix")

    kind = cfg.get("constraint", "kind")
    if kind == "box":
        lo, hi = cfg.get("constraint", "lower"), cfg.get("constraint", "upper")
        if lo is None or hi is None:
            raise cfg.error("box needs lower and upper", "constraint",
                            "lower" if lo is None else "upper")
        K = core.Box(_vec(cfg, "constraint", "lower", lo, dim),
                     _vec(cfg, "constraint", "upper", hi, dim))
    elif kind == "polyhedron":
        N, b, x0 = (cfg.get("constraint", k) for k in ("normals", "bounds", "feasible"))
        for k, v in (("normals", N), ("bounds", b), ("feasible", x0)):
            if v is None:
                raise cfg.error("polyhedron needs normals, bounds and feasible",
                                "constraint", k)
        _square(cfg, "constraint", "normals", N, N.shape[0], dim)
        _vec(cfg, "constraint", "bounds", b, N.shape[0])
        _vec(cfg, "constraint", "feasible", x0, dim)
        K = core.Polyhedron(N, b, x0)
        if not K.contains(x0):
            raise cfg.error("feasible point violates the inequalities", "constraint",
                            "feasible")
    else:
        K = core.WholeSpace(dim)

    P = cfg.get("coupling", "P")
    L_P = cfg.get("coupling", "L_P")
    if P is not None:
        _square(cfg, "coupling", "P", P, dim)
        if L_P is None:
            L_P = core.operator_norm_dual(P, space)
    phi = core.LinearCoupling(dim, P, L_P or 0.0,
                              uses_history=cfg.get("coupling", "uses_history"))

    if cfg.get("functional", "kind") == "block-norm":
        Mm = cfg.get("functional", "map")
        Mm = np.eye(dim) if Mm is None else _square(cfg, "functional", "map", Mm,
                                                     Mm.shape[0], dim)
        xdim = Mm.shape[0]
        xg = cfg.get("functional", "x_gram")
        xg = np.eye(xdim) if xg is None else _square(cfg, "functional", "x_gram", xg, xdim)
        x_space = core.InnerProductSpace(xg)
        blocks = cfg.get("functional", "blocks") or []
        for B in blocks:
            if B.shape[1] != xdim:
                raise cfg.error(f"every block needs {xdim} columns", "functional", "blocks")
        weights = cfg.get("functional", "weights")
        weights = np.ones(len(blocks)) if weights is None else \
            _vec(cfg, "functional", "weights", weights, len(blocks))
        if np.any(weights < 0):
            raise cfg.error("weights must be nonnegative", "functional", "weights")
        J = core.BlockNormFunctional(x_space, blocks, weights,
                                     concavity=cfg.get("functional", "concavity"))
        M = core.CompactMap(Mm, space, x_space)
    else:
        J = core.ZeroFunctional(dim)
        M = core.CompactMap.identity(space)

    quad = cfg.get("solver", "quadrature")
    if cfg.get("history", "kind") == "kernel":
        Km = cfg.get("history", "matrix")
        Km = np.eye(dim) if Km is None else _square(cfg, "history", "matrix", Km, dim)
        scale, rate = cfg.get("history", "scale"), cfg.get("history", "rate")
        S = core.VolterraKernel(
            dim, lambda t, s: scale * np.exp(-rate * (t - np.asarray(s))),
            abs(scale) * core.operator_norm_dual(Km, space), quadrature=quad,
            pointwise=lambda g: np.asarray(g) @ Km.T)
    else:
        S = core.ZeroHistory(dim, quadrature=quad)

    f0 = cfg.get("load", "value")
    f1 = cfg.get("load", "rate")
    f0 = np.zeros(dim) if f0 is None else _vec(cfg, "load", "value", f0, dim)
    f1 = np.zeros(dim) if f1 is None else _vec(cfg, "load", "rate", f1, dim)
    f = f0[None, :] + grid.nodes[:, None] * f1[None, :]
    return core.VHIProblem(space=space, grid=grid, K=K, A=A, phi=phi, J=J, M=M, S=S, f=f)


def build_contact(cfg):
    """Assemble a :class:`ContactAssembly` from a ``contact`` scenario."""
    from vhisolve.contact import ContactData, Material, assemble_problem, build_mesh

    g = cfg.values
    tags = {s: g["mesh"][s] for s in ("left", "right", "bottom", "top")}
    try:
        mesh = build_mesh(g["mesh"]["width"], g["mesh"]["height"], g["mesh"]["nx"],
                          g["mesh"]["ny"], tags)
    except ConfigurationError as exc:
        raise cfg.error(str(exc), "mesh") from None
    m = g["material"]
    material = Material(theta=m["theta"], zeta=m["zeta"], lam=m["lam"], mu=m["mu"],
                        k=m["k"], r=m["r"])
    c = g["contact"]
    tractions = {}
    for side in ("left", "right", "bottom", "top"):
        v = g["loading"][f"traction_{side}"]
        if v is not None:
            if tags[side] != "gamma2":
                raise cfg.error(f"side {side} is tagged {tags[side]}, tractions act only "
                                "on gamma2", "loading", f"traction_{side}")
            tractions[side] = tuple(float(x) for x in v)
    data = ContactData(c_p=c["c_p"], gap=c["gap"], b0=c["b0"], b_rate=c["b_rate"],
                       friction=c["friction"], f0=tuple(float(x) for x in g["loading"]["f0"]),
                       tractions=tractions, ramp=g["loading"]["ramp"], variant=c["variant"])
    try:
        return assemble_problem(mesh, material, data, _grid(cfg),
                                quadrature=g["solver"]["quadrature"])
    except ConfigurationError as exc:
        section = (exc.field or "contact").split(".")[0]
        raise cfg.error(str(exc), section if section in CONTACT else "contact") from None
