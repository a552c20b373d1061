"""Scenario configuration: INI files with named sections.

Sections and keys (all optional unless noted)::

    [scenario]    name (required), description, pipeline
    [manifold]    warp (required), dim (required), c, sigma, delta, rho_max
    [curvature]   gamma, c0, c1, r1
    [pme]         m (required)
    [datum]       generator, amplitude, alpha, T, exponent, C, t0, path
    [solver]      radii, cells_per_unit, levels, horizon, norm_r, boundary, boundary_value,
                  dt, rel_change, profile_rho_max
    [outputs]     formats
    [assertions]  <label> = <metric> <op> <value>
    [sweep]       axis, values, metric, workers
"""

from __future__ import annotations

import configparser
import io
import re
from dataclasses import dataclass, field
from pathlib import Path

__all__ = ["ConfigError", "Scenario", "Assertion", "load_scenario", "parse_scenario"]

SECTIONS = ("scenario", "manifold", "curvature", "pme", "datum", "solver", "outputs",
            "assertions", "sweep")
STAGES = ("geometry", "certify", "barrier", "profile", "solve")
WARPS = ("euclidean", "hyperbolic", "exp_power", "power_law", "psi_star_lower", "psi_star_upper")
GENERATORS = ("zero", "constant", "power", "profile", "super_barrier", "sub_barrier",
              "barenblatt", "csv")
FLOAT_KEYS = {
    "manifold": ("c", "sigma", "delta", "rho_max"),
    "curvature": ("gamma", "c0", "c1", "r1"),
    "pme": ("m",),
    "datum": ("amplitude", "alpha", "T", "exponent", "C", "t0"),
    "solver": ("cells_per_unit", "horizon", "norm_r", "boundary_value", "dt", "rel_change", "barrier_R",
               "profile_rho_max"),
}
INT_KEYS = {"manifold": ("dim",), "sweep": ("workers",)}
LIST_KEYS = {"solver": ("radii", "levels"), "sweep": ("values",)}
OPS = ("==", "!=", ">=", "<=", ">", "<")
_ASSERT = re.compile(r"^\s*([A-Za-z_][\w.]*)\s*(==|!=|>=|<=|>|<)\s*(.+?)\s*$")


class ConfigError(ValueError):
    def __init__(self, message, section=None, key=None, line=None):
        where = ""
        if section:
            where = f"[{section}]" + (f" {key}" if key else "")
        if line:
            where += f" (line {line})"
        super().__init__(f"{where}: {message}" if where else message)
        self.section, self.key, self.line = section, key, line


@dataclass(frozen=True)
class Assertion:
    label: str
    metric: str
    op: str
    value: object

    def check(self, metrics: dict):
        """Return True/False, or None when the metric is unavailable."""
        if self.metric not in metrics or metrics[self.metric] is None:
            return None
        got = metrics[self.metric]
        want = self.value
        if isinstance(want, float) and not isinstance(got, (int, float, bool)):
            return False
        if isinstance(got, bool) and isinstance(want, str):
            want = want.lower() == "true"
        return {
            "==": lambda a, b: a == b,
            "!=": lambda a, b: a != b,
            ">=": lambda a, b: a >= b,
            "<=": lambda a, b: a <= b,
            ">": lambda a, b: a > b,
            "<": lambda a, b: a < b,
        }[self.op](got, want)

    def text(self) -> str:
        return f"{self.metric} {self.op} {self.value}"


def _num(s):
    try:
        return float(s)
    except ValueError:
        return s


@dataclass
class Scenario:
    """Normalized scenario; ``data`` maps section -> key -> typed value."""

    data: dict
    assertions: list = field(default_factory=list)
    source: str | None = None

    @property
    def name(self) -> str:
        return self.data["scenario"]["name"]

    def get(self, section, key, default=None):
        return self.data.get(section, {}).get(key, default)

    @property
    def pipeline(self) -> list:
        return list(self.data["scenario"].get("pipeline", []))

    def with_value(self, dotted: str, value) -> "Scenario":
        """Copy with one field replaced (``section.key``)."""
        sec, _, key = dotted.partition(".")
        if sec not in SECTIONS or not key:
            raise ConfigError(f"bad axis {dotted!r}")
        data = {s: dict(v) for s, v in self.data.items()}
        data.setdefault(sec, {})[key] = value
        # re-parse so that the replaced value passes the same validation
        return parse_scenario(Scenario(data, list(self.assertions)).to_ini(), self.source)

    def to_ini(self) -> str:
        cp = configparser.ConfigParser(interpolation=None)
        cp.optionxform = str
        for sec in SECTIONS:
            if sec == "assertions":
                if self.assertions:
                    cp["assertions"] = {a.label: a.text() for a in self.assertions}
                continue
            if sec not in self.data or not self.data[sec]:
                continue
            out = {}
            for k, v in self.data[sec].items():
                if isinstance(v, (list, tuple)):
                    out[k] = ", ".join(_fmt(x) for x in v)
                else:
                    out[k] = _fmt(v)
            cp[sec] = out
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()


def _fmt(x):
    if isinstance(x, float):
        return repr(x)
    return str(x)


def _line_of(text: str, section: str, key: str | None = None):
    cur = None
    for i, line in enumerate(text.splitlines(), 1):
        s = line.strip()
        if s.startswith("[") and s.endswith("]"):
            cur = s[1:-1].strip()
            if key is None and cur == section:
                return i
        elif cur == section and key is not None and re.match(rf"^{re.escape(key)}\s*[=:]", s):
            return i
    if key is not None:
        return _line_of(text, section)  # missing key: point at its section
    return None


def parse_scenario(text: str, source: str | None = None) -> Scenario:
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"unparseable config: {exc}") from None

    def err(msg, sec, key=None):
        return ConfigError(msg, sec, key, _line_of(text, sec, key))

    for sec in cp.sections():
        if sec not in SECTIONS:
            raise err(f"unknown section (expected one of {', '.join(SECTIONS)})", sec)
    data = {}
    for sec in SECTIONS:
        if sec == "assertions" or not cp.has_section(sec):
            continue
        d = {}
        for key, raw in cp.items(sec):
            raw = raw.strip()
            if key in FLOAT_KEYS.get(sec, ()):
                try:
                    d[key] = float(raw)
                except ValueError:
                    raise err(f"expected a number, got {raw!r}", sec, key) from None
            elif key in INT_KEYS.get(sec, ()):
                try:
                    d[key] = int(raw)
                except ValueError:
                    raise err(f"expected an integer, got {raw!r}", sec, key) from None
            elif key in LIST_KEYS.get(sec, ()):
                items = [x.strip() for x in raw.split(",") if x.strip()]
                try:
                    d[key] = [float(x) for x in items]
                except ValueError:
                    raise err(f"expected a list of numbers, got {raw!r}", sec, key) from None
            elif sec == "scenario" and key == "pipeline":
                d[key] = [x.strip() for x in raw.split(",") if x.strip()]
            elif sec == "outputs" and key == "formats":
                d[key] = [x.strip() for x in raw.split(",") if x.strip()]
            else:
                d[key] = raw
        data[sec] = d

    for sec, key in (("scenario", "name"), ("manifold", "warp"), ("manifold", "dim"), ("pme", "m")):
        if key not in data.get(sec, {}):
            raise err("required field missing", sec, key)
    if data["manifold"]["warp"] not in WARPS:
        raise err(f"unknown warp (expected one of {', '.join(WARPS)})", "manifold", "warp")
    if data["manifold"]["dim"] < 2:
        raise err("dimension must be >= 2", "manifold", "dim")
    if not data["pme"]["m"] > 1:
        raise err("m must exceed 1", "pme", "m")
    for st in data["scenario"].get("pipeline", []):
        if st not in STAGES:
            raise err(f"unknown stage {st!r} (expected {', '.join(STAGES)})", "scenario", "pipeline")
    gen = data.get("datum", {}).get("generator")
    if gen is not None and gen not in GENERATORS:
        raise err(f"unknown generator (expected one of {', '.join(GENERATORS)})", "datum", "generator")
    warp = data["manifold"]["warp"]
    if warp.startswith("psi_star"):
        need = ("gamma", "c0") if warp == "psi_star_lower" else ("gamma", "c1", "r1")
        for k in need:
            if k not in data.get("curvature", {}):
                raise err(f"{warp} needs curvature.{k}", "curvature", k)
    gamma = data.get("curvature", {}).get("gamma")
    if gamma is not None and gamma >= 2 and "solve" in data["scenario"].get("pipeline", []):
        raise err("existence scenarios need gamma < 2", "curvature", "gamma")
    bnd = data.get("solver", {}).get("boundary")
    if bnd is not None and bnd not in ("dirichlet", "tail_slope", "essinf"):
        raise err("boundary must be dirichlet, tail_slope or essinf", "solver", "boundary")

    assertions = []
    if cp.has_section("assertions"):
        for label, raw in cp.items("assertions"):
            mt = _ASSERT.match(raw)
            if not mt:
                raise err(f"cannot parse assertion {raw!r}; use '<metric> <op> <value>'",
                          "assertions", label)
            assertions.append(Assertion(label, mt.group(1), mt.group(2), _num(mt.group(3))))
    return Scenario(data, assertions, source)


def load_scenario(path) -> Scenario:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {p}")
    return parse_scenario(p.read_text(), str(p))
