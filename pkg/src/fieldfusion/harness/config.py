"""Scene configuration: a small line-oriented text format.

Grammar (one construct per line)::

    # comment                    ignored, as is any blank line
    [section]                    start a section; names are dotted, e.g. [shape.s1]
    key = value                  assignment inside the current section
    key = value  # note          trailing comments need whitespace before '#'

Assignments before the first header belong to the root section. Values are
plain text interpreted by the schema of their section:

    number      1.5, -2e-3, inf
    integer     32
    boolean     true | false
    vector      three numbers separated by spaces: ``0 1.5 -2``
    numbers     any count of numbers separated by spaces
    names       comma-separated identifiers: ``s1, wall``
    points      vectors separated by ';': ``0 4 1; 1 4 1``
    gauge       identity | random | 16 numbers (row-major 4x4 similarity)
    text        the rest of the line, stripped

Sections:

    (root)           name, seed, output
    [shape.NAME]     kind = sphere | box | gaussian | voxel | degraded | composite
    [field.NAME]     parts, origin, gauge; the first field is the reference frame
    [truth]          parts of the ground-truth scene (world frame)
    [camera.NAME]    intrinsics and a list of eye positions looking at ``target``
    [register]       pose sampler, query renders and pose-recovery simulator
    [blend]          strategy, gamma, tau and sweep grids
"""
from __future__ import annotations

import dataclasses
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from ..blending import INDOOR_PRESET, OUTDOOR_PRESET, STRATEGIES

_NAME = re.compile(r"^[A-Za-z_][A-Za-z0-9_\-]*$")
REQUIRED = object()
BLEND_PRESETS = {"indoor": INDOOR_PRESET, "outdoor": OUTDOOR_PRESET}


class ConfigError(ValueError):
    def __init__(self, message: str, source: str = "<config>", line: int | None = None,
                 section: str | None = None, key: str | None = None):
        self.source, self.line, self.section, self.key = source, line, section, key
        where = source if line is None else f"{source}:{line}"
        what = ""
        if section is not None:
            what = f"[{section}]" if section else "(root)"
            if key is not None:
                what += f" {key}"
            what += ": "
        super().__init__(f"{where}: {what}{message}")


# ---------------------------------------------------------------------------
# raw layer


@dataclass
class RawEntry:
    value: str
    line: int


@dataclass
class RawSection:
    name: str  # "" for the root
    line: int
    entries: dict[str, RawEntry] = field(default_factory=dict)


def parse_sections(text: str, source: str = "<config>") -> list[RawSection]:
    sections = [RawSection("", 0)]
    seen = {""}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = re.split(r"\s#", raw, maxsplit=1)[0].strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise ConfigError("unterminated section header", source, lineno)
            name = line[1:-1].strip()
            parts = name.split(".")
            if not name or not all(_NAME.match(p) for p in parts):
                raise ConfigError(f"bad section name {name!r}", source, lineno)
            if name in seen:
                raise ConfigError(f"duplicate section [{name}]", source, lineno)
            seen.add(name)
            sections.append(RawSection(name, lineno))
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {line!r}", source, lineno, sections[-1].name)
        key, value = (s.strip() for s in line.split("=", 1))
        sec = sections[-1]
        if not _NAME.match(key):
            raise ConfigError(f"bad key {key!r}", source, lineno, sec.name)
        if key in sec.entries:
            raise ConfigError("duplicate key", source, lineno, sec.name, key)
        sec.entries[key] = RawEntry(value, lineno)
    return sections


# ---------------------------------------------------------------------------
# value kinds


def _number(v: str) -> float:
    x = float(v)
    if math.isnan(x):
        raise ValueError("NaN is not allowed")
    return x


def _integer(v: str) -> int:
    return int(v)


def _boolean(v: str) -> bool:
    low = v.lower()
    if low not in ("true", "false"):
        raise ValueError("expected true or false")
    return low == "true"


def _numbers(v: str) -> tuple[float, ...]:
    return tuple(_number(x) for x in v.split())


def _vector(v: str) -> tuple[float, float, float]:
    xs = _numbers(v)
    if len(xs) != 3:
        raise ValueError(f"expected 3 numbers, got {len(xs)}")
    return xs


def _names(v: str) -> tuple[str, ...]:
    out = tuple(x.strip() for x in v.split(","))
    if not out or not all(_NAME.match(x) for x in out):
        raise ValueError("expected comma-separated names")
    return out


def _points(v: str) -> tuple[tuple[float, float, float], ...]:
    pts = tuple(_vector(p) for p in v.split(";") if p.strip())
    if not pts:
        raise ValueError("expected at least one point")
    return pts


def _gauge(v: str):
    if v in ("identity", "random"):
        return v
    xs = _numbers(v)
    if len(xs) != 16:
        raise ValueError("expected identity, random or 16 numbers")
    return xs


def _text(v: str) -> str:
    if not v:
        raise ValueError("empty value")
    return v


def _ints(v: str) -> tuple[int, ...]:
    return tuple(int(x) for x in v.split())


_PARSERS = {
    "number": _number, "integer": _integer, "boolean": _boolean, "numbers": _numbers,
    "vector": _vector, "names": _names, "points": _points, "gauge": _gauge, "text": _text,
    "integers": _ints, "optional-number": lambda v: None if v == "auto" else _number(v),
    "optional-vector": lambda v: None if v == "none" else _vector(v),
}


def _fmt_number(x: float) -> str:
    return repr(float(x))


def format_value(kind: str, value) -> str:
    if kind in ("number",):
        return _fmt_number(value)
    if kind == "integer":
        return str(int(value))
    if kind == "boolean":
        return "true" if value else "false"
    if kind in ("numbers", "vector"):
        return " ".join(_fmt_number(x) for x in value)
    if kind == "integers":
        return " ".join(str(int(x)) for x in value)
    if kind == "names":
        return ", ".join(value)
    if kind == "points":
        return "; ".join(" ".join(_fmt_number(x) for x in p) for p in value)
    if kind == "gauge":
        return value if isinstance(value, str) else " ".join(_fmt_number(x) for x in value)
    if kind == "optional-number":
        return "auto" if value is None else _fmt_number(value)
    if kind == "optional-vector":
        return "none" if value is None else " ".join(_fmt_number(x) for x in value)
    return str(value)


def _p(kind: str, default: Any = REQUIRED, choices: tuple | None = None):
    return field(default=default, metadata={"kind": kind, "choices": choices})


# ---------------------------------------------------------------------------
# typed sections

SHAPE_SCHEMAS: dict[str, dict[str, tuple[str, Any]]] = {
    "sphere": {"center": ("vector", REQUIRED), "radius": ("number", REQUIRED),
               "density": ("number", REQUIRED), "color": ("vector", REQUIRED)},
    "box": {"lo": ("vector", REQUIRED), "hi": ("vector", REQUIRED),
            "density": ("number", REQUIRED), "color": ("vector", REQUIRED)},
    "gaussian": {"center": ("vector", REQUIRED), "peak": ("number", REQUIRED), "spread": ("number", REQUIRED),
                 "color": ("vector", REQUIRED), "truncate": ("number", 3.0)},
    "voxel": {"path": ("text", REQUIRED), "lo": ("vector", REQUIRED), "hi": ("vector", REQUIRED)},
    "degraded": {"source": ("text", REQUIRED), "resolution": ("integers", REQUIRED), "pad": ("number", 0.0),
                 "color": ("optional-vector", None), "color_noise": ("number", 0.0), "seed": ("integer", 0)},
    "composite": {"parts": ("names", REQUIRED)},
}


@dataclass
class ShapeSpec:
    name: str
    kind: str
    params: dict[str, Any]


@dataclass
class FieldSpec:
    name: str
    parts: tuple[str, ...] = _p("names")
    origin: tuple | None = _p("optional-vector", None)
    gauge: Any = _p("gauge", "identity")  # local frame -> world frame


@dataclass
class CameraSpec:
    name: str
    eyes: tuple = _p("points")
    width: int = _p("integer", 64)
    height: int = _p("integer", 64)
    fov: float = _p("number", 50.0)
    near: float = _p("number", 0.1)
    far: float = _p("number", 10.0)
    target: tuple = _p("vector", (0.0, 0.0, 0.0))
    up: tuple = _p("vector", (0.0, 0.0, 1.0))
    supersample: int = _p("integer", 1)


@dataclass
class RegisterSpec:
    n_poses: int = _p("integer", 32)
    radius: float | None = _p("optional-number", None)
    radius_scale: float = _p("number", 1.5)
    elevation: tuple = _p("numbers", (0.0, 30.0))
    width: int = _p("integer", 64)
    height: int = _p("integer", 64)
    fov: float = _p("number", 50.0)
    budget: int = _p("integer", 32)
    rotation_noise: float = _p("number", 0.0)
    translation_noise: float = _p("number", 0.0)
    outlier_fraction: float = _p("number", 0.0)
    dropout_fraction: float = _p("number", 0.0)
    training_views: int = _p("integer", 32)
    rho_min: float = _p("number", 0.167)
    rho_max: float = _p("number", 1.3)
    rho_steps: int = _p("integer", 8)


@dataclass
class BlendSpec:
    preset: str = _p("text", "custom", ("custom",) + tuple(BLEND_PRESETS))
    strategy: str = _p("text", "idw-sample", STRATEGIES)
    gamma: float = _p("number", INDOOR_PRESET["gamma"])
    tau: float = _p("number", INDOOR_PRESET["tau"])
    budget: int = _p("integer", 64)
    eps_mass: float = _p("number", 1e-4)
    transform: str = _p("text", "estimated", ("estimated", "truth"))
    reference_budget: int = _p("integer", 256)
    gamma_min: float = _p("number", 0.01)
    gamma_max: float = _p("number", 1000.0)
    gamma_steps: int = _p("integer", 20)


@dataclass
class SceneConfig:
    name: str
    seed: int = 0
    output: str = ""
    shapes: dict[str, ShapeSpec] = field(default_factory=dict)
    fields: list[FieldSpec] = field(default_factory=list)
    truth: tuple[str, ...] = ()
    cameras: list[CameraSpec] = field(default_factory=list)
    register: RegisterSpec = field(default_factory=RegisterSpec)
    blend: BlendSpec = field(default_factory=BlendSpec)

    @property
    def output_dir(self) -> Path:
        return Path(self.output or f"runs/{self.name}")


def _convert(kind: str, raw: RawEntry, source: str, section: str, key: str, choices=None):
    try:
        value = _PARSERS[kind](raw.value)
    except ValueError as exc:
        raise ConfigError(f"{exc} (got {raw.value!r})", source, raw.line, section, key) from None
    if choices is not None and value not in choices:
        raise ConfigError(f"expected one of {', '.join(choices)} (got {raw.value!r})",
                          source, raw.line, section, key)
    return value


def _fill(cls, sec: RawSection, source: str, **fixed):
    kwargs = dict(fixed)
    known = {f.name: f for f in dataclasses.fields(cls) if "kind" in f.metadata}
    for key, raw in sec.entries.items():
        if key not in known:
            raise ConfigError("unknown key", source, raw.line, sec.name, key)
        f = known[key]
        kwargs[key] = _convert(f.metadata["kind"], raw, source, sec.name, key, f.metadata["choices"])
    for name, f in known.items():
        if name not in kwargs and f.default is REQUIRED:
            raise ConfigError("missing required key", source, sec.line, sec.name, name)
    return cls(**kwargs)


def _shape(name: str, sec: RawSection, source: str) -> ShapeSpec:
    if "kind" not in sec.entries:
        raise ConfigError("missing required key", source, sec.line, sec.name, "kind")
    kind_entry = sec.entries["kind"]
    kind = kind_entry.value
    if kind not in SHAPE_SCHEMAS:
        raise ConfigError(f"unknown shape kind {kind!r}; expected one of {', '.join(SHAPE_SCHEMAS)}",
                          source, kind_entry.line, sec.name, "kind")
    schema = SHAPE_SCHEMAS[kind]
    params = {}
    for key, raw in sec.entries.items():
        if key == "kind":
            continue
        if key not in schema:
            raise ConfigError(f"unknown key for a {kind}", source, raw.line, sec.name, key)
        params[key] = _convert(schema[key][0], raw, source, sec.name, key)
    for key, (_, default) in schema.items():
        if key not in params:
            if default is REQUIRED:
                raise ConfigError("missing required key", source, sec.line, sec.name, key)
            params[key] = default
    return ShapeSpec(name, kind, params)


def parse_config(text: str, source: str = "<config>") -> SceneConfig:
    sections = parse_sections(text, source)
    root = sections[0]
    root_known = {"name": "text", "seed": "integer", "output": "text"}
    vals: dict[str, Any] = {}
    for key, raw in root.entries.items():
        if key not in root_known:
            raise ConfigError("unknown key", source, raw.line, "", key)
        vals[key] = _convert(root_known[key], raw, source, "", key)
    if "name" not in vals:
        raise ConfigError("missing required key", source, None, "", "name")
    cfg = SceneConfig(vals["name"], vals.get("seed", 0), vals.get("output", ""))
    lines: dict[str, int] = {}
    for sec in sections[1:]:
        head, _, rest = sec.name.partition(".")
        lines[sec.name] = sec.line
        for key, entry in sec.entries.items():
            lines[f"{sec.name}/{key}"] = entry.line
        if head == "shape" and rest:
            cfg.shapes[rest] = _shape(rest, sec, source)
        elif head == "field" and rest:
            cfg.fields.append(_fill(FieldSpec, sec, source, name=rest))
        elif head == "camera" and rest:
            cfg.cameras.append(_fill(CameraSpec, sec, source, name=rest))
        elif sec.name == "truth":
            if set(sec.entries) != {"parts"}:
                bad = sorted(set(sec.entries) - {"parts"})
                if bad:
                    raise ConfigError("unknown key", source, sec.entries[bad[0]].line, sec.name, bad[0])
                raise ConfigError("missing required key", source, sec.line, sec.name, "parts")
            cfg.truth = _convert("names", sec.entries["parts"], source, sec.name, "parts")
        elif sec.name == "register":
            cfg.register = _fill(RegisterSpec, sec, source)
        elif sec.name == "blend":
            cfg.blend = _fill(BlendSpec, sec, source)
            preset = cfg.blend.preset
            if preset != "custom":
                for key, value in BLEND_PRESETS[preset].items():
                    if key not in sec.entries:
                        setattr(cfg.blend, key, value)
        else:
            raise ConfigError(f"unknown section [{sec.name}]", source, sec.line)
    validate(cfg, source, lines)
    return cfg


def validate(cfg: SceneConfig, source: str = "<config>", lines: dict[str, int] | None = None) -> None:
    """Check cross references and value ranges.

    ``lines`` maps ``section`` and ``section/key`` to line numbers for diagnostics.
    """
    lines = lines or {}

    def fail(msg, section, key=None):
        line = lines.get(f"{section}/{key}", lines.get(section))
        raise ConfigError(msg, source, line, section, key)

    if not cfg.fields:
        raise ConfigError("at least one [field.NAME] section is required", source)
    names = [f.name for f in cfg.fields]
    if len(set(names)) != len(names):
        raise ConfigError("duplicate field names", source)

    def check_parts(parts, section):
        for p in parts:
            if p not in cfg.shapes:
                fail(f"unknown shape {p!r}", section, "parts")

    positive = {"sphere": ("radius",), "gaussian": ("spread", "truncate")}
    non_negative = {"sphere": ("density",), "box": ("density",), "gaussian": ("peak",),
                    "degraded": ("pad", "color_noise")}
    for s in cfg.shapes.values():
        sec = f"shape.{s.name}"
        for key in positive.get(s.kind, ()):
            if not s.params[key] > 0:
                fail("must be positive", sec, key)
        for key in non_negative.get(s.kind, ()):
            if not s.params[key] >= 0:
                fail("must be non-negative", sec, key)
        if s.kind in ("box", "voxel") and not all(a < b for a, b in zip(s.params["lo"], s.params["hi"])):
            fail("need lo < hi on every axis", sec, "hi")
        if s.kind == "composite":
            check_parts(s.params["parts"], sec)
        if s.kind == "degraded":
            if s.params["source"] not in cfg.shapes:
                fail(f"unknown shape {s.params['source']!r}", sec, "source")
            if len(s.params["resolution"]) not in (1, 3) or min(s.params["resolution"]) < 2:
                fail("expected 1 or 3 integers, each at least 2", sec, "resolution")
    _check_acyclic(cfg, source, lines)
    for f in cfg.fields:
        check_parts(f.parts, f"field.{f.name}")
    if cfg.truth:
        check_parts(cfg.truth, "truth")
    for c in cfg.cameras:
        sec = f"camera.{c.name}"
        if c.width < 1 or c.height < 1:
            fail("image size must be positive", sec, "width")
        if not (0 < c.near < c.far):
            fail("need 0 < near < far", sec, "near")
        if not (0 < c.fov < 180):
            fail("fov must lie in (0, 180)", sec, "fov")
        if c.supersample < 1:
            fail("supersample must be at least 1", sec, "supersample")
    r = cfg.register
    if r.n_poses < 2:
        fail("need at least 2 poses", "register", "n_poses")
    if len(r.elevation) != 2 or not (0 <= r.elevation[0] <= r.elevation[1] <= 90):
        fail("expected 0 <= lo <= hi <= 90", "register", "elevation")
    if not (0 < r.rho_min <= r.rho_max) or r.rho_steps < 1:
        fail("need 0 < rho_min <= rho_max and rho_steps >= 1", "register", "rho_min")
    b = cfg.blend
    if not (0 < b.gamma_min <= b.gamma_max) or b.gamma_steps < 2:
        fail("need 0 < gamma_min <= gamma_max and gamma_steps >= 2", "blend", "gamma_min")
    if b.gamma < 0:
        fail("gamma must be non-negative", "blend", "gamma")
    if b.tau < 1:
        fail("tau must be at least 1", "blend", "tau")


def _check_acyclic(cfg: SceneConfig, source: str, lines: dict[str, int]) -> None:
    state: dict[str, int] = {}

    def deps(s: ShapeSpec):
        if s.kind == "composite":
            return s.params["parts"]
        if s.kind == "degraded":
            return (s.params["source"],)
        return ()

    def visit(name):
        if state.get(name) == 2:
            return
        if state.get(name) == 1:
            raise ConfigError(f"shape {name!r} refers to itself", source, lines.get(f"shape.{name}"), f"shape.{name}")
        state[name] = 1
        for d in deps(cfg.shapes[name]):
            visit(d)
        state[name] = 2

    for name in cfg.shapes:
        visit(name)


def _section_lines(obj, skip=("name",)) -> list[str]:
    out = []
    for f in dataclasses.fields(obj):
        if f.name in skip or "kind" not in f.metadata:
            continue
        out.append(f"{f.name} = {format_value(f.metadata['kind'], getattr(obj, f.name))}")
    return out


def serialize_config(cfg: SceneConfig) -> str:
    lines = [f"name = {cfg.name}", f"seed = {cfg.seed}"]
    if cfg.output:
        lines.append(f"output = {cfg.output}")
    for s in cfg.shapes.values():
        lines += ["", f"[shape.{s.name}]", f"kind = {s.kind}"]
        for key, (kind, _) in SHAPE_SCHEMAS[s.kind].items():
            lines.append(f"{key} = {format_value(kind, s.params[key])}")
    for f in cfg.fields:
        lines += ["", f"[field.{f.name}]"] + _section_lines(f)
    if cfg.truth:
        lines += ["", "[truth]", f"parts = {', '.join(cfg.truth)}"]
    for c in cfg.cameras:
        lines += ["", f"[camera.{c.name}]"] + _section_lines(c)
    lines += ["", "[register]"] + _section_lines(cfg.register)
    lines += ["", "[blend]"] + _section_lines(cfg.blend)
    return "\n".join(lines) + "\n"


def load_config(path) -> SceneConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc.strerror}", str(path)) from None
    return parse_config(text, str(path))
