"""Field-marking templates: straight segments and circular arcs on the z = 0 plane."""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Any

Point2 = tuple[float, float]
Segment = tuple[Point2, Point2]
# (center, radius, start_angle_deg, end_angle_deg); counter-clockwise from start to end
Arc = tuple[Point2, float, float, float]

_MARGIN_M = 1.0


class TemplateError(ValueError):
    pass


class TemplateParseError(TemplateError):
    pass


@dataclass(frozen=True)
class FieldTemplate:
    name: str
    length_m: float
    width_m: float
    segments: tuple[Segment, ...] = ()
    arcs: tuple[Arc, ...] = ()

    def __post_init__(self) -> None:
        segs = tuple(
            ((float(a[0]), float(a[1])), (float(b[0]), float(b[1]))) for a, b in self.segments
        )
        arcs = tuple(
            ((float(c[0]), float(c[1])), float(r), float(s), float(e)) for c, r, s, e in self.arcs
        )
        object.__setattr__(self, "segments", segs)
        object.__setattr__(self, "arcs", arcs)
        self.validate()

    def validate(self) -> None:
        if not (self.length_m > 0 and self.width_m > 0):
            raise TemplateError(f"field extent must be positive, got {self.length_m}x{self.width_m}")
        for i, (a, b) in enumerate(self.segments):
            if a == b:
                raise TemplateError(f"segment {i} has zero length")
            for p in (a, b):
                self._check_point(p, f"segment {i}")
        for i, (c, r, s, e) in enumerate(self.arcs):
            if not r > 0:
                raise TemplateError(f"arc {i} has non-positive radius {r}")
            if not e > s:
                raise TemplateError(f"arc {i} must have end angle > start angle")
            for x, y in arc_extent(c, r, s, e):
                self._check_point((x, y), f"arc {i}")

    def _check_point(self, p: Point2, what: str) -> None:
        x, y = p
        if not (-_MARGIN_M <= x <= self.length_m + _MARGIN_M
                and -_MARGIN_M <= y <= self.width_m + _MARGIN_M):
            raise TemplateError(f"{what} point {p} lies outside the field bounds")

    @property
    def corners(self) -> tuple[Point2, Point2, Point2, Point2]:
        L, W = self.length_m, self.width_m
        return ((0.0, 0.0), (L, 0.0), (L, W), (0.0, W))

    def to_dict(self) -> dict[str, Any]:
        return {
            "name": self.name,
            "length_m": self.length_m,
            "width_m": self.width_m,
            "segments": [[a[0], a[1], b[0], b[1]] for a, b in self.segments],
            "arcs": [[c[0], c[1], r, s, e] for c, r, s, e in self.arcs],
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "FieldTemplate":
        expected = {"name", "length_m", "width_m", "segments", "arcs"}
        unknown = set(d) - expected
        if unknown:
            raise TemplateParseError(f"unknown template keys: {sorted(unknown)}")
        missing = expected - set(d)
        if missing:
            raise TemplateParseError(f"missing template keys: {sorted(missing)}")
        segments = []
        for i, s in enumerate(d["segments"]):
            if len(s) != 4:
                raise TemplateParseError(f"segments[{i}]: expected 4 numbers, got {len(s)}")
            segments.append(((s[0], s[1]), (s[2], s[3])))
        arcs = []
        for i, a in enumerate(d["arcs"]):
            if len(a) != 5:
                raise TemplateParseError(f"arcs[{i}]: expected 5 numbers, got {len(a)}")
            arcs.append(((a[0], a[1]), a[2], a[3], a[4]))
        return cls(str(d["name"]), float(d["length_m"]), float(d["width_m"]),
                   tuple(segments), tuple(arcs))


def arc_extent(center: Point2, radius: float, start_deg: float, end_deg: float) -> list[Point2]:
    """Endpoints plus any axis-extreme points covered by the arc."""
    pts = []
    angles = [start_deg, end_deg]
    k = math.ceil(start_deg / 90.0)
    while k * 90.0 < end_deg:
        angles.append(k * 90.0)
        k += 1
    for a in angles:
        t = math.radians(a)
        pts.append((center[0] + radius * math.cos(t), center[1] + radius * math.sin(t)))
    return pts


def builtin_soccer(length_m: float = 105.0, width_m: float = 68.0) -> FieldTemplate:
    L, W = length_m, width_m
    cy = W / 2.0
    pen_w, pen_d = 40.32, 16.5
    goal_w, goal_d = 18.32, 5.5
    spot, r_circle, cross = 11.0, 9.15, 0.2

    segments: list[Segment] = [
        ((0.0, 0.0), (L, 0.0)),
        ((L, 0.0), (L, W)),
        ((L, W), (0.0, W)),
        ((0.0, W), (0.0, 0.0)),
        ((L / 2.0, 0.0), (L / 2.0, W)),
    ]
    for x0, sign in ((0.0, 1.0), (L, -1.0)):
        for half, depth in ((pen_w / 2.0, pen_d), (goal_w / 2.0, goal_d)):
            x1 = x0 + sign * depth
            segments += [
                ((x0, cy - half), (x1, cy - half)),
                ((x1, cy - half), (x1, cy + half)),
                ((x1, cy + half), (x0, cy + half)),
            ]
    for sx in (spot, L - spot):
        segments += [((sx - cross, cy), (sx + cross, cy)), ((sx, cy - cross), (sx, cy + cross))]

    half_angle = math.degrees(math.acos((pen_d - spot) / r_circle))
    arcs: list[Arc] = [
        ((L / 2.0, cy), r_circle, 0.0, 360.0),
        ((spot, cy), r_circle, -half_angle, half_angle),
        ((L - spot, cy), r_circle, 180.0 - half_angle, 180.0 + half_angle),
        ((0.0, 0.0), 1.0, 0.0, 90.0),
        ((L, 0.0), 1.0, 90.0, 180.0),
        ((L, W), 1.0, 180.0, 270.0),
        ((0.0, W), 1.0, 270.0, 360.0),
    ]
    return FieldTemplate("soccer", L, W, tuple(segments), tuple(arcs))


def builtin_volleyball() -> FieldTemplate:
    L, W = 18.0, 9.0
    segments: list[Segment] = [
        ((0.0, 0.0), (L, 0.0)),
        ((L, 0.0), (L, W)),
        ((L, W), (0.0, W)),
        ((0.0, W), (0.0, 0.0)),
        ((9.0, 0.0), (9.0, W)),
        ((6.0, 0.0), (6.0, W)),
        ((12.0, 0.0), (12.0, W)),
    ]
    return FieldTemplate("volleyball", L, W, tuple(segments), ())


BUILTIN_TEMPLATES = {"soccer": builtin_soccer, "volleyball": builtin_volleyball}


def get_template(name_or_path: str | os.PathLike) -> FieldTemplate:
    """Resolve a builtin name ('soccer', 'volleyball') or a template file path."""
    key = str(name_or_path)
    if key in BUILTIN_TEMPLATES:
        return BUILTIN_TEMPLATES[key]()
    return load_template(name_or_path)


def save_template(t: FieldTemplate, path: str | os.PathLike) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(json.dumps(t.to_dict(), indent=2) + "\n", encoding="utf-8")
    os.replace(tmp, path)


def load_template(path: str | os.PathLike) -> FieldTemplate:
    text = Path(path).read_text(encoding="utf-8")
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise TemplateParseError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc
    if not isinstance(data, dict):
        raise TemplateParseError(f"{path}: top level must be an object")
    try:
        return FieldTemplate.from_dict(data)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, TemplateError):
            raise
        raise TemplateParseError(f"{path}: {exc}") from exc
