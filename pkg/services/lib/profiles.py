"""
Scalar coefficient and trace profiles.

A profile is a scalar function near a vertex, evaluated at arclength r along
a ray with polar angle theta in the vertex's local frame. Profiles come either
from a named built-in or from a sampled radial table.

Built-ins:
    zero
    const:<c>
    linear_y1:<c>          c * y1
    linear_y2:<c>          c * y2
    poly:<c0>,<c1>,...     sum c_k r^k
    poly_y1:<c0>,<c1>,...  sum c_k y1^k
    poly_y2:<c0>,<c1>,...  sum c_k y2^k
    power:<c>:<alpha>      c r^alpha
"""
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Any, Tuple

import numpy as np
from numpy.polynomial import polynomial as P
from scipy.interpolate import PchipInterpolator

from services.lib.errors import SpecFormatError

BUILTIN_KINDS = ("zero", "const", "linear_y1", "linear_y2", "poly", "poly_y1", "poly_y2", "power")


@dataclass(frozen=True)
class ScalarProfile:
    """Immutable scalar profile; see module docstring for the named forms"""
    kind: str
    coefficients: Tuple[float, ...] = ()
    table_r: Tuple[float, ...] = field(default=(), repr=False)
    table_value: Tuple[float, ...] = field(default=(), repr=False)

    @classmethod
    def zero(cls) -> "ScalarProfile":
        return cls("zero")

    @classmethod
    def const(cls, c: float) -> "ScalarProfile":
        return cls("const", (float(c),))

    @classmethod
    def parse(cls, obj: Any) -> "ScalarProfile":
        """
        Parse a profile from its JSON form.

        Args:
            obj: built-in name string, a number (constant), or a table
                 mapping {"r": [...], "value": [...]}

        Returns:
            ScalarProfile
        """
        if isinstance(obj, ScalarProfile):
            return obj
        if isinstance(obj, bool):
            raise SpecFormatError(f"Invalid profile: {obj!r}")
        if isinstance(obj, (int, float)):
            return cls.const(float(obj))
        if isinstance(obj, dict):
            return cls._parse_table(obj)
        if not isinstance(obj, str):
            raise SpecFormatError(f"Invalid profile: {obj!r}")

        text = obj.strip()
        name, _, rest = text.partition(":")
        name = name.strip()
        if name not in BUILTIN_KINDS:
            raise SpecFormatError(f"Unknown profile '{text}' (known: {', '.join(BUILTIN_KINDS)}, table)")
        if name == "zero":
            if rest:
                raise SpecFormatError(f"Profile 'zero' takes no arguments: '{text}'")
            return cls("zero")

        sep = ":" if name == "power" else ","
        try:
            coeffs = tuple(float(part) for part in rest.split(sep)) if rest else ()
        except ValueError:
            raise SpecFormatError(f"Non-numeric coefficient in profile '{text}'")

        expected = {"const": 1, "linear_y1": 1, "linear_y2": 1, "power": 2}
        if name in expected and len(coeffs) != expected[name]:
            raise SpecFormatError(f"Profile '{name}' needs {expected[name]} argument(s): '{text}'")
        if name.startswith("poly") and not coeffs:
            raise SpecFormatError(f"Profile '{name}' needs at least one coefficient: '{text}'")
        if not all(math.isfinite(c) for c in coeffs):
            raise SpecFormatError(f"Non-finite coefficient in profile '{text}'")
        return cls(name, coeffs)

    @classmethod
    def _parse_table(cls, obj: dict) -> "ScalarProfile":
        if set(obj) != {"r", "value"}:
            raise SpecFormatError(f"Table profile needs exactly the keys 'r' and 'value', got {sorted(obj)}")
        r = np.asarray(obj["r"], dtype=float)
        v = np.asarray(obj["value"], dtype=float)
        if r.ndim != 1 or r.shape != v.shape or r.size < 2:
            raise SpecFormatError("Table profile needs equally long 'r' and 'value' arrays of length >= 2")
        if np.any(np.diff(r) <= 0) or r[0] < 0:
            raise SpecFormatError("Table profile radii must be non-negative and strictly increasing")
        return cls("table", (), tuple(float(x) for x in r), tuple(float(x) for x in v))

    def to_json(self) -> Any:
        if self.kind == "table":
            return {"r": list(self.table_r), "value": list(self.table_value)}
        if self.kind == "zero":
            return "zero"
        sep = ":" if self.kind == "power" else ","
        return f"{self.kind}:" + sep.join(repr(c) for c in self.coefficients)

    @property
    def is_zero(self) -> bool:
        if self.kind == "zero":
            return True
        if self.kind == "table":
            return all(v == 0.0 for v in self.table_value)
        if self.kind == "power":
            return self.coefficients[0] == 0.0
        return all(c == 0.0 for c in self.coefficients)

    @cached_property
    def _interpolant(self):
        return PchipInterpolator(np.asarray(self.table_r), np.asarray(self.table_value), extrapolate=False)

    def value(self, r, theta: float = 0.0):
        """Profile value at arclength r along the ray at polar angle theta"""
        r = np.asarray(r, dtype=float)
        kind, c = self.kind, self.coefficients
        if kind == "zero":
            return np.zeros_like(r)
        if kind == "const":
            return np.full_like(r, c[0])
        if kind == "linear_y1":
            return c[0] * r * math.cos(theta)
        if kind == "linear_y2":
            return c[0] * r * math.sin(theta)
        if kind == "poly":
            return P.polyval(r, c)
        if kind == "poly_y1":
            return P.polyval(r * math.cos(theta), c)
        if kind == "poly_y2":
            return P.polyval(r * math.sin(theta), c)
        if kind == "power":
            with np.errstate(divide="ignore", invalid="ignore"):
                return c[0] * np.power(r, c[1])
        return self._interpolant(r)

    def derivative(self, r, theta: float = 0.0):
        """d/dr of the profile along the ray at polar angle theta"""
        r = np.asarray(r, dtype=float)
        kind, c = self.kind, self.coefficients
        if kind in ("zero", "const"):
            return np.zeros_like(r)
        if kind == "linear_y1":
            return np.full_like(r, c[0] * math.cos(theta))
        if kind == "linear_y2":
            return np.full_like(r, c[0] * math.sin(theta))
        if kind == "poly":
            return P.polyval(r, P.polyder(c)) if len(c) > 1 else np.zeros_like(r)
        if kind in ("poly_y1", "poly_y2"):
            direction = math.cos(theta) if kind == "poly_y1" else math.sin(theta)
            if len(c) == 1:
                return np.zeros_like(r)
            return direction * P.polyval(r * direction, P.polyder(c))
        if kind == "power":
            with np.errstate(divide="ignore", invalid="ignore"):
                return c[0] * c[1] * np.power(r, c[1] - 1.0)
        return self._interpolant.derivative()(r)

    def at_vertex(self, theta: float = 0.0) -> float:
        return float(self.value(0.0, theta))


def dyadic_radii(epsilon: float, levels: int) -> np.ndarray:
    """Geometric grid r_m = epsilon * 2^-m, m = 0..levels"""
    return epsilon * np.power(2.0, -np.arange(levels + 1, dtype=float))
