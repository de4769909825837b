"""Tensor permeability / pressure data model and its binary container format.

Fields live on a square n x n lattice over the unit square.  Arrays are
row-major with x as the fast axis, i.e. ``arr[j, i]`` addresses the point
with x-index i and y-index j.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

FORMAT_VERSION = 1
_DTYPE = np.dtype("<f8")


class FieldFormatError(ValueError):
    """Raised when a field file or field payload violates the format contract."""


class FieldInvariantError(ValueError):
    """Raised when field data violates a structural invariant."""


@dataclass(frozen=True)
class GridShape:
    """Square grid of n points per side over [0, 1]^2 with nominal spacing 1/n."""

    n: int

    def __post_init__(self):
        n = self.n
        if n < 8 or (n & (n - 1)) != 0:
            raise FieldInvariantError(f"grid size must be a power of 2 and >= 8, got {n}")

    @property
    def h(self) -> float:
        return 1.0 / self.n


@dataclass(frozen=True)
class TensorField:
    """Per-cell symmetric positive-definite 2x2 permeability (a_xx, a_xy, a_yy)."""

    shape: GridShape
    a_xx: np.ndarray
    a_xy: np.ndarray
    a_yy: np.ndarray

    def __post_init__(self):
        n = self.shape.n
        for name in ("a_xx", "a_xy", "a_yy"):
            arr = getattr(self, name)
            if arr.shape != (n, n):
                raise FieldInvariantError(f"{name} has shape {arr.shape}, expected {(n, n)}")
            if arr.dtype != np.float64:
                object.__setattr__(self, name, arr.astype(np.float64))
        for arr in (self.a_xx, self.a_xy, self.a_yy):
            arr.setflags(write=False)
        validate_tensor_field(self.a_xx, self.a_xy, self.a_yy)

    def components(self):
        return {"a_xx": self.a_xx, "a_xy": self.a_xy, "a_yy": self.a_yy}

    def __eq__(self, other):
        if not isinstance(other, TensorField):
            return NotImplemented
        return (self.shape == other.shape
                and np.array_equal(self.a_xx, other.a_xx)
                and np.array_equal(self.a_xy, other.a_xy)
                and np.array_equal(self.a_yy, other.a_yy))


@dataclass(frozen=True)
class PressureField:
    """Nodal pressure on the same lattice; Dirichlet columns are part of phi."""

    shape: GridShape
    phi: np.ndarray

    def __post_init__(self):
        n = self.shape.n
        if self.phi.shape != (n, n):
            raise FieldInvariantError(f"phi has shape {self.phi.shape}, expected {(n, n)}")
        if self.phi.dtype != np.float64:
            object.__setattr__(self, "phi", self.phi.astype(np.float64))
        self.phi.setflags(write=False)

    def components(self):
        return {"phi": self.phi}

    def __eq__(self, other):
        if not isinstance(other, PressureField):
            return NotImplemented
        return self.shape == other.shape and np.array_equal(self.phi, other.phi)


def validate_tensor_field(a_xx, a_xy, a_yy):
    """Check a_xx > 0, a_yy > 0 and cell-wise positive definiteness everywhere.

    Reports the first offending cell as (y_index, x_index).
    """
    for name, arr in (("a_xx", a_xx), ("a_yy", a_yy)):
        bad = np.argwhere(~(arr > 0.0))
        if bad.size:
            j, i = bad[0]
            raise FieldInvariantError(
                f"{name} must be positive everywhere; first violation at cell "
                f"(j={j}, i={i}): {arr[j, i]!r}")
    det = a_xx * a_yy - a_xy * a_xy
    bad = np.argwhere(~(det > 0.0))
    if bad.size:
        j, i = bad[0]
        raise FieldInvariantError(
            "tensor must be positive definite cell-wise; first violation at cell "
            f"(j={j}, i={i}): det={det[j, i]!r}")


def _write_container(path, n, components):
    manifest = {
        "format_version": FORMAT_VERSION,
        "n": int(n),
        "components": list(components.keys()),
        "dtype": "f64le",
        "layout": "row-major",
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(manifest).encode("utf-8"))
        fh.write(b"\x00")
        for arr in components.values():
            fh.write(np.ascontiguousarray(arr, dtype=_DTYPE).tobytes())


def _read_container(path, expected_components):
    with open(path, "rb") as fh:
        raw = fh.read()
    sep = raw.find(b"\x00")
    if sep < 0:
        raise FieldFormatError(f"{path}: missing manifest terminator")
    try:
        manifest = json.loads(raw[:sep].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FieldFormatError(f"{path}: malformed manifest: {exc}") from exc
    if manifest.get("format_version") != FORMAT_VERSION:
        raise FieldFormatError(f"{path}: unsupported format_version {manifest.get('format_version')!r}")
    if manifest.get("dtype") != "f64le" or manifest.get("layout") != "row-major":
        raise FieldFormatError(f"{path}: unsupported dtype/layout in manifest")
    n = manifest.get("n")
    if not isinstance(n, int):
        raise FieldFormatError(f"{path}: manifest n must be an integer, got {n!r}")
    shape = GridShape(n)  # raises FieldInvariantError on bad n
    comps = manifest.get("components")
    if comps != expected_components:
        raise FieldFormatError(
            f"{path}: manifest components {comps!r}, expected {expected_components!r}")
    payload = raw[sep + 1:]
    expected_bytes = len(comps) * n * n * 8
    if len(payload) != expected_bytes:
        raise FieldFormatError(
            f"{path}: payload length {len(payload)} bytes, expected {expected_bytes}")
    values = np.frombuffer(payload, dtype=_DTYPE)
    out = {}
    for k, name in enumerate(comps):
        out[name] = values[k * n * n:(k + 1) * n * n].reshape(n, n).copy()
    return shape, out


def write_field(fld: TensorField | PressureField, path) -> None:
    """Serialize a field; read_field(write_field(f)) is bit-exact."""
    _write_container(path, fld.shape.n, fld.components())


def read_field(path) -> TensorField:
    shape, comps = _read_container(path, ["a_xx", "a_xy", "a_yy"])
    return TensorField(shape, comps["a_xx"], comps["a_xy"], comps["a_yy"])


def read_pressure(path) -> PressureField:
    shape, comps = _read_container(path, ["phi"])
    return PressureField(shape, comps["phi"])
