"""Block decimation of tensor permeability fields.

Three decimators are provided:

* MG -- wavenumber mode elimination.  For a tile, the quadratic-form matrix
  k . a_hat(k - k') . k' is built over the tile's nonzero Fourier modes and
  the effective tensor is the tile mean minus the Schur-complement
  correction obtained in the limit of vanishing retained wavenumber.  For
  2x2 tiles with zero off-diagonal input this reduces to a closed form,
  implemented separately and used as the fast path.
* KK -- closed-form combination of arithmetic and geometric means of the
  diagonal components on 2x2 blocks; off-diagonals are ignored.  The
  published expressions do not admit a uniform field as a fixed point
  (their second fraction is dimensionally inverted and the yy formula
  mixes one xx entry in); the corrected orientation is the default and
  the literal published form is kept behind ``as_printed=True``.
* Mean -- component-wise arithmetic average.

A sweep maps an n-grid to an n/n_block grid; ``run_plan`` repeats sweeps
until the target size is reached.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .grid import GridShape, TensorField

METHODS = ("MG", "KK", "Mean")


class PlanError(ValueError):
    pass


class DecimationError(RuntimeError):
    pass


@dataclass(frozen=True)
class BlockTensors:
    """2x2 block; first subscript is the row (y), second the column (x)."""

    a11: float; a12: float; a21: float; a22: float  # xx
    b11: float; b12: float; b21: float; b22: float  # yy
    c11: float = 0.0; c12: float = 0.0; c21: float = 0.0; c22: float = 0.0  # xy

    @classmethod
    def from_tile(cls, a_xx, a_xy, a_yy):
        a = np.asarray(a_xx); b = np.asarray(a_yy); c = np.asarray(a_xy)
        return cls(a[0, 0], a[0, 1], a[1, 0], a[1, 1],
                   b[0, 0], b[0, 1], b[1, 0], b[1, 1],
                   c[0, 0], c[0, 1], c[1, 0], c[1, 1])

    @property
    def has_xy(self):
        return any(v != 0.0 for v in (self.c11, self.c12, self.c21, self.c22))


@dataclass(frozen=True)
class UpscalePlan:
    method: str
    n_block: int = 2
    n_target: int = 32

    def __post_init__(self):
        if self.method not in METHODS:
            raise PlanError(f"unknown method {self.method!r}; expected one of {METHODS}")
        if self.n_block < 2:
            raise PlanError("n_block must be >= 2")
        if self.method == "KK" and self.n_block != 2:
            raise PlanError("KK only supports n_block = 2")

    def sweeps(self, n: int) -> int:
        """K = log_{n_block}(n / n_target); must come out a positive integer."""
        if n % self.n_target:
            raise PlanError(f"n_target {self.n_target} does not divide n {n}")
        ratio = n // self.n_target
        k = round(np.log(ratio) / np.log(self.n_block))
        if self.n_block ** k != ratio or k < 1:
            raise PlanError(
                f"{n} -> {self.n_target} is not a whole number of n_block={self.n_block} sweeps")
        return k


# ---------------------------------------------------------------------------
# 2x2 closed forms (all accept scalars or equally shaped arrays)

def mg_closed_form(a11, a12, a21, a22, b11, b12, b21, b22):
    """Mode-elimination effective tensor of a 2x2 block with zero xy input."""
    sa = a11 + a12 + a21 + a22
    sb = b11 + b12 + b21 + b22
    d = (a11 + a12) * (a21 + a22) * sb + sa * (b11 + b21) * (b12 + b22)
    if np.any(d == 0.0):
        raise DecimationError("degenerate block: closed-form denominator vanished")
    n1 = ((a11 * a12 * a21 + a11 * a12 * a22 + a11 * a21 * a22 + a12 * a21 * a22) * sb
          + (a11 + a21) * (a12 + a22) * (b11 + b21) * (b12 + b22))
    n2 = ((a11 + a12) * (a21 + a22) * (b11 + b12) * (b21 + b22)
          + (b11 * b12 * b21 + b11 * b12 * b22 + b11 * b21 * b22 + b12 * b21 * b22) * sa)
    axy = -(a11 * a22 - a12 * a21) * (b11 * b22 - b12 * b21) / d
    return n1 / d, axy, n2 / d


def mg_decimate_2x2(block: BlockTensors):
    if block.has_xy:
        raise DecimationError("closed form requires zero xy entries; use mg_decimate_general")
    return mg_closed_form(block.a11, block.a12, block.a21, block.a22,
                          block.b11, block.b12, block.b21, block.b22)


def kk_closed_form(a11, a12, a21, a22, b11, b12, b21, b22, as_printed=False):
    """KK effective diagonal tensor; corrected orientation unless as_printed."""
    sa = a11 + a12 + a21 + a22
    sb = b11 + b12 + b21 + b22
    ga = (a11 + a21) * (a12 + a22) / ((a11 + a12) * (a21 + a22))
    e3a = a11 * a12 * (a21 + a22) + a21 * a22 * (a11 + a12)
    gb = (b11 + b12) * (b21 + b22) / ((b11 + b21) * (b12 + b22))
    if as_printed:
        axx = np.sqrt(ga * sa / e3a)
        e3b_lit = b11 * b21 * (b12 + b22) + b12 * b22 * (b11 + a21)
        ayy = np.sqrt(gb * sb / e3b_lit)
    else:
        axx = np.sqrt(ga * e3a / sa)
        e3b = b11 * b21 * (b12 + b22) + b12 * b22 * (b11 + b21)
        ayy = np.sqrt(gb * e3b / sb)
    return axx, np.zeros_like(np.asarray(axx, dtype=float)) + 0.0, ayy


def kk_decimate_2x2(block: BlockTensors, as_printed=False):
    axx, _, ayy = kk_closed_form(block.a11, block.a12, block.a21, block.a22,
                                 block.b11, block.b12, block.b21, block.b22,
                                 as_printed=as_printed)
    return axx, 0.0, ayy


def mean_decimate(a_xx, a_xy, a_yy):
    """Component-wise arithmetic mean of an n_block^2 tile."""
    return (float(np.mean(a_xx)), float(np.mean(a_xy)), float(np.mean(a_yy)))


# ---------------------------------------------------------------------------
# general mode-elimination decimator

def mg_decimate_general(a_xx, a_xy, a_yy):
    """Effective tensor of one m x m tile, finite a_xy allowed.

    Builds M(k, k') = k . a_hat(k - k') . k' over all nonzero tile modes,
    then evaluates the reduced operator mean - C M^{-1} C' in the limit of
    vanishing retained wavenumber.  Returns (axx, axy, ayy); the xy value
    is the symmetrized off-diagonal (the raw asymmetry is round-off).
    """
    a_xx = np.asarray(a_xx, dtype=float)
    m = a_xx.shape[0]
    if a_xx.shape != (m, m):
        raise DecimationError(f"tile must be square, got {a_xx.shape}")
    ah = {
        (0, 0): np.fft.fft2(a_xx) / (m * m),
        (0, 1): np.fft.fft2(np.asarray(a_xy, dtype=float)) / (m * m),
        (1, 1): np.fft.fft2(np.asarray(a_yy, dtype=float)) / (m * m),
    }
    ah[(1, 0)] = ah[(0, 1)]
    freqs = np.fft.fftfreq(m, 1.0 / m).astype(int)
    modes = [(kx, ky) for ky in freqs for kx in freqs if (kx, ky) != (0, 0)]
    nh = len(modes)
    kvec = np.array(modes, dtype=float)  # (nh, 2)

    # a_hat lookup with periodic wrap, component (al, be), offset q = k - k'
    def ahat(al, be, qx, qy):
        return ah[(min(al, be), max(al, be))][qy % m, qx % m]

    M = np.empty((nh, nh), dtype=complex)
    for i, (kx, ky) in enumerate(modes):
        for j, (kxp, kyp) in enumerate(modes):
            qx, qy = kx - kxp, ky - kyp
            M[i, j] = (kx * ahat(0, 0, qx, qy) * kxp + kx * ahat(0, 1, qx, qy) * kyp
                       + ky * ahat(1, 0, qx, qy) * kxp + ky * ahat(1, 1, qx, qy) * kyp)
    C = np.empty((2, nh), dtype=complex)   # coupling from the retained mode, k_< -> 0
    Ct = np.empty((nh, 2), dtype=complex)
    for j, (kx, ky) in enumerate(modes):
        for al in range(2):
            C[al, j] = ahat(al, 0, -kx, -ky) * kx + ahat(al, 1, -kx, -ky) * ky
            Ct[j, al] = kx * ahat(0, al, kx, ky) + ky * ahat(1, al, kx, ky)
    mean = np.array([[ah[(0, 0)][0, 0], ah[(0, 1)][0, 0]],
                     [ah[(1, 0)][0, 0], ah[(1, 1)][0, 0]]])
    try:
        corr = C @ np.linalg.solve(M, Ct)
    except np.linalg.LinAlgError as exc:
        sv = np.linalg.svd(M, compute_uv=False)
        raise DecimationError(
            f"high-mode block singular (smallest singular value {sv[-1]:.3e})") from exc
    eff = (mean - corr).real
    return eff[0, 0], 0.5 * (eff[0, 1] + eff[1, 0]), eff[1, 1]


def _tiles(arr, nb):
    """(n, n) -> (nc, nc, nb, nb) view ordered [jc, ic, dy, dx]."""
    n = arr.shape[0]
    nc = n // nb
    return arr.reshape(nc, nb, nc, nb).transpose(0, 2, 1, 3)


def _mg_general_2x2_batched(a, c, b):
    """Vectorized general MG over stacked 2x2 tiles (finite xy allowed).

    a, c, b: arrays (..., 2, 2) of xx, xy, yy tiles.  Real arithmetic: on a
    2-point lattice every Fourier phase is +-1.
    """
    def dft(t):
        t00 = t[..., 0, 0]; t01 = t[..., 0, 1]; t10 = t[..., 1, 0]; t11 = t[..., 1, 1]
        return {
            (0, 0): 0.25 * (t00 + t01 + t10 + t11),
            (1, 0): 0.25 * (t00 - t01 + t10 - t11),
            (0, 1): 0.25 * (t00 + t01 - t10 - t11),
            (1, 1): 0.25 * (t00 - t01 - t10 + t11),
        }
    A, Cc, B = dft(a), dft(c), dft(b)
    comp = {(0, 0): A, (0, 1): Cc, (1, 0): Cc, (1, 1): B}
    modes = [(1, 0), (0, 1), (1, 1)]
    shape = a.shape[:-2]
    M = np.empty(shape + (3, 3))
    for i, (kx, ky) in enumerate(modes):
        for j, (kxp, kyp) in enumerate(modes):
            q = ((kx - kxp) % 2, (ky - kyp) % 2)
            M[..., i, j] = (kx * comp[(0, 0)][q] * kxp + kx * comp[(0, 1)][q] * kyp
                            + ky * comp[(1, 0)][q] * kxp + ky * comp[(1, 1)][q] * kyp)
    C = np.empty(shape + (2, 3))
    Ct = np.empty(shape + (3, 2))
    for j, (kx, ky) in enumerate(modes):
        q = ((-kx) % 2, (-ky) % 2)
        qf = (kx % 2, ky % 2)
        for al in range(2):
            C[..., al, j] = comp[(al, 0)][q] * kx + comp[(al, 1)][q] * ky
            Ct[..., j, al] = kx * comp[(0, al)][qf] + ky * comp[(1, al)][qf]
    mean = np.empty(shape + (2, 2))
    mean[..., 0, 0] = A[(0, 0)]; mean[..., 0, 1] = Cc[(0, 0)]
    mean[..., 1, 0] = Cc[(0, 0)]; mean[..., 1, 1] = B[(0, 0)]
    eff = mean - C @ np.linalg.solve(M, Ct)
    axy = 0.5 * (eff[..., 0, 1] + eff[..., 1, 0])
    return eff[..., 0, 0], axy, eff[..., 1, 1]


def decimate_once(field: TensorField, method: str, n_block: int = 2,
                  as_printed: bool = False) -> TensorField:
    """One sweep: n -> n / n_block."""
    n = field.shape.n
    if n % n_block:
        raise PlanError(f"n_block {n_block} does not divide n {n}")
    nc = n // n_block
    ta = _tiles(field.a_xx, n_block)
    tc = _tiles(field.a_xy, n_block)
    tb = _tiles(field.a_yy, n_block)
    if method == "Mean":
        axx = ta.mean(axis=(2, 3)); axy = tc.mean(axis=(2, 3)); ayy = tb.mean(axis=(2, 3))
    elif method == "KK":
        axx, _, ayy = kk_closed_form(
            ta[..., 0, 0], ta[..., 0, 1], ta[..., 1, 0], ta[..., 1, 1],
            tb[..., 0, 0], tb[..., 0, 1], tb[..., 1, 0], tb[..., 1, 1],
            as_printed=as_printed)
        axy = np.zeros_like(axx)
    elif method == "MG":
        if not np.any(field.a_xy) and n_block == 2:
            axx, axy, ayy = mg_closed_form(
                ta[..., 0, 0], ta[..., 0, 1], ta[..., 1, 0], ta[..., 1, 1],
                tb[..., 0, 0], tb[..., 0, 1], tb[..., 1, 0], tb[..., 1, 1])
        elif n_block == 2:
            axx, axy, ayy = _mg_general_2x2_batched(ta, tc, tb)
        else:
            axx = np.empty((nc, nc)); axy = np.empty((nc, nc)); ayy = np.empty((nc, nc))
            for jc in range(nc):
                for ic in range(nc):
                    axx[jc, ic], axy[jc, ic], ayy[jc, ic] = mg_decimate_general(
                        ta[jc, ic], tc[jc, ic], tb[jc, ic])
    else:
        raise PlanError(f"unknown method {method!r}")
    axx = np.asarray(axx, dtype=float); axy = np.asarray(axy, dtype=float)
    ayy = np.asarray(ayy, dtype=float)
    bad = ~((axx > 0) & (ayy > 0) & (axx * ayy - axy ** 2 > 0))
    if np.any(bad):
        jc, ic = np.argwhere(bad)[0]
        raise DecimationError(
            f"{method} produced a non-positive-definite tensor at coarse cell "
            f"(j={jc}, i={ic}) out of {int(bad.sum())} violations")
    return TensorField(GridShape(nc), axx, axy, ayy)


def run_plan(field: TensorField, plan: UpscalePlan, as_printed: bool = False,
             timings: list | None = None) -> TensorField:
    """Apply K sweeps down to plan.n_target, recording per-sweep wall time."""
    k = plan.sweeps(field.shape.n)
    out = field
    for _ in range(k):
        t0 = time.perf_counter()
        out = decimate_once(out, plan.method, plan.n_block, as_printed=as_printed)
        if timings is not None:
            timings.append(time.perf_counter() - t0)
    return out


def pyramid(field: TensorField, method: str, n_block: int, targets,
            as_printed: bool = False) -> dict[int, TensorField]:
    """Sweep one pyramid, capturing the intermediate field at each target size."""
    want = sorted(set(int(t) for t in targets), reverse=True)
    for t in want:
        UpscalePlan(method, n_block, t).sweeps(field.shape.n)  # validates schedule
    out = {}
    cur = field
    while want:
        cur = decimate_once(cur, method, n_block, as_printed=as_printed)
        if cur.shape.n == want[0]:
            out[want.pop(0)] = cur
        if cur.shape.n < 2 * n_block and want:
            raise PlanError("cannot reach remaining targets")
    return out


def cost_model(n: int, n_block: int, n_target: int, method: str) -> float:
    """Operation-count scaling of one full plan (reporting only)."""
    k = UpscalePlan(method, n_block, n_target).sweeps(n)
    geom = sum(float(n_block) ** (-2 * i) for i in range(k))
    per_block = n_block ** 4 if method == "MG" else n_block ** 2
    return n * n * per_block * geom
