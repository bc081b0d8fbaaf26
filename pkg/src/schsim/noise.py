"""Truncated cylindrical-Wiener increments: sampling, coarsening, shifting.

Strong-rate studies compare discretizations pathwise, so every entry of the
increment matrix must be a pure function of (seed, mode, step).  Each mode row
is drawn from its own counter-based Philox stream keyed by (seed, mode); a
longer or wider path therefore contains every shorter/narrower one exactly,
and time-coarsening is plain summation of existing entries.

Block sums in ``coarsen`` reduce adjacent pairs level by level (odd tail
carried), which makes dyadic factor chains bitwise associative:
coarsen(r1*r2) == coarsen(r2) after coarsen(r1) whenever all factors are
powers of two.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np
from numpy.random import Generator, Philox

from .spectral import DirichletBasis

_MAGIC = b"SCHN1"
_U64 = np.uint64


@dataclass(frozen=True, eq=False)
class NoisePath:
    """Matrix of Brownian increments, one row per noise mode, one column per step."""

    increments: np.ndarray  # shape (n_modes, n_steps), entries ~ Normal(0, dt)
    dt: float
    seed: int
    lineage: tuple[tuple, ...]

    @property
    def n_modes(self) -> int:
        return self.increments.shape[0]

    @property
    def n_steps(self) -> int:
        return self.increments.shape[1]

    @property
    def root(self) -> tuple:
        """Identity of the originally sampled path this one derives from."""
        return self.lineage[0]

    def fingerprint(self) -> tuple:
        return (self.seed, self.n_modes, self.n_steps, self.dt, self.lineage)


def sample(seed: int, n_modes: int, n_steps: int, dt: float) -> NoisePath:
    """Draw i.i.d. Normal(0, dt) increments, entry (j, k) keyed by (seed, j, k)."""
    if n_modes < 1 or n_steps < 1:
        raise ValueError(f"need n_modes >= 1 and n_steps >= 1, got {n_modes}, {n_steps}")
    if dt <= 0:
        raise ValueError(f"step size must be positive, got {dt}")
    seed = int(seed)
    if not 0 <= seed < 2**64:
        raise ValueError("seed must fit in an unsigned 64-bit integer")
    rows = np.empty((n_modes, n_steps))
    scale = math.sqrt(dt)
    for j in range(1, n_modes + 1):
        key = np.array([seed, j], dtype=_U64)
        rows[j - 1] = Generator(Philox(key=key)).standard_normal(n_steps)
    rows *= scale
    rows.setflags(write=False)
    return NoisePath(rows, float(dt), seed, (("sample", seed, n_modes, n_steps, float(dt)),))


def _adjacent_pair_sum(blocks: np.ndarray) -> np.ndarray:
    """Reduce the last axis by adding adjacent pairs per level, carrying odd tails."""
    cur = blocks
    while cur.shape[-1] > 1:
        n = cur.shape[-1]
        half = n // 2
        s = cur[..., 0 : 2 * half : 2] + cur[..., 1 : 2 * half : 2]
        if n % 2:
            s = np.concatenate([s, cur[..., -1:]], axis=-1)
        cur = s
    return cur[..., 0]


def coarsen(path: NoisePath, time_factor: int, mode_cut: int | None = None) -> NoisePath:
    """Sum consecutive increments in blocks of ``time_factor`` and drop high modes."""
    if time_factor < 1:
        raise ValueError(f"time factor must be >= 1, got {time_factor}")
    if path.n_steps % time_factor != 0:
        raise ValueError(f"time factor {time_factor} does not divide {path.n_steps} steps")
    if mode_cut is None:
        mode_cut = path.n_modes
    if not 1 <= mode_cut <= path.n_modes:
        raise ValueError(f"mode cut {mode_cut} outside 1..{path.n_modes}")
    kept = path.increments[:mode_cut]
    if time_factor == 1:
        out = kept.copy()
    else:
        blocks = kept.reshape(mode_cut, path.n_steps // time_factor, time_factor)
        out = _adjacent_pair_sum(blocks)
    out.setflags(write=False)
    lineage = path.lineage + (("coarsen", time_factor, mode_cut),)
    return NoisePath(out, path.dt * time_factor, path.seed, lineage)


# ---------------------------------------------------------------------------
# Deterministic noise shift used by the density-support probes
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ShiftSpec:
    """Shift of the noise by smoothed indicator bumps around d spatial points.

    Each bump is supported on the time window [anchor_time - window, anchor_time]
    and the spatial interval (x_i - w, x_i + w) with w = window**width_exponent,
    and is normalized by the Green-kernel mass c_i of that window.
    """

    shifts: tuple[float, ...]
    points: tuple[float, ...]
    anchor_time: float
    window: float
    width_exponent: float = 0.5

    def __post_init__(self):
        if len(self.shifts) != len(self.points):
            raise ValueError("need one shift magnitude per point")
        if not self.points:
            raise ValueError("need at least one point")
        if self.window <= 0:
            raise ValueError(f"window length must be positive, got {self.window}")
        if not 0.25 < self.width_exponent < 1.0:
            raise ValueError(f"width exponent must lie in (1/4, 1), got {self.width_exponent}")

    @property
    def half_width(self) -> float:
        return self.window**self.width_exponent


def _validate_windows(spec: ShiftSpec, length: float) -> None:
    w = spec.half_width
    pts = sorted(spec.points)
    for x in pts:
        if not (x - w > 0.0 and x + w < length):
            raise ValueError(f"spatial window around {x} leaves the domain (0, {length})")
    for a, b in zip(pts, pts[1:]):
        if b - w <= a + w:
            raise ValueError(f"spatial windows around {a} and {b} overlap")


def window_mode_integral(x: float, half_width: float, j: int, length: float) -> float:
    """Integral of e_j over (x - w, x + w), by the antiderivative of sin."""
    c = j * math.pi / length
    return math.sqrt(2.0 / length) / c * (math.cos(c * (x - half_width)) - math.cos(c * (x + half_width)))


def window_normalizer(spec: ShiftSpec, i: int, length: float, rel_tol: float = 1e-10) -> float:
    """Green-kernel mass of window i: time integral done in closed form per mode,
    space integral by the sine antiderivative, series truncated by its j^-5 tail."""
    x = spec.points[i]
    w = spec.half_width
    eps = spec.window
    total = 0.0
    term_scale = math.sqrt(2.0 / length)
    j = 1
    block = 64
    while True:
        for jj in range(j, j + block):
            mu = (jj * math.pi / length) ** 4  # lambda_j^2
            time_part = (1.0 - math.exp(-mu * eps)) / mu
            total += time_part * term_scale * math.sin(jj * math.pi * x / length) * window_mode_integral(x, w, jj, length)
        j += block
        # |term_jj| <= (L/pi)^4 * (4/pi) * jj^-5, so the tail past J is below
        # (L/pi)^4 * (4/pi) * J^-4 / 4; the bound here drops the final /4.
        tail = (length / math.pi) ** 4 * (4.0 / math.pi) * (j - 1) ** -4.0
        if tail <= rel_tol * max(abs(total), 1e-300):
            break
        if j > 1_000_000:
            raise RuntimeError("window normalizer series failed to converge")
    if total <= 0:
        raise ValueError(f"window around {x} has nonpositive Green mass {total:.3e}")
    return total


def shift_mode_projection(spec: ShiftSpec, i: int, j: int, length: float) -> float:
    """Spatial projection of normalized bump i onto mode j."""
    return window_mode_integral(spec.points[i], spec.half_width, j, length) / window_normalizer(spec, i, length)


def shift(path: NoisePath, spec: ShiftSpec, basis: DirichletBasis) -> NoisePath:
    """Add the deterministic drift of the bump shift to the covered increments.

    Every step whose interval lies fully inside [anchor_time - window,
    anchor_time] receives shift_i * <bump_i, e_j> * dt on mode j, summed over i.
    """
    _validate_windows(spec, basis.length)
    horizon = path.n_steps * path.dt
    t0 = spec.anchor_time - spec.window
    if t0 < -1e-12 * path.dt or spec.anchor_time > horizon * (1 + 1e-12):
        raise ValueError(
            f"time window [{t0}, {spec.anchor_time}] not contained in [0, {horizon}]"
        )
    k_lo = int(math.ceil(t0 / path.dt - 1e-9))
    k_hi = int(math.floor(spec.anchor_time / path.dt + 1e-9))  # steps k_lo..k_hi-1 are covered
    out = path.increments.copy()
    norms = [window_normalizer(spec, i, basis.length) for i in range(len(spec.points))]
    j = np.arange(1, path.n_modes + 1)
    drift = np.zeros(path.n_modes)
    for i, z in enumerate(spec.shifts):
        if z == 0.0:
            continue
        proj = np.array(
            [window_mode_integral(spec.points[i], spec.half_width, jj, basis.length) for jj in j]
        )
        drift += z * proj / norms[i]
    if k_hi > k_lo:
        out[:, k_lo:k_hi] += drift[:, None] * path.dt
    out.setflags(write=False)
    lineage = path.lineage + (
        ("shift", tuple(spec.shifts), tuple(spec.points), spec.anchor_time, spec.window, spec.width_exponent),
    )
    return NoisePath(out, path.dt, path.seed, lineage)


# ---------------------------------------------------------------------------
# Binary replay format
# ---------------------------------------------------------------------------

def save_noise(path_obj: NoisePath, file_path) -> None:
    """Header: magic 'SCHN1', u64 seed, u32 n_modes, u32 n_steps, f64 dt (little
    endian), then row-major f64 increments."""
    header = _MAGIC + struct.pack(
        "<QIId", path_obj.seed, path_obj.n_modes, path_obj.n_steps, path_obj.dt
    )
    with open(file_path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(path_obj.increments, dtype="<f8").tobytes())


def load_noise(file_path) -> NoisePath:
    with open(file_path, "rb") as fh:
        magic = fh.read(5)
        if magic != _MAGIC:
            raise ValueError(f"not a noise dump (bad magic {magic!r})")
        seed, n_modes, n_steps, dt = struct.unpack("<QIId", fh.read(24))
        data = np.frombuffer(fh.read(8 * n_modes * n_steps), dtype="<f8")
    if data.size != n_modes * n_steps:
        raise ValueError("noise dump truncated")
    inc = data.reshape(n_modes, n_steps).astype(float)
    inc.setflags(write=False)
    return NoisePath(inc, float(dt), int(seed), (("load", str(file_path)),))
