"""Uniform periodic grids, semiclassical Fourier transforms, and phase-space densities.

Conventions
-----------
* Nodes on axis ``i`` are ``x = -L_i + m * dx_i`` for ``m = 0 .. N_i - 1`` with
  ``dx_i = 2 L_i / N_i`` (the endpoints ``+-L_i`` are identified).
* The semiclassical Fourier transform is unitary,

  ``(F f)(xi) = (2 pi hbar)^{-n/2} \\int exp(-i sign x.xi / hbar) f(x) dx``,

  realized on the discrete momentum lattice ``xi = hbar * (pi/L) * j``.  The
  conjugate momentum lattice is itself a grid in the sense above, and
  conjugation is an involution, so forward followed by inverse is exact.
* ``husimi_transform`` uses the standard coherent state
  ``g_z = (pi hbar)^{-n/4} exp(i xi_z.(x-x_z)/hbar) exp(-|x-x_z|^2/2hbar)``
  so that ``(2 pi hbar)^{-n} \\int |<g_z, f>|^2 dz = |f|^2``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

__all__ = [
    "Grid",
    "Field",
    "PhasePoint",
    "AliasingWarning",
    "DiagnosticError",
    "make_grid",
    "conjugate_grid",
    "inner_product",
    "norm",
    "semiclassical_fourier",
    "nyquist_mass",
    "boundary_mass",
    "evaluate_periodic",
    "coherent_field",
    "husimi_transform",
    "husimi_map",
    "spectral_gradient",
]


class AliasingWarning(UserWarning):
    """Significant spectral mass at the Nyquist shell of a grid."""


class DiagnosticError(RuntimeError):
    """A resolution/decay diagnostic exceeded its hard threshold."""


NYQUIST_WARN = 1e-8
NYQUIST_SHELL = 0.75  # fraction of the Nyquist radius where the shell starts


@dataclass(frozen=True)
class Grid:
    """Uniform periodic grid on a box ``prod_i [-L_i, L_i)`` in R^n.

    Attributes
    ----------
    half_widths : tuple of float
        Box half-widths ``L_i > 0``.
    sizes : tuple of int
        Points per axis; each a power of two, at least 8.
    """

    half_widths: tuple[float, ...]
    sizes: tuple[int, ...]

    @property
    def dim(self) -> int:
        return len(self.sizes)

    @property
    def spacing(self) -> tuple[float, ...]:
        return tuple(2.0 * L / N for L, N in zip(self.half_widths, self.sizes))

    def axis(self, i: int) -> np.ndarray:
        """Node coordinates along axis ``i``."""
        L, N = self.half_widths[i], self.sizes[i]
        return -L + (2.0 * L / N) * np.arange(N)

    def axes(self) -> list[np.ndarray]:
        return [self.axis(i) for i in range(self.dim)]

    def meshgrid(self) -> list[np.ndarray]:
        return list(np.meshgrid(*self.axes(), indexing="ij"))

    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    def nyquist_momentum(self, hbar: float) -> tuple[float, ...]:
        """Largest resolvable semiclassical momentum per axis, ``pi hbar N_i / (2 L_i)``."""
        return tuple(np.pi * hbar * N / (2.0 * L) for L, N in zip(self.half_widths, self.sizes))


def make_grid(half_widths, sizes) -> Grid:
    """Build a :class:`Grid`, validating the box and size contracts."""
    half_widths = tuple(float(L) for L in np.atleast_1d(half_widths))
    sizes = tuple(int(N) for N in np.atleast_1d(sizes))
    if len(half_widths) != len(sizes):
        raise ValueError("half_widths and sizes must have the same length")
    for L in half_widths:
        if not L > 0:
            raise ValueError(f"half-width must be positive, got {L}")
    for N in sizes:
        if N < 8 or (N & (N - 1)) != 0:
            raise ValueError(f"grid size must be a power of two >= 8, got {N}")
    return Grid(half_widths, sizes)


def conjugate_grid(grid: Grid, hbar: float) -> Grid:
    """Momentum-side grid of the semiclassical transform (an involution)."""
    return Grid(grid.nyquist_momentum(hbar), grid.sizes)


@dataclass(frozen=True)
class Field:
    """Complex samples on a :class:`Grid` at a fixed value of hbar."""

    grid: Grid
    hbar: float
    values: np.ndarray

    def __post_init__(self):
        if self.hbar <= 0:
            raise ValueError("hbar must be positive")
        vals = np.ascontiguousarray(self.values, dtype=complex)
        if vals.shape != self.grid.sizes:
            raise ValueError(f"values shape {vals.shape} does not match grid sizes {self.grid.sizes}")
        if not np.all(np.isfinite(vals.view(float))):
            raise ValueError("field values must be finite")
        object.__setattr__(self, "values", vals)


@dataclass(frozen=True)
class PhasePoint:
    """A point (x, xi) of phase space T*R^n."""

    x: np.ndarray
    xi: np.ndarray

    def __post_init__(self):
        x = np.atleast_1d(np.asarray(self.x, dtype=float))
        xi = np.atleast_1d(np.asarray(self.xi, dtype=float))
        if x.shape != xi.shape:
            raise ValueError("x and xi must have the same length")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(xi))):
            raise ValueError("phase point components must be finite")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "xi", xi)

    @property
    def dim(self) -> int:
        return self.x.size


def _check_same_grid(f: Field, g: Field):
    if f.grid != g.grid:
        raise ValueError("fields live on different grids")
    if f.hbar != g.hbar:
        raise ValueError(f"fields carry different hbar: {f.hbar} vs {g.hbar}")


def inner_product(f: Field, g: Field) -> complex:
    """Riemann-sum L2 pairing ``sum conj(f) g * prod dx_i``."""
    _check_same_grid(f, g)
    return complex(np.vdot(f.values, g.values) * f.grid.cell_volume())


def norm(f: Field) -> float:
    return float(np.sqrt(max(inner_product(f, f).real, 0.0)))


def _fourier_phases(grid: Grid, sign: int):
    """Per-axis pre/post phase vectors turning the node-ordered transform into an FFT.

    With nodes x_m = -L + m dx and ascending momentum nodes k_j = (j - N/2) pi/L,
    exp(-i sign x_m k_j) = exp(i sign pi (j - N/2)) exp(-2 pi i sign m j / N) exp(i sign pi m).
    """
    pre, post = [], []
    for L, N in zip(grid.half_widths, grid.sizes):
        m = np.arange(N)
        pre.append(np.exp(1j * sign * np.pi * m))
        post.append(np.exp(1j * sign * np.pi * (m - N / 2.0)))
    return pre, post


def _apply_outer(values: np.ndarray, vecs: list[np.ndarray]) -> np.ndarray:
    out = values
    for i, v in enumerate(vecs):
        shape = [1] * values.ndim
        shape[i] = v.size
        out = out * v.reshape(shape)
    return out


def semiclassical_fourier(f: Field, sign: int = 1) -> Field:
    """Unitary semiclassical Fourier transform of a field.

    Parameters
    ----------
    f : Field
    sign : {+1, -1}
        Kernel ``exp(-i sign x.xi / hbar)``; ``+1`` then ``-1`` is the identity
        to machine precision.

    Returns
    -------
    Field on the conjugate (momentum) grid, node-ordered with ascending xi.
    """
    if sign not in (1, -1):
        raise ValueError("sign must be +1 or -1")
    mass = nyquist_mass(f)
    if mass > NYQUIST_WARN:
        warnings.warn(
            f"relative spectral mass {mass:.2e} at the Nyquist shell; "
            "the grid may under-resolve this field",
            AliasingWarning,
            stacklevel=2,
        )
    pre, post = _fourier_phases(f.grid, sign)
    work = _apply_outer(f.values, pre)
    if sign == 1:
        work = np.fft.fftn(work)
    else:
        work = np.fft.ifftn(work) * float(np.prod(f.grid.sizes))
    work = _apply_outer(work, post)
    n = f.grid.dim
    scale = f.grid.cell_volume() * (2.0 * np.pi * f.hbar) ** (-n / 2.0)
    return Field(conjugate_grid(f.grid, f.hbar), f.hbar, work * scale)


def _spectral_power(f: Field) -> np.ndarray:
    return np.abs(np.fft.fftn(f.values)) ** 2


def nyquist_mass(f: Field) -> float:
    """Relative spectral mass in the Nyquist shell (top quarter of each frequency axis)."""
    power = _spectral_power(f)
    total = power.sum()
    if total == 0.0:
        return 0.0
    mask = np.zeros(f.grid.sizes, dtype=bool)
    for i, N in enumerate(f.grid.sizes):
        k = np.fft.fftfreq(N, d=1.0 / N)  # integer frequencies
        shell = np.abs(k) >= NYQUIST_SHELL * (N / 2.0)
        shape = [1] * f.grid.dim
        shape[i] = N
        mask |= shell.reshape(shape)
    return float(power[mask].sum() / total)


def boundary_mass(f: Field, margin: float = 1.0 / 16.0) -> float:
    """Relative mass within ``margin`` (fraction of box width) of any box edge."""
    power = np.abs(f.values) ** 2
    total = power.sum()
    if total == 0.0:
        return 0.0
    mask = np.zeros(f.grid.sizes, dtype=bool)
    for i, (L, N) in enumerate(zip(f.grid.half_widths, f.grid.sizes)):
        x = f.grid.axis(i)
        edge = np.abs(x) >= L * (1.0 - 2.0 * margin)
        shape = [1] * f.grid.dim
        shape[i] = N
        mask |= edge.reshape(shape)
    return float(power[mask].sum() / total)


def evaluate_periodic(values: np.ndarray, grid: Grid, points: np.ndarray, chunk: int = 4096) -> np.ndarray:
    """Band-limited (trigonometric) interpolation of grid samples at arbitrary points.

    Evaluates the unique trigonometric interpolant through the samples at
    ``points`` (shape ``(P, n)`` or ``(P,)`` in one dimension).  Points outside
    the box evaluate the periodic extension.
    """
    points = np.asarray(points, dtype=float)
    if points.ndim == 1:
        points = points[:, None]
    if points.shape[1] != grid.dim:
        raise ValueError(f"points have dimension {points.shape[1]}, grid has {grid.dim}")
    fhat = np.fft.fftn(values) / float(np.prod(grid.sizes))
    P = points.shape[0]
    out = np.empty(P, dtype=complex)
    for start in range(0, P, chunk):
        sl = slice(start, min(start + chunk, P))
        pts = points[sl]
        work = None
        for i in range(grid.dim):
            L, N = grid.half_widths[i], grid.sizes[i]
            k = np.fft.fftfreq(N, d=1.0 / N) * (np.pi / L)
            A = np.exp(1j * np.outer(pts[:, i] + L, k))
            if work is None:
                # contract the first axis of fhat against A
                work = np.tensordot(A, fhat, axes=(1, 0))  # (p, rest...)
            elif i < grid.dim - 1:
                work = np.einsum("pk,pk...->p...", A, work)
            else:
                work = np.einsum("pk,pk->p", A, work)
        out[sl] = np.asarray(work).reshape(-1)
    return out


def spectral_gradient(values: np.ndarray, grid: Grid, axis: int) -> np.ndarray:
    """Derivative along one axis by Fourier multiplication (exact for band-limited data)."""
    N = grid.sizes[axis]
    L = grid.half_widths[axis]
    k = np.fft.fftfreq(N, d=1.0 / N) * (np.pi / L)
    shape = [1] * grid.dim
    shape[axis] = N
    return np.fft.ifft(1j * k.reshape(shape) * np.fft.fft(values, axis=axis), axis=axis)


def coherent_field(grid: Grid, hbar: float, z: PhasePoint) -> Field:
    """The standard normalized coherent state ``g_z`` sampled on ``grid``."""
    if z.dim != grid.dim:
        raise ValueError("phase point dimension does not match grid")
    xs = grid.meshgrid()
    n = grid.dim
    phase = np.zeros(grid.sizes)
    quad = np.zeros(grid.sizes)
    for i in range(n):
        dx = xs[i] - z.x[i]
        phase = phase + z.xi[i] * dx
        quad = quad + dx * dx
    vals = (np.pi * hbar) ** (-n / 4.0) * np.exp(1j * phase / hbar - quad / (2.0 * hbar))
    return Field(grid, hbar, vals)


def husimi_transform(f: Field, z: PhasePoint) -> float:
    """Husimi density ``|<g_z, f>|^2`` at a single phase point."""
    g = coherent_field(f.grid, f.hbar, z)
    return float(np.abs(inner_product(g, f)) ** 2)


def husimi_map(f: Field, x_axes: list[np.ndarray], xi_points: np.ndarray) -> np.ndarray:
    """Husimi density on a product lattice, one FFT convolution per momentum point.

    Parameters
    ----------
    f : Field (any dimension; cost scales with ``len(xi_points)`` FFTs)
    x_axes : per-axis position lattice; each must be a subset of grid nodes
        (values are snapped to the nearest node).
    xi_points : array (Q, n) of momentum lattice points.

    Returns
    -------
    Array of shape ``(len(x_axes[0]), ..., Q)`` with ``|<g_z, f>|^2``.
    """
    grid, hbar, n = f.grid, f.hbar, f.grid.dim
    xi_points = np.atleast_2d(np.asarray(xi_points, dtype=float))
    idx = []
    for i, ax in enumerate(x_axes):
        nodes = grid.axis(i)
        j = np.rint((np.asarray(ax) - nodes[0]) / grid.spacing[i]).astype(int) % grid.sizes[i]
        idx.append(j)
    # Gaussian convolution kernel on the periodic box, centered at node 0
    kernel = np.ones(grid.sizes)
    for i in range(n):
        x = grid.axis(i)
        L = grid.half_widths[i]
        d = np.minimum(np.abs(x - x[0]), 2 * L - np.abs(x - x[0]))  # periodic distance
        shape = [1] * n
        shape[i] = grid.sizes[i]
        kernel = kernel * np.exp(-(d**2) / (2.0 * hbar)).reshape(shape)
    khat = np.fft.fftn(kernel)
    amp = (np.pi * hbar) ** (-n / 4.0) * grid.cell_volume()
    xs = grid.meshgrid()
    out_shape = tuple(len(j) for j in idx) + (xi_points.shape[0],)
    out = np.empty(out_shape)
    mesh = np.ix_(*idx)
    for q, xi in enumerate(xi_points):
        mod = f.values * np.exp(-1j * sum(xi[i] * xs[i] for i in range(n)) / hbar)
        conv = np.fft.ifftn(np.fft.fftn(mod) * khat)
        out[..., q] = np.abs(amp * conv[mesh]) ** 2
    return out
