"""Symplectic generator words and their quantized (metaplectic) action on profiles.

Block convention: vectors of R^{2l} are ordered (u, mu) and matrices written
[[A, B], [C, D]], so the canonical form matrix is J = [[0, I], [-I, 0]].

Generators and their quantizations (all phases projective):

* ``TypeI(B)``   matrix ``[[B, 0], [0, B^-T]]``      psi -> |det B|^{-1/2} psi(B^{-1} u)
* ``TypeII(C)``  lower shear ``[[I, 0], [C, I]]``    psi -> exp(i u.Cu / 2) psi
* ``TypeIII``    ``J``                               psi -> (2 pi)^{-l/2} int exp(-i u.v) psi(v) dv

``TypeII`` is taken as the lower shear because its quantization is an exact
pointwise multiplication on the grid; the upper shear is reached by conjugating
with ``TypeIII``.  Words are listed in matrix-product order, so the rightmost
generator acts first.

The infinitesimal Heisenberg action is
``drho(a, b, c) = (1/i) a.d/du - (b.u) + i c`` and the quantized translations
are ``exp(i drho(a, b))``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np

from .grid import DiagnosticError, Field, Grid, evaluate_periodic, nyquist_mass, spectral_gradient
from .states import Profile

__all__ = [
    "TypeI",
    "TypeII",
    "TypeIII",
    "GeneratorWord",
    "sp_J",
    "is_symplectic",
    "sp_factor",
    "word_inverse",
    "mp_apply",
    "heisenberg_drho",
    "heisenberg_weyl",
    "quad_generator_apply",
    "hessian_flow_matrix",
    "random_symplectic",
]

SYMPLECTIC_TOL = 1e-10
MP_ALIAS_TOL = 1e-6


# -- generators ----------------------------------------------------------------


@dataclass(frozen=True)
class TypeI:
    B: np.ndarray

    def __post_init__(self):
        B = np.atleast_2d(np.asarray(self.B, dtype=float))
        if abs(np.linalg.det(B)) < 1e-14:
            raise ValueError("TypeI block must be invertible")
        object.__setattr__(self, "B", B)

    def matrix(self) -> np.ndarray:
        Binv_t = np.linalg.inv(self.B).T
        l = self.B.shape[0]
        out = np.zeros((2 * l, 2 * l))
        out[:l, :l] = self.B
        out[l:, l:] = Binv_t
        return out


@dataclass(frozen=True)
class TypeII:
    C: np.ndarray

    def __post_init__(self):
        C = np.atleast_2d(np.asarray(self.C, dtype=float))
        if np.max(np.abs(C - C.T)) > 1e-10 * max(1.0, np.max(np.abs(C))):
            raise ValueError("TypeII block must be symmetric")
        object.__setattr__(self, "C", 0.5 * (C + C.T))

    def matrix(self) -> np.ndarray:
        l = self.C.shape[0]
        out = np.eye(2 * l)
        out[l:, :l] = self.C
        return out


@dataclass(frozen=True)
class TypeIII:
    l: int

    def matrix(self) -> np.ndarray:
        return sp_J(self.l)


Generator = Union[TypeI, TypeII, TypeIII]


@dataclass(frozen=True)
class GeneratorWord:
    """An ordered product of generators (matrix-product order)."""

    factors: tuple[Generator, ...]

    def matrix(self) -> np.ndarray:
        if not self.factors:
            raise ValueError("empty word has no intrinsic dimension; use matrix_for(l)")
        out = self.factors[0].matrix()
        for g in self.factors[1:]:
            out = out @ g.matrix()
        return out

    def matrix_for(self, l: int) -> np.ndarray:
        return self.matrix() if self.factors else np.eye(2 * l)

    def __len__(self) -> int:
        return len(self.factors)


def sp_J(l: int) -> np.ndarray:
    out = np.zeros((2 * l, 2 * l))
    out[:l, l:] = np.eye(l)
    out[l:, :l] = -np.eye(l)
    return out


def is_symplectic(S: np.ndarray, tol: float = SYMPLECTIC_TOL) -> bool:
    S = np.asarray(S, dtype=float)
    if S.ndim != 2 or S.shape[0] != S.shape[1] or S.shape[0] % 2:
        return False
    J = sp_J(S.shape[0] // 2)
    return bool(np.max(np.abs(S.T @ J @ S - J)) <= tol * max(1.0, np.max(np.abs(S)) ** 2))


def _blocks(S: np.ndarray, l: int):
    return S[:l, :l], S[:l, l:], S[l:, :l], S[l:, l:]


def _sym(M: np.ndarray) -> np.ndarray:
    return 0.5 * (M + M.T)


def _main_word(S: np.ndarray, l: int) -> list[Generator]:
    """S = TypeII(D B^-1) TypeI(B) TypeIII TypeII(B^-1 A), valid for invertible B."""
    A, B, C, D = _blocks(S, l)
    Binv = np.linalg.inv(B)
    return [TypeII(_sym(D @ Binv)), TypeI(B), TypeIII(l), TypeII(_sym(Binv @ A))]


def sp_factor(S: np.ndarray) -> GeneratorWord:
    """Factor a symplectic matrix into at most six generators.

    Pivot rule (deterministic): use the direct factorization when the B block
    is the best-conditioned pivot available; otherwise right-multiply by
    ``TypeII(tI) . TypeIII`` for the first ``t`` in a fixed list that makes
    ``A + tB`` invertible (such ``t`` exists: ``det(A + tB)`` is a nonzero
    polynomial of degree <= l for a symplectic top block row) and undo the
    move inside the word.
    """
    S = np.asarray(S, dtype=float)
    if not is_symplectic(S):
        raise ValueError("matrix is not symplectic within tolerance")
    l = S.shape[0] // 2
    A, B, C, D = _blocks(S, l)

    # short words for pure generators
    if np.max(np.abs(S - np.eye(2 * l))) <= SYMPLECTIC_TOL:
        return GeneratorWord(())
    if np.max(np.abs(B)) <= SYMPLECTIC_TOL and np.max(np.abs(C)) <= SYMPLECTIC_TOL:
        return GeneratorWord((TypeI(A),))
    if (
        np.max(np.abs(B)) <= SYMPLECTIC_TOL
        and np.max(np.abs(A - np.eye(l))) <= SYMPLECTIC_TOL
        and np.max(np.abs(D - np.eye(l))) <= SYMPLECTIC_TOL
    ):
        return GeneratorWord((TypeII(_sym(C)),))
    if np.max(np.abs(S - sp_J(l))) <= SYMPLECTIC_TOL:
        return GeneratorWord((TypeIII(l),))

    def quality(M):
        return float(np.linalg.svd(M, compute_uv=False)[-1])

    qB = quality(B)
    ts = [0.0, 1.0, -1.0, 2.0, -2.0, 0.5, -0.5][: 2 * l + 3]
    qts = [(quality(A + t * B), t) for t in ts]
    best_q, best_t = max(qts, key=lambda p: p[0])

    if qB >= 0.25 * best_q and qB > SYMPLECTIC_TOL:
        word = _main_word(S, l)
    else:
        if best_q <= SYMPLECTIC_TOL:
            raise ValueError("no invertible pivot found; matrix badly scaled")
        t = best_t
        shear = TypeII(t * np.eye(l)).matrix()
        W = S @ shear @ sp_J(l)
        inner = _main_word(W, l)
        F, G, E = inner[0].C, inner[1].B, inner[3].C
        # S = [L(F) I(G) J L(E)] (L(t I) J)^{-1}; pushing J^{-1} = I(-I) J through
        # L(E) and merging with I(G) yields the six-generator form below.
        word = [TypeII(F), TypeI(-G), TypeIII(l), TypeII(E), TypeIII(l)]
        if t != 0.0:
            word.append(TypeII(-t * np.eye(l)))
    out = GeneratorWord(tuple(word))
    if len(out) > 6:
        raise AssertionError("factorization exceeded six generators")
    err = np.max(np.abs(out.matrix_for(l) - S))
    if err > SYMPLECTIC_TOL * max(1.0, np.max(np.abs(S))):
        raise AssertionError(f"factorization residual {err:.2e} exceeds tolerance")
    return out


def word_inverse(word: GeneratorWord) -> GeneratorWord:
    """Generator-wise inverse; composing with the original is the exact identity."""
    out: list[Generator] = []
    for g in reversed(word.factors):
        if isinstance(g, TypeI):
            out.append(TypeI(np.linalg.inv(g.B)))
        elif isinstance(g, TypeII):
            out.append(TypeII(-g.C))
        else:
            out.extend([TypeIII(g.l), TypeI(-np.eye(g.l))])
    return GeneratorWord(tuple(out))


# -- quantized actions -----------------------------------------------------------


def _profile_mesh(grid: Grid):
    return np.meshgrid(*grid.axes(), indexing="ij")


def _classical_fourier_axis(values: np.ndarray, grid: Grid, axis: int) -> np.ndarray:
    """Unitary classical Fourier transform along one axis, output on the same axis grid."""
    u = grid.axis(axis)
    du = grid.spacing[axis]
    kernel = np.exp(-1j * np.outer(u, u)) * (du / np.sqrt(2.0 * np.pi))
    return np.moveaxis(np.tensordot(kernel, np.moveaxis(values, axis, 0), axes=(1, 0)), 0, axis)


def _check_alias(values: np.ndarray, grid: Grid, stage: str):
    mass = nyquist_mass(Field(grid, 1.0, values))
    if mass > MP_ALIAS_TOL:
        raise DiagnosticError(
            f"intermediate aliasing ({mass:.2e} Nyquist mass) after {stage}; "
            "enlarge the profile grid"
        )


def _apply_generator(g: Generator, prof: Profile, check: bool) -> Profile:
    grid = prof.ugrid
    l = grid.dim
    if isinstance(g, TypeI):
        if g.B.shape[0] != l:
            raise ValueError("generator dimension mismatch")
        mesh = _profile_mesh(grid)
        pts = np.stack([m.ravel() for m in mesh], axis=-1) @ np.linalg.inv(g.B).T
        vals = evaluate_periodic(prof.values, grid, pts).reshape(grid.sizes)
        vals = vals / np.sqrt(abs(np.linalg.det(g.B)))
    elif isinstance(g, TypeII):
        mesh = _profile_mesh(grid)
        quad = np.zeros(grid.sizes)
        for i in range(l):
            for j in range(l):
                if g.C[i, j] != 0.0:
                    quad = quad + g.C[i, j] * mesh[i] * mesh[j]
        vals = np.exp(0.5j * quad) * prof.values
    else:
        vals = prof.values
        for axis in range(l):
            vals = _classical_fourier_axis(vals, grid, axis)
    if check:
        _check_alias(vals, grid, type(g).__name__)
    return Profile(ugrid=grid, values=vals, base_point=prof.base_point)


def mp_apply(word: GeneratorWord, prof: Profile, check_aliasing: bool = True) -> Profile:
    """Quantized action of a generator word (rightmost factor acts first).

    The result is the metaplectic action of ``word.matrix()`` up to a global
    unit phase; norms are preserved to grid accuracy.
    """
    out = prof
    for g in reversed(word.factors):
        out = _apply_generator(g, out, check_aliasing)
    return out


# -- Heisenberg action -------------------------------------------------------------


def heisenberg_drho(xi, prof: Profile) -> Profile:
    """Infinitesimal Heisenberg action ``(1/i) a.d/du - (b.u) + i c`` on a profile.

    ``xi`` is ``(a, b)`` or ``(a, b, c)`` with complex-linear extension in
    ``(a, b)``; with ``a = dp/dmu(s)`` and ``b = -dp/du(s)`` this is exactly the
    first transport-equation symbol.
    """
    a, b = np.atleast_1d(xi[0]).astype(complex), np.atleast_1d(xi[1]).astype(complex)
    c = complex(xi[2]) if len(xi) > 2 else 0.0
    grid = prof.ugrid
    if a.size != grid.dim or b.size != grid.dim:
        raise ValueError("Heisenberg element dimension mismatch")
    out = np.zeros(grid.sizes, dtype=complex)
    for j in range(grid.dim):
        if a[j] != 0.0:
            out = out + (a[j] / 1j) * spectral_gradient(prof.values, grid, j)
    mesh = _profile_mesh(grid)
    bu = sum(b[j] * mesh[j] for j in range(grid.dim))
    out = out - bu * prof.values + 1j * c * prof.values
    return Profile(ugrid=grid, values=out, base_point=prof.base_point)


def heisenberg_weyl(xi, prof: Profile) -> Profile:
    """The unitary ``exp(i drho(a, b))`` for real (a, b):
    ``psi(u) -> exp(-i b.(u + a/2)) psi(u + a)``, translation done spectrally."""
    a = np.atleast_1d(np.asarray(xi[0], dtype=float))
    b = np.atleast_1d(np.asarray(xi[1], dtype=float))
    grid = prof.ugrid
    vals = np.fft.fftn(prof.values)
    for j in range(grid.dim):
        N, L = grid.sizes[j], grid.half_widths[j]
        k = np.fft.fftfreq(N, d=1.0 / N) * (np.pi / L)
        shape = [1] * grid.dim
        shape[j] = N
        vals = vals * np.exp(1j * k.reshape(shape) * a[j])
    vals = np.fft.ifftn(vals)
    mesh = _profile_mesh(grid)
    phase = sum(b[j] * (mesh[j] + a[j] / 2.0) for j in range(grid.dim))
    return Profile(ugrid=grid, values=np.exp(-1j * phase) * vals, base_point=prof.base_point)


# -- quadratic (hessian) generators --------------------------------------------------


def quad_generator_apply(huu: np.ndarray, hum: np.ndarray, hmm: np.ndarray, prof: Profile) -> Profile:
    """The quadratic-hamiltonian action used at second transport order:

    ``(1/2) [ u.Huu u  + (2/i) sum Hum_ij u_i d/du_j - sum Hmm_ij d2/du_i du_j ] psi``

    (u's to the left of derivatives; equals the Weyl operator of
    ``q = (1/2)(u,mu).H.(u,mu)`` minus ``(1/2i) tr Hum``).
    """
    huu = np.atleast_2d(np.asarray(huu, dtype=complex))
    hum = np.atleast_2d(np.asarray(hum, dtype=complex))
    hmm = np.atleast_2d(np.asarray(hmm, dtype=complex))
    grid = prof.ugrid
    l = grid.dim
    mesh = _profile_mesh(grid)
    grads = [spectral_gradient(prof.values, grid, j) for j in range(l)]
    out = np.zeros(grid.sizes, dtype=complex)
    for i in range(l):
        for j in range(l):
            if huu[i, j] != 0.0:
                out = out + 0.5 * huu[i, j] * mesh[i] * mesh[j] * prof.values
            if hum[i, j] != 0.0:
                out = out + (hum[i, j] / 1j) * mesh[i] * grads[j]
            if hmm[i, j] != 0.0:
                out = out - 0.5 * hmm[i, j] * spectral_gradient(grads[i], grid, j)
    return Profile(ugrid=grid, values=out, base_point=prof.base_point)


def _expm(M: np.ndarray) -> np.ndarray:
    """Scaling-and-squaring Taylor exponential for small matrices."""
    M = np.asarray(M, dtype=float)
    s = max(0, int(np.ceil(np.log2(max(np.max(np.abs(M)), 1e-300)))) + 2)
    A = M / (2.0**s)
    out = np.eye(M.shape[0])
    term = np.eye(M.shape[0])
    for k in range(1, 19):
        term = term @ A / k
        out = out + term
    for _ in range(s):
        out = out @ out
    return out


def hessian_flow_matrix(huu, hum, hmm, r: float) -> np.ndarray:
    """exp(r K) for the linearized Hamilton flow of q = (1/2)(u,mu).H.(u,mu):
    K = [[Hum^T, Hmm], [-Huu, -Hum]]."""
    huu = np.atleast_2d(np.asarray(huu, dtype=float))
    hum = np.atleast_2d(np.asarray(hum, dtype=float))
    hmm = np.atleast_2d(np.asarray(hmm, dtype=float))
    l = huu.shape[0]
    K = np.zeros((2 * l, 2 * l))
    K[:l, :l] = hum.T
    K[:l, l:] = hmm
    K[l:, :l] = -huu
    K[l:, l:] = -hum
    return _expm(r * K)


# -- random test matrices -------------------------------------------------------------


def random_symplectic(l: int, rng: np.random.Generator, n_factors: int = 4) -> np.ndarray:
    """Product of random moderate generators (the standard Sp test ensemble)."""
    S = np.eye(2 * l)
    for _ in range(n_factors):
        kind = rng.integers(0, 3)
        if kind == 0:
            # invertible block with singular values in [0.8, 1.25]
            Q1, _ = np.linalg.qr(rng.normal(size=(l, l)))
            Q2, _ = np.linalg.qr(rng.normal(size=(l, l)))
            sv = rng.uniform(0.8, 1.25, size=l)
            g: Generator = TypeI(Q1 @ np.diag(sv) @ Q2)
        elif kind == 1:
            C = rng.normal(size=(l, l))
            g = TypeII(0.4 * (C + C.T) / 2.0)
        else:
            g = TypeIII(l)
        S = S @ g.matrix()
    return S
