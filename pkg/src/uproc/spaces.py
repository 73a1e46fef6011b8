"""Sample spaces, probability laws, and the exact finite-space expectation oracle.

A Space bundles a sample space with a law mu.  Finite spaces enumerate their
atoms and support exact integration of any kernel; the continuous variants
(uniform cube, uniform circle, bounded density on a box) support reproducible
sampling only.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .rng import RngStream, as_generator

#: largest number of tuples exact_expect is willing to enumerate
ENUMERATION_BUDGET = 10**7

FINITE = "finite"
CUBE = "cube_uniform"
CIRCLE = "circle_uniform"
DENSITY = "euclidean_density"


@dataclass(frozen=True)
class Space:
    """A sample space plus its law.

    kind        one of finite / cube_uniform / circle_uniform / euclidean_density
    dimension   ambient dimension (finite spaces: dimension of the atom values)
    atoms       atom values, shape (K,) or (K, d)      [finite]
    weights     atom probabilities, sum to 1            [finite]
    density     vectorised density x -> f(x) >= 0       [euclidean_density]
    support_box axis-aligned box, shape (d, 2)          [cube / density]
    envelope    rejection constant with density <= envelope on the box
    """

    kind: str
    dimension: int = 1
    atoms: Optional[np.ndarray] = None
    weights: Optional[np.ndarray] = None
    density: Optional[Callable[[np.ndarray], np.ndarray]] = None
    support_box: Optional[np.ndarray] = None
    envelope: Optional[float] = None

    def __post_init__(self):
        if self.dimension < 1:
            raise ValueError("dimension must be >= 1")
        if self.kind == FINITE:
            w = np.asarray(self.weights, dtype=float)
            if np.any(w < 0):
                raise ValueError("finite weights must be nonnegative")
            if abs(w.sum() - 1.0) > 1e-12:
                raise ValueError(f"finite weights must sum to 1, got {w.sum()!r}")
            object.__setattr__(self, "weights", w)
            object.__setattr__(self, "atoms", np.asarray(self.atoms))
        elif self.kind == DENSITY:
            if self.density is None or self.support_box is None:
                raise ValueError("density mode needs a density and a support box")
            if self.envelope is None or self.envelope <= 0:
                raise ValueError("density mode needs a positive rejection envelope")
        elif self.kind not in (CUBE, CIRCLE):
            raise ValueError(f"unknown space kind {self.kind!r}")

    # -- helpers ---------------------------------------------------------

    @property
    def n_atoms(self) -> int:
        if self.kind != FINITE:
            raise ValueError("n_atoms is only defined for finite spaces")
        return len(self.weights)

    def atom_values(self, idx: np.ndarray) -> np.ndarray:
        return self.atoms[idx]


def finite(atoms, weights) -> Space:
    atoms = np.asarray(atoms)
    dim = 1 if atoms.ndim == 1 else atoms.shape[1]
    return Space(kind=FINITE, dimension=dim, atoms=atoms,
                 weights=np.asarray(weights, dtype=float))


def uniform_atoms(values) -> Space:
    values = np.asarray(values)
    k = len(values)
    return finite(values, np.full(k, 1.0 / k))


def cube_uniform(d: int, box=None) -> Space:
    if box is None:
        box = np.column_stack([np.zeros(d), np.ones(d)])
    box = np.asarray(box, dtype=float).reshape(d, 2)
    return Space(kind=CUBE, dimension=d, support_box=box)


def circle_uniform() -> Space:
    """Uniform law on a circle of unit circumference.

    Points are stored as positions in [0, 1); the natural metric is
    circle_dist.  Translation invariance makes indicator kernels of the
    distance exactly degenerate after centering.
    """
    return Space(kind=CIRCLE, dimension=1)


def euclidean_density(density, box, envelope, dimension=None) -> Space:
    box = np.asarray(box, dtype=float)
    if box.ndim == 1:
        box = box.reshape(1, 2)
    d = box.shape[0] if dimension is None else dimension
    return Space(kind=DENSITY, dimension=d, density=density,
                 support_box=box, envelope=float(envelope))


def circle_dist(u, v):
    """Arc distance on the unit-circumference circle."""
    d = np.abs(np.asarray(u) - np.asarray(v)) % 1.0
    return np.minimum(d, 1.0 - d)


# -- sampling ------------------------------------------------------------


def sample(space: Space, n: int, rng) -> np.ndarray:
    """Draw n i.i.d. points from the law of `space`.

    Deterministic given the stream.  Density mode uses rejection sampling
    and fails hard if the density exceeds its envelope at a proposed point.
    """
    if n < 0:
        raise ValueError("n must be >= 0")
    gen = as_generator(rng)
    if space.kind == FINITE:
        idx = gen.choice(space.n_atoms, size=n, p=space.weights)
        return space.atoms[idx]
    if space.kind == CUBE:
        lo, hi = space.support_box[:, 0], space.support_box[:, 1]
        u = gen.random((n, space.dimension))
        out = lo + u * (hi - lo)
        return out[:, 0] if space.dimension == 1 else out
    if space.kind == CIRCLE:
        return gen.random(n)
    if space.kind == DENSITY:
        return _rejection_sample(space, n, gen)
    raise ValueError(f"unknown space kind {space.kind!r}")


def _rejection_sample(space: Space, n: int, gen: np.random.Generator) -> np.ndarray:
    lo, hi = space.support_box[:, 0], space.support_box[:, 1]
    d = space.support_box.shape[0]
    out = np.empty((n, d))
    got = 0
    while got < n:
        m = max(256, 2 * (n - got))
        x = lo + gen.random((m, d)) * (hi - lo)
        f = np.asarray(space.density(x), dtype=float)
        bad = f > space.envelope * (1 + 1e-12)
        if np.any(bad):
            pt = x[np.argmax(bad)]
            raise RuntimeError(
                f"density {f[np.argmax(bad)]:.6g} exceeds envelope "
                f"{space.envelope:.6g} at point {pt.tolist()}"
            )
        keep = gen.random(m) * space.envelope <= f
        take = min(int(keep.sum()), n - got)
        out[got:got + take] = x[keep][:take]
        got += take
    return out[:, 0] if d == 1 else out


# -- exact expectation on finite spaces -----------------------------------


def index_grid(n_atoms: int, m: int) -> np.ndarray:
    """All m-tuples of atom indices, shape (n_atoms**m, m)."""
    grids = np.meshgrid(*[np.arange(n_atoms)] * m, indexing="ij")
    return np.stack([g.ravel() for g in grids], axis=-1)


def tuple_weights(weights: np.ndarray, m: int) -> np.ndarray:
    """Product weights over all m-tuples, aligned with index_grid."""
    w = np.array(1.0)
    for _ in range(m):
        w = np.multiply.outer(w, weights)
    return w.ravel()


def exact_expect(space: Space, f: Callable, m: int) -> float:
    """Exact E[f(X_1,...,X_m)] over mu^m by full enumeration.

    f must be vectorised: it receives m arrays of atom values and returns
    an array of the same leading shape.
    """
    if space.kind != FINITE:
        raise ValueError("exact_expect needs a finite space")
    k = space.n_atoms
    if k**m > ENUMERATION_BUDGET:
        raise ValueError(
            f"enumeration budget exceeded: {k}^{m} = {k**m} tuples "
            f"> {ENUMERATION_BUDGET}"
        )
    if m == 0:
        return float(np.asarray(f()))
    idx = index_grid(k, m)
    args = [space.atoms[idx[:, j]] for j in range(m)]
    vals = np.asarray(f(*args), dtype=float).ravel()
    return float(vals @ tuple_weights(space.weights, m))
