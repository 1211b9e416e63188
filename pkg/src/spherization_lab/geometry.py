"""Model base manifolds and their covering geometry.

Two models are supported:

* ``torus``: the flat 2-torus R^2 / (B Z^2) for an invertible lattice basis B.
* ``sol``: a compact quotient of the 3-dimensional solvable group with left
  multiplication (x,y,z)*(x',y',z') = (x + e^z x', y + e^{-z} y', z + z') and
  metric e^{-2z} dx^2 + e^{2z} dy^2 + dz^2.  The lattice is built from an
  integer unimodular matrix A with eigenvalue lam > 1 via a matrix P with
  P A P^{-1} = diag(lam, 1/lam): the element (m, n, l) acts on the cover by
  left multiplication with (P(m,n), l*log(lam)).

Coordinates always live in the universal cover.  Reduction to the fundamental
domain happens only when detecting arrivals or reporting, never inside an
integrator, so trajectories stay smooth.

Deck elements are plain integer tuples: (m, n) for the torus, (m, n, l) for
the sol quotient.  All operations here are pure functions of their inputs.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import BudgetExceededError

Deck = tuple[int, ...]


def int_mat_pow(a: tuple[int, int, int, int], l: int) -> tuple[int, int, int, int]:
    """Exact power of a determinant-1 integer 2x2 matrix (row-major tuple)."""
    if l < 0:
        p, q, r, s = a
        return int_mat_pow((s, -q, -r, p), -l)
    out = (1, 0, 0, 1)
    for _ in range(l):
        p, q, r, s = out
        a11, a12, a21, a22 = a
        out = (p * a11 + q * a21, p * a12 + q * a22,
               r * a11 + s * a21, r * a12 + s * a22)
    return out


def int_mat_vec(m: tuple[int, int, int, int], v: tuple[int, int]) -> tuple[int, int]:
    return (m[0] * v[0] + m[1] * v[1], m[2] * v[0] + m[3] * v[1])


def float_mat_pow(a: tuple[int, int, int, int], l: int) -> np.ndarray:
    return np.array(int_mat_pow(a, l), dtype=float).reshape(2, 2)


@dataclass(frozen=True)
class CotangentPoint:
    """A phase-space state: base coordinates in the cover plus a covector."""

    q: np.ndarray
    p: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "q", np.asarray(self.q, dtype=float))
        object.__setattr__(self, "p", np.asarray(self.p, dtype=float))
        if not (np.all(np.isfinite(self.q)) and np.all(np.isfinite(self.p))):
            raise ValueError("non-finite phase-space state")


@dataclass(frozen=True)
class ModelManifold:
    """A model base manifold together with its covering data.

    For the sol quotient, ``basis_mat`` is the matrix P above (it sends
    integer lattice coordinates to horizontal cover coordinates) and
    ``basis_inv`` its inverse; ``stretch`` is lam and ``period`` log(lam).
    """

    kind: str                      # "torus" | "sol"
    dim: int
    lattice: np.ndarray | None = None        # torus: basis columns
    lattice_inv: np.ndarray | None = None
    monodromy: tuple[int, int, int, int] | None = None   # sol: A, row-major
    basis_mat: np.ndarray | None = None
    basis_inv: np.ndarray | None = None
    stretch: float = field(default=0.0)
    period: float = field(default=0.0)

    # -- constructors ------------------------------------------------------

    @staticmethod
    def torus(basis=None) -> "ModelManifold":
        b = np.eye(2) if basis is None else np.asarray(basis, dtype=float)
        if b.shape != (2, 2) or abs(np.linalg.det(b)) < 1e-12:
            raise ValueError("lattice basis must be an invertible 2x2 matrix")
        return ModelManifold(kind="torus", dim=2, lattice=b,
                             lattice_inv=np.linalg.inv(b))

    @staticmethod
    def sol(monodromy=(2, 1, 1, 1)) -> "ModelManifold":
        a = tuple(int(v) for v in np.asarray(monodromy).ravel())
        if len(a) != 4:
            raise ValueError("monodromy must be a 2x2 integer matrix")
        if a[0] * a[3] - a[1] * a[2] != 1:
            raise ValueError("monodromy must have determinant 1")
        m = np.array(a, dtype=float).reshape(2, 2)
        vals, vecs = np.linalg.eig(m)
        if np.max(np.abs(np.imag(vals))) > 0:
            raise ValueError("monodromy must be hyperbolic (real eigenvalues)")
        vals, vecs = np.real(vals), np.real(vecs)
        order = np.argsort(vals)[::-1]
        lam = float(vals[order[0]])
        if lam <= 1.0:
            raise ValueError("monodromy must have an eigenvalue > 1")
        v = vecs[:, order].copy()
        # deterministic sign: largest-magnitude entry of each unit
        # eigenvector is positive
        for j in range(2):
            k = int(np.argmax(np.abs(v[:, j])))
            if v[k, j] < 0:
                v[:, j] = -v[:, j]
        p = np.linalg.inv(v)
        diag = p @ m @ v
        if abs(diag[0, 1]) > 1e-12 or abs(diag[1, 0]) > 1e-12 or \
           abs(diag[0, 0] - lam) > 1e-12:
            raise ValueError("diagonalization of the monodromy failed")
        return ModelManifold(kind="sol", dim=3, monodromy=a, basis_mat=p,
                             basis_inv=v, stretch=lam,
                             period=float(np.log(lam)))

    # -- deck transformations ---------------------------------------------

    def identity_deck(self) -> Deck:
        return (0, 0) if self.kind == "torus" else (0, 0, 0)

    def deck_apply(self, g: Deck, q) -> np.ndarray:
        """Left action of the lattice element ``g`` on a cover point."""
        q = np.asarray(q, dtype=float)
        if self.kind == "torus":
            return q + self.lattice @ np.asarray(g, dtype=float)
        m, n, l = g
        shift = self.basis_mat @ np.array([float(m), float(n)])
        zg = l * self.period
        return np.array([shift[0] + np.exp(zg) * q[0],
                         shift[1] + np.exp(-zg) * q[1],
                         zg + q[2]])

    def deck_compose(self, g: Deck, h: Deck) -> Deck:
        """Composition with apply(g, apply(h, q)) == apply(compose(g, h), q)."""
        if self.kind == "torus":
            return (g[0] + h[0], g[1] + h[1])
        al = int_mat_pow(self.monodromy, g[2])
        w = int_mat_vec(al, (h[0], h[1]))
        return (g[0] + w[0], g[1] + w[1], g[2] + h[2])

    def deck_inverse(self, g: Deck) -> Deck:
        if self.kind == "torus":
            return (-g[0], -g[1])
        al = int_mat_pow(self.monodromy, -g[2])
        w = int_mat_vec(al, (g[0], g[1]))
        return (-w[0], -w[1], -g[2])

    def deck_transport(self, g: Deck, x: CotangentPoint) -> CotangentPoint:
        """Lift of the deck action to the cotangent bundle.

        The base moves by the left action; the covector by the inverse
        transpose of its (diagonal) differential, which preserves the
        left-invariant conorm.
        """
        q = self.deck_apply(g, x.q)
        if self.kind == "torus":
            return CotangentPoint(q, x.p.copy())
        zg = g[2] * self.period
        p = np.array([x.p[0] * np.exp(-zg), x.p[1] * np.exp(zg), x.p[2]])
        return CotangentPoint(q, p)

    # -- fundamental domain -------------------------------------------------

    def reduce(self, q) -> tuple[np.ndarray, Deck]:
        """Reduce a cover point into the fundamental domain.

        Returns ``(q0, g)`` with ``deck_apply(g, q0) == q``.  The domain is
        the lattice unit cell for the torus; for the sol quotient it is
        z in [0, log lam) with the horizontal part in the P-adapted unit
        square, which makes the reduction a shear followed by a floor.
        """
        q = np.asarray(q, dtype=float)
        if self.kind == "torus":
            t = self.lattice_inv @ q
            k = np.floor(t)
            return self.lattice @ (t - k), (int(k[0]), int(k[1]))
        l = int(np.floor(q[2] / self.period))
        z0 = q[2] - l * self.period
        u = float_mat_pow(self.monodromy, -l) @ (self.basis_inv @ q[:2])
        k = np.floor(u)
        v = int_mat_vec(int_mat_pow(self.monodromy, l), (int(k[0]), int(k[1])))
        xy0 = self.basis_mat @ (u - k)
        return np.array([xy0[0], xy0[1], z0]), (v[0], v[1], l)

    def random_point(self, rng) -> np.ndarray:
        """Uniform sample of the fundamental domain."""
        if self.kind == "torus":
            return self.lattice @ rng.uniform(0.0, 1.0, size=2)
        frac = rng.uniform(0.0, 1.0, size=3)
        xy = self.basis_mat @ frac[:2]
        return np.array([xy[0], xy[1], frac[2] * self.period])

    # -- metric data ---------------------------------------------------------

    def cometric(self, q) -> np.ndarray:
        """Dual metric matrix acting on covectors at the base point."""
        if self.kind == "torus":
            return np.eye(2)
        z = float(np.asarray(q, dtype=float)[2])
        return np.diag([np.exp(2.0 * z), np.exp(-2.0 * z), 1.0])

    def metric(self, q) -> np.ndarray:
        if self.kind == "torus":
            return np.eye(2)
        z = float(np.asarray(q, dtype=float)[2])
        return np.diag([np.exp(-2.0 * z), np.exp(2.0 * z), 1.0])

    def conorm_sq(self, q, p):
        """|p|^2 in the dual metric; vectorized over leading axes."""
        q = np.asarray(q, dtype=float)
        p = np.asarray(p, dtype=float)
        if self.kind == "torus":
            return np.sum(p * p, axis=-1)
        e2z = np.exp(2.0 * q[..., 2])
        return e2z * p[..., 0] ** 2 + p[..., 1] ** 2 / e2z + p[..., 2] ** 2

    def norm_sq(self, q, v):
        """|v|^2 of a tangent vector in the base metric."""
        q = np.asarray(q, dtype=float)
        v = np.asarray(v, dtype=float)
        if self.kind == "torus":
            return np.sum(v * v, axis=-1)
        e2z = np.exp(2.0 * q[..., 2])
        return v[..., 0] ** 2 / e2z + e2z * v[..., 1] ** 2 + v[..., 2] ** 2

    def volume_density(self, q):
        """sqrt(det g); identically 1 for both shipped models."""
        q = np.asarray(q, dtype=float)
        return np.ones(q.shape[:-1])

    # -- distances on the quotient -------------------------------------------

    def frame_displacement(self, q_probe, q_ref):
        """Displacement of ``q_probe`` from ``q_ref`` in an orthonormal frame
        at ``q_ref``.  For the torus this is the plain difference; on sol the
        left-invariant frame absorbs the exponential shear, so the norm of
        the result approximates the Riemannian distance for nearby points.
        """
        q_probe = np.asarray(q_probe, dtype=float)
        q_ref = np.asarray(q_ref, dtype=float)
        d = q_probe - q_ref
        if self.kind == "torus":
            return d
        z = q_ref[..., 2]
        out = np.empty_like(d)
        out[..., 0] = d[..., 0] * np.exp(-z)
        out[..., 1] = d[..., 1] * np.exp(z)
        out[..., 2] = d[..., 2]
        return out

    def nearest_lift(self, q_probe, q_base):
        """Deck element whose action on ``q_base`` lands closest to
        ``q_probe``, with closeness measured in the frame at the lift.

        Candidates come from the floor structure of the reduction plus the
        neighbouring cells, which is exact for orthogonal adapted bases and
        a tight heuristic otherwise.  Returns ``(deck, distance, lift)``.
        """
        q_probe = np.asarray(q_probe, dtype=float)
        q_base = np.asarray(q_base, dtype=float)
        best = None
        if self.kind == "torus":
            t = self.lattice_inv @ (q_probe - q_base)
            k0 = np.floor(t)
            for dm in (0, 1):
                for dn in (0, 1):
                    g = (int(k0[0]) + dm, int(k0[1]) + dn)
                    lift = self.deck_apply(g, q_base)
                    dist = float(np.linalg.norm(q_probe - lift))
                    if best is None or dist < best[1]:
                        best = (g, dist, lift)
            return best
        l0 = int(np.round((q_probe[2] - q_base[2]) / self.period))
        for l in (l0 - 1, l0, l0 + 1):
            zg = l * self.period
            target = q_probe[:2] - np.array([np.exp(zg) * q_base[0],
                                             np.exp(-zg) * q_base[1]])
            k0 = np.floor(self.basis_inv @ target)
            for dm in (0, 1):
                for dn in (0, 1):
                    g = (int(k0[0]) + dm, int(k0[1]) + dn, l)
                    lift = self.deck_apply(g, q_base)
                    dist = float(np.linalg.norm(
                        self.frame_displacement(q_probe, lift)))
                    if best is None or dist < best[1]:
                        best = (g, dist, lift)
        return best

    def fiber_distance(self, q, q_target, deck_search_radius: int = 2,
                       max_elements: int = 2_000_000) -> float:
        """Minimum cover-coordinate distance to deck translates of the target.

        Enumerates deck elements in the box |m|,|n|(,|l|) <= radius.  Exact
        for the torus once the radius covers the separation; on sol it is an
        upper bound for the true Riemannian distance.
        """
        r = int(deck_search_radius)
        if r < 0:
            raise ValueError("search radius must be >= 0")
        count = (2 * r + 1) ** (2 if self.kind == "torus" else 3)
        if count > max_elements:
            raise BudgetExceededError(
                f"deck enumeration of {count} elements exceeds cap {max_elements}")
        q = np.asarray(q, dtype=float)
        q_target = np.asarray(q_target, dtype=float)
        rng = range(-r, r + 1)
        best = np.inf
        if self.kind == "torus":
            for m in rng:
                for n in rng:
                    lift = self.deck_apply((m, n), q_target)
                    best = min(best, float(np.linalg.norm(q - lift)))
            return best
        for m in rng:
            for n in rng:
                for l in rng:
                    lift = self.deck_apply((m, n, l), q_target)
                    best = min(best, float(np.linalg.norm(q - lift)))
        return best
