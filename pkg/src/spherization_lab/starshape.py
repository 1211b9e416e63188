"""Fiberwise starshaped surfaces and the sandwiched Hamiltonians built on them.

A surface is described by a radial profile r(q, u) over unit covector
directions.  The squared gauge

    F(q, p) = (|p|_g / r(q, p/|p|_g))^2

is fiberwise homogeneous of degree 2 and equals 1 exactly on the surface.
Around it we build the smoothed Hamiltonian and its metric bounds:

    upper = sigma * G
    core  = (1 - step(|p|)) * f(F) + step(|p|) * upper
    lower = (1 - step(|p|)) * f(G) + step(|p|) * upper

where G is half the squared conorm of a once-rescaled metric chosen so that
G <= F <= sigma * G, f is a cutoff vanishing near the zero section, and the
step function switches everything to the quadratic upper bound far out.
The convex blend between lower and upper drives the homotopy experiments.

All evaluation functions are vectorized over a leading sample axis and are
pure; a calibrated :class:`SandwichedHamiltonians` is immutable.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import CalibrationError
from .geometry import ModelManifold

_SLOPE_GRID = 10_000


def smoothstep(x):
    """Quintic monotone step: 0 below 0, 1 above 1, C^2 at the seams."""
    x = np.clip(x, 0.0, 1.0)
    return x ** 3 * (10.0 + x * (-15.0 + 6.0 * x))


def smoothstep_slope(x):
    x = np.asarray(x, dtype=float)
    inside = (x > 0.0) & (x < 1.0)
    xc = np.clip(x, 0.0, 1.0)
    return np.where(inside, 30.0 * xc ** 2 * (1.0 - xc) ** 2, 0.0)


@dataclass(frozen=True)
class RadialProfile:
    """Fiber radius as a function of the unit covector direction.

    kind "round": r = 1.  kind "ellipse": the surface is the coordinate
    ellipsoid with the given semi-axes.  kind "fourier" (2d fibers only):
    r(theta) = base + sum_k cos_k cos(k theta) + sin_k sin(k theta).
    """

    kind: str = "round"
    axes: tuple[float, ...] = ()
    base: float = 1.0
    cos_coeffs: tuple[float, ...] = ()
    sin_coeffs: tuple[float, ...] = ()

    @staticmethod
    def round() -> "RadialProfile":
        return RadialProfile(kind="round")

    @staticmethod
    def ellipse(axes) -> "RadialProfile":
        axes = tuple(float(a) for a in axes)
        if any(a <= 0 for a in axes):
            raise ValueError("ellipse axes must be positive")
        return RadialProfile(kind="ellipse", axes=axes)

    @staticmethod
    def fourier(base, cos_coeffs=(), sin_coeffs=()) -> "RadialProfile":
        return RadialProfile(kind="fourier", base=float(base),
                             cos_coeffs=tuple(float(c) for c in cos_coeffs),
                             sin_coeffs=tuple(float(c) for c in sin_coeffs))

    def radius(self, u):
        """r at unit directions ``u`` (shape (..., d))."""
        u = np.asarray(u, dtype=float)
        if self.kind == "round":
            return np.ones(u.shape[:-1])
        if self.kind == "ellipse":
            axes = np.asarray(self.axes, dtype=float)
            return 1.0 / np.sqrt(np.sum((u / axes) ** 2, axis=-1))
        theta = np.arctan2(u[..., 1], u[..., 0])
        r = np.full(theta.shape, self.base)
        for k, c in enumerate(self.cos_coeffs, start=1):
            r = r + c * np.cos(k * theta)
        for k, c in enumerate(self.sin_coeffs, start=1):
            r = r + c * np.sin(k * theta)
        return r

    def radius_angle_slope(self, theta):
        """dr/dtheta for the fourier profile (zero for the other kinds)."""
        theta = np.asarray(theta, dtype=float)
        r = np.zeros(theta.shape)
        for k, c in enumerate(self.cos_coeffs, start=1):
            r = r - c * k * np.sin(k * theta)
        for k, c in enumerate(self.sin_coeffs, start=1):
            r = r + c * k * np.cos(k * theta)
        return r

    def min_radius(self, samples: int = 8192) -> float:
        if self.kind == "round":
            return 1.0
        if self.kind == "ellipse":
            return float(min(self.axes))
        theta = np.linspace(0.0, 2.0 * np.pi, samples, endpoint=False)
        u = np.stack([np.cos(theta), np.sin(theta)], axis=-1)
        return float(np.min(self.radius(u)))


@dataclass(frozen=True)
class Cutoff:
    """Smooth interpolation between 0 (below eps^2) and the identity (above eps).

    Built as f(r) = r * smoothstep((r - eps^2)/(eps - eps^2)).  The slope
    bound f' <= 2 is not automatic for every eps; calibration shrinks eps
    until a dense grid certifies it.
    """

    eps: float

    def __post_init__(self):
        if not 0.0 < self.eps < 0.25:
            raise ValueError("cutoff eps must lie in (0, 1/4)")

    @property
    def lower_knot(self) -> float:
        return self.eps ** 2

    def eval(self, r):
        """Return (value, slope); vectorized."""
        r = np.asarray(r, dtype=float)
        lo = self.eps ** 2
        width = self.eps - lo
        x = (r - lo) / width
        s = smoothstep(x)
        ds = smoothstep_slope(x) / width
        val = np.where(r <= lo, 0.0, np.where(r >= self.eps, r, r * s))
        slope = np.where(r <= lo, 0.0, np.where(r >= self.eps, 1.0,
                                                s + r * ds))
        return val, slope

    def slope_bounds(self, grid: int = _SLOPE_GRID) -> tuple[float, float]:
        """(min, max) of f' on a dense grid over [0, max(1, 2 eps)]."""
        r = np.linspace(0.0, max(1.0, 2.0 * self.eps), grid)
        _, slope = self.eval(r)
        return float(np.min(slope)), float(np.max(slope))

    def slope_positive_above_knot(self, grid: int = _SLOPE_GRID) -> bool:
        r = np.linspace(self.eps ** 2, max(1.0, 2.0 * self.eps), grid + 1)[1:]
        _, slope = self.eval(r)
        return bool(np.all(slope > 0.0))


@dataclass(frozen=True)
class SandwichedHamiltonians:
    """Calibrated bundle: profile, rescaled metric, cutoff, and the sandwich."""

    manifold: ModelManifold
    profile: RadialProfile
    metric_scale: float      # constant multiplying the metric so G <= F
    upper_scale: float       # sigma with sigma * G >= F
    cutoff: Cutoff
    step_lo: float = 2.0     # switch-on radius of the far-field step
    step_hi: float = 4.0

    # -- building blocks -----------------------------------------------------

    def conorm(self, q, p):
        """|p| in the rescaled metric (the norm used by the far-field step)."""
        base = self.manifold.conorm_sq(q, p)
        return np.sqrt(base / self.metric_scale)

    def energy(self, q, p):
        """G = half the squared rescaled conorm."""
        return 0.5 * self.manifold.conorm_sq(q, p) / self.metric_scale

    def energy_grads(self, q, p):
        q = np.asarray(q, dtype=float)
        p = np.asarray(p, dtype=float)
        c = self.metric_scale
        if self.manifold.kind == "torus":
            dq = np.zeros_like(q)
            dp = p / c
            return dq, dp
        e2z = np.exp(2.0 * q[..., 2])
        dq = np.zeros_like(q)
        dq[..., 2] = (e2z * p[..., 0] ** 2 - p[..., 1] ** 2 / e2z) / c
        dp = np.empty_like(p)
        dp[..., 0] = e2z * p[..., 0] / c
        dp[..., 1] = p[..., 1] / e2z / c
        dp[..., 2] = p[..., 2] / c
        return dq, dp

    def gauge(self, q, p):
        """Degree-2 homogeneous gauge F; equals 1 exactly on the surface."""
        q = np.asarray(q, dtype=float)
        p = np.asarray(p, dtype=float)
        if self.profile.kind == "ellipse":
            axes = np.asarray(self.profile.axes, dtype=float)
            return np.sum((p / axes) ** 2, axis=-1)
        norm_sq = self.manifold.conorm_sq(q, p)
        if self.profile.kind == "round":
            return norm_sq
        theta = np.arctan2(p[..., 1], p[..., 0])
        r = self.profile.radius(np.stack([np.cos(theta), np.sin(theta)], axis=-1))
        return norm_sq / r ** 2

    def gauge_grads(self, q, p):
        q = np.asarray(q, dtype=float)
        p = np.asarray(p, dtype=float)
        if self.profile.kind == "ellipse":
            axes = np.asarray(self.profile.axes, dtype=float)
            return np.zeros_like(q), 2.0 * p / axes ** 2
        if self.profile.kind == "round":
            if self.manifold.kind == "torus":
                return np.zeros_like(q), 2.0 * p
            e2z = np.exp(2.0 * q[..., 2])
            dq = np.zeros_like(q)
            dq[..., 2] = 2.0 * (e2z * p[..., 0] ** 2 - p[..., 1] ** 2 / e2z)
            dp = np.empty_like(p)
            dp[..., 0] = 2.0 * e2z * p[..., 0]
            dp[..., 1] = 2.0 * p[..., 1] / e2z
            dp[..., 2] = 2.0 * p[..., 2]
            return dq, dp
        # fourier profile lives on the flat torus fiber
        theta = np.arctan2(p[..., 1], p[..., 0])
        r = self.profile.radius(np.stack([np.cos(theta), np.sin(theta)], axis=-1))
        dr = self.profile.radius_angle_slope(theta)
        dp = np.empty_like(p)
        dp[..., 0] = 2.0 * p[..., 0] / r ** 2 + 2.0 * dr / r ** 3 * p[..., 1]
        dp[..., 1] = 2.0 * p[..., 1] / r ** 2 - 2.0 * dr / r ** 3 * p[..., 0]
        return np.zeros_like(q), dp

    def surface_covector(self, q, u):
        """Map unit coordinate directions to covectors on the surface F = 1."""
        q = np.asarray(q, dtype=float)
        u = np.asarray(u, dtype=float)
        norm = np.sqrt(self.manifold.conorm_sq(q, u))
        unit = u / norm[..., None]
        r = self.profile.radius(unit)
        return unit * r[..., None]

    def far_step(self, rho):
        lo, hi = self.step_lo, self.step_hi
        return smoothstep((np.asarray(rho, dtype=float) - lo) / (hi - lo))

    def far_step_slope(self, rho):
        lo, hi = self.step_lo, self.step_hi
        return smoothstep_slope((np.asarray(rho, dtype=float) - lo) / (hi - lo)) / (hi - lo)

    def homotopy_step(self, s):
        return smoothstep(s)

    # -- the sandwich ---------------------------------------------------------

    def sandwich_eval(self, q, p):
        """Return (lower, core, upper) at the given state(s)."""
        g = self.energy(q, p)
        f_of_f, _ = self.cutoff.eval(self.gauge(q, p))
        f_of_g, _ = self.cutoff.eval(g)
        rho = np.sqrt(2.0 * g)
        tau = self.far_step(rho)
        upper = self.upper_scale * g
        core = (1.0 - tau) * f_of_f + tau * upper
        lower = (1.0 - tau) * f_of_g + tau * upper
        return lower, core, upper

    def blend_eval(self, t, q, p):
        """Convex blend between lower and upper at homotopy time t."""
        beta = self.homotopy_step(t)
        lower, _, upper = self.sandwich_eval(q, p)
        return (1.0 - beta) * lower + beta * upper

    def action_window(self, t, a):
        """Level a(t) = a / (1 + beta(t) (sigma - 1)); nonincreasing in t."""
        beta = self.homotopy_step(t)
        return a / (1.0 + beta * (self.upper_scale - 1.0))

    def homotopy_eval(self, t, q, p, a):
        return self.blend_eval(t, q, p), self.action_window(t, a)


def calibrate(profile: RadialProfile, manifold: ModelManifold, *,
              safety: float = 1.1, eps: float = 0.2,
              directions: int = 4096, base_samples: int = 64,
              rng=None) -> SandwichedHamiltonians:
    """Build a calibrated sandwich for the profile on the manifold.

    The metric rescale makes G <= F, the upper scale sigma makes
    sigma G >= F (sampled extrema times the safety margin), and eps is
    halved until both the slope bound of the cutoff and eps^2 < 1/(2 sigma)
    hold.
    """
    if safety < 1.0:
        raise CalibrationError("safety factor must be >= 1")
    rng = np.random.default_rng(0) if rng is None else rng
    d = manifold.dim

    if d == 2:
        theta = np.linspace(0.0, 2.0 * np.pi, directions, endpoint=False)
        dirs = np.stack([np.cos(theta), np.sin(theta)], axis=-1)
    else:
        dirs = rng.normal(size=(directions, 3))
        dirs /= np.linalg.norm(dirs, axis=-1, keepdims=True)
    if profile.kind == "fourier" and d != 2:
        raise CalibrationError("fourier profiles support 2d fibers only")

    ratios = []
    for _ in range(base_samples):
        q = manifold.random_point(rng)
        norm = np.sqrt(manifold.conorm_sq(q, dirs))
        unit = dirs / norm[..., None]
        r = profile.radius(unit)
        if np.any(r <= 0.0):
            raise CalibrationError("profile radius is not positive")
        ratios.append(r)
        if manifold.kind == "torus":
            break  # flat metric: directions are base-independent
    r_all = np.concatenate(ratios)
    r_max = float(np.max(r_all))
    r_min = float(np.min(r_all))

    # G = |p|^2 / (2c): c = 1 when the plain metric already fits below F
    metric_scale = max(1.0, 0.5 * r_max ** 2)
    upper_scale = safety * 2.0 * metric_scale / r_min ** 2

    cutoff = Cutoff(eps)
    while True:
        _, slope_max = cutoff.slope_bounds()
        if slope_max <= 2.0 and cutoff.eps ** 2 < 1.0 / (2.0 * upper_scale):
            break
        cutoff = Cutoff(cutoff.eps / 2.0)

    return SandwichedHamiltonians(manifold=manifold, profile=profile,
                                  metric_scale=metric_scale,
                                  upper_scale=upper_scale, cutoff=cutoff)

