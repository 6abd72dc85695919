"""Mollified drivers: convolution in ``(y, E[Y])`` with a product bump kernel.

For a driver ``g(s, y, z, m, law)`` and smoothing index ``n``::

    g^n(s, y, z, m, law) = int int g(s, y - a/n, z, m - b/n, law) rho(a, b) da db

with ``rho(a, b) = c k(a) k(b)`` and ``k(u) = exp(-1 / (u (1 - u)))`` on
``(0, 1)``.  The substitution ``a -> a/n`` happens before quadrature, so the
Gauss-Legendre grid on ``(0, 1)^2`` is the same for every ``n``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy.integrate import quad

from .coeffs.specs import DriverSpec
from .measure import JointEmpiricalMeasure

NORMALIZATION_TOL = 1e-8


def bump(u):
    """One-dimensional factor ``exp(-1/(u(1-u)))`` on ``(0, 1)``, zero elsewhere."""
    u = np.asarray(u, dtype=float)
    inside = (u > 0.0) & (u < 1.0)
    safe = np.where(inside, u, 0.5)
    return np.where(inside, np.exp(-1.0 / (safe * (1.0 - safe))), 0.0)


@dataclass(frozen=True)
class BumpKernel:
    """Product bump ``rho(a, b) = c k(a) k(b)`` with its tensor quadrature rule."""

    order: int
    nodes: np.ndarray
    weights: np.ndarray
    c: float

    def rho(self, a, b):
        return self.c * bump(a) * bump(b)

    @cached_property
    def marginal_mass(self) -> np.ndarray:
        """Quadrature weights times ``sqrt(c) k(node)``; sums to 1."""
        m = self.weights * bump(self.nodes)
        return m / m.sum()

    @property
    def first_moment(self) -> float:
        """``int u k(u) du / int k(u) du`` under the stored rule (0.5 by symmetry)."""
        return float(np.dot(self.marginal_mass, self.nodes))

    def total_mass(self) -> float:
        return float(self.c * np.dot(self.weights, bump(self.nodes)) ** 2)


def make_kernel(Q: int = 32) -> BumpKernel:
    """Gauss-Legendre rule of order ``Q`` per axis, normalized to unit mass.

    Raises ``ValueError`` when ``Q < 8`` or when the rule is too coarse for
    the normalized kernel's exact integral to be within 1e-8 of 1.
    """
    if Q < 8:
        raise ValueError(f"quadrature order must be >= 8, got {Q}")
    x, w = np.polynomial.legendre.leggauss(Q)
    nodes = 0.5 * (x + 1.0)
    weights = 0.5 * w
    s = float(np.dot(weights, bump(nodes)))
    c = 1.0 / (s * s)
    exact, _ = quad(bump, 0.0, 1.0, epsabs=0.0, epsrel=1e-13, limit=200)
    err = abs(c * exact * exact - 1.0)
    if err > NORMALIZATION_TOL:
        raise ValueError(
            f"quadrature order {Q} normalizes the kernel only to {err:.2e}; "
            f"need {NORMALIZATION_TOL:g} (use Q >= 28)"
        )
    nodes.flags.writeable = False
    weights.flags.writeable = False
    return BumpKernel(order=Q, nodes=nodes, weights=weights, c=c)


@dataclass(frozen=True)
class MollifiedDriver:
    base: DriverSpec
    n: float
    kernel: BumpKernel

    def __post_init__(self):
        if not self.n >= 1:
            raise ValueError(f"smoothing index must be >= 1, got {self.n}")

    def g(self, s, y, z, m, law):
        """Vectorized ``g^n``; ``y``, ``z`` may be particle arrays."""
        y = np.asarray(y, dtype=float)
        z = np.asarray(z, dtype=float)
        shift = self.kernel.nodes / self.n
        mass = self.kernel.marginal_mass
        yy = y[..., None] - shift
        zz = z[..., None]
        out = np.zeros(np.broadcast_shapes(y.shape, z.shape))
        for b, wb in zip(shift, mass):
            vals = np.asarray(self.base.g(s, yy, zz, m - b, law), dtype=float)
            vals = np.broadcast_to(vals, out.shape + (shift.size,))
            out = out + wb * (vals @ mass)
        return out

    def evaluate(self, s, y, mean, law, z=0.0) -> float | np.ndarray:
        out = self.g(s, y, z, mean, law)
        return float(out) if out.ndim == 0 else out

    def as_driver(self) -> DriverSpec:
        return DriverSpec(
            name=f"{self.base.name}^n={self.n:g}",
            g=self.g,
            constants=self.base.constants,
            lipschitz_in_y=True,
            z_dependent=self.base.z_dependent,
            law_dependent=self.base.law_dependent,
            law_shape_dependent=self.base.law_shape_dependent,
        )


def mollify(base: DriverSpec, n: float, Q: int = 32) -> MollifiedDriver:
    return MollifiedDriver(base=base, n=n, kernel=make_kernel(Q))


def neutral_law(size: int = 2) -> JointEmpiricalMeasure:
    """Zero-mean joint cloud used when only ``(y, mean)`` matter."""
    return JointEmpiricalMeasure(np.zeros(size), np.zeros(size))


def lipschitz_probe(
    md: MollifiedDriver | DriverSpec,
    pairs: np.ndarray,
    law: JointEmpiricalMeasure | None = None,
    s: float = 0.0,
    z: float = 0.0,
) -> float:
    """Largest ``|g(y1, m1) - g(y2, m2)| / (|y1 - y2| + |m1 - m2|)`` over ``pairs``.

    ``pairs`` has shape ``(P, 4)`` with columns ``y1, m1, y2, m2``; at least
    100 pairs are required.
    """
    pairs = np.asarray(pairs, dtype=float)
    if pairs.ndim != 2 or pairs.shape[1] != 4:
        raise ValueError("pairs must have shape (P, 4): y1, m1, y2, m2")
    if pairs.shape[0] < 100:
        raise ValueError(f"need at least 100 probe pairs, got {pairs.shape[0]}")
    law = law if law is not None else neutral_law()
    g = md.g
    best = 0.0
    for y1, m1, y2, m2 in pairs:
        d = abs(y1 - y2) + abs(m1 - m2)
        if d == 0.0:
            continue
        v1 = float(np.asarray(g(s, np.float64(y1), np.float64(z), m1, law)))
        v2 = float(np.asarray(g(s, np.float64(y2), np.float64(z), m2, law)))
        best = max(best, abs(v1 - v2) / d)
    return best


def random_pairs(
    rng: np.random.Generator,
    count: int,
    lo: float,
    hi: float,
    max_gap: float,
    min_gap: float = 1e-6,
) -> np.ndarray:
    """Probe pairs with first points uniform on ``[lo, hi]^2`` and log-uniform gaps."""
    y1 = rng.uniform(lo, hi, count)
    m1 = rng.uniform(lo, hi, count)
    gaps = np.exp(rng.uniform(np.log(min_gap), np.log(max_gap), (count, 2)))
    signs = rng.choice([-1.0, 1.0], size=(count, 2))
    return np.column_stack([y1, m1, y1 + signs[:, 0] * gaps[:, 0], m1 + signs[:, 1] * gaps[:, 1]])


def sup_error(
    md: MollifiedDriver,
    points: np.ndarray,
    law: JointEmpiricalMeasure | None = None,
    s: float = 0.0,
    z: float = 0.0,
) -> float:
    """``max |g^n - g|`` over probe points given as rows ``(y, mean)``."""
    law = law if law is not None else neutral_law()
    worst = 0.0
    for y, m in np.asarray(points, dtype=float):
        gn = float(np.asarray(md.g(s, np.float64(y), np.float64(z), m, law)))
        g0 = float(np.asarray(md.base.g(s, np.float64(y), np.float64(z), m, law)))
        worst = max(worst, abs(gn - g0))
    return worst


def growth_ratio(
    md: MollifiedDriver,
    points: np.ndarray,
    law: JointEmpiricalMeasure | None = None,
    s: float = 0.0,
    z: float = 0.0,
) -> float:
    """``max |g^n| / (1 + |y| + |mean| + sqrt(E[Y^2]) + sqrt(E[V^2]))`` over points."""
    law = law if law is not None else neutral_law()
    second = np.sqrt(np.mean(law.first**2)) + np.sqrt(np.mean(law.second**2))
    worst = 0.0
    for y, m in np.asarray(points, dtype=float):
        v = float(np.asarray(md.g(s, np.float64(y), np.float64(z), m, law)))
        worst = max(worst, abs(v) / (1.0 + abs(y) + abs(m) + second))
    return worst


def monotonicity_ratio(
    md: MollifiedDriver | DriverSpec,
    y1: np.ndarray,
    y2: np.ndarray,
    s: float = 0.0,
) -> float:
    """``E[(g(Y1) - g(Y2))(Y1 - Y2)] / E|Y1 - Y2|^2`` for two coupled clouds.

    Each cloud supplies its own mean; the second law component is zero.
    """
    y1 = np.asarray(y1, dtype=float)
    y2 = np.asarray(y2, dtype=float)
    law1 = JointEmpiricalMeasure(y1, np.zeros_like(y1))
    law2 = JointEmpiricalMeasure(y2, np.zeros_like(y2))
    z = np.zeros_like(y1)
    g1 = np.asarray(md.g(s, y1, z, law1.mean_first, law1), dtype=float)
    g2 = np.asarray(md.g(s, y2, z, law2.mean_first, law2), dtype=float)
    den = float(np.mean((y1 - y2) ** 2))
    if den == 0.0:
        return 0.0
    return float(np.mean((g1 - g2) * (y1 - y2))) / den


def mollify_report(
    base: DriverSpec,
    ns,
    points: np.ndarray,
    rng: np.random.Generator,
    Q: int = 32,
    n_pairs: int = 200,
    probe_box: tuple[float, float] = (-2.0, 3.0),
) -> list[dict]:
    """Rows of ``n, y, mean, g, g_n, abs_err, lipschitz_estimate`` for each ``n`` and point."""
    kernel = make_kernel(Q)
    law = neutral_law()
    pairs = random_pairs(rng, n_pairs, probe_box[0], probe_box[1], max_gap=0.5)
    rows = []
    for n in ns:
        md = MollifiedDriver(base, float(n), kernel)
        lip = lipschitz_probe(md, pairs, law)
        for y, m in np.asarray(points, dtype=float):
            g0 = float(np.asarray(base.g(0.0, np.float64(y), np.float64(0.0), m, law)))
            gn = float(np.asarray(md.g(0.0, np.float64(y), np.float64(0.0), m, law)))
            rows.append(
                dict(n=n, y=y, mean=m, g=g0, g_n=gn, abs_err=abs(g0 - gn), lipschitz_estimate=lip)
            )
    return rows
