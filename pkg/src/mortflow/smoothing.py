"""Scatterplot smoothing primitives.

Everything downstream that looks like a fitted curve is a ``SmoothFn``:
a knot grid with fitted values, evaluated by linear interpolation and
held flat beyond the grid.  Curves that need behaviour past the data
frontier are wrapped in an ``ExtendedFn`` which blends into a tangent
line measured just inside the frontier.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, EmptyEraError, TailConfigError

# Knot grids are capped so artifacts stay small and evaluation cheap.
MAX_KNOTS = 1000

# Bootstrap resample size cap for the era-weighted fit.
MAX_RESAMPLE = 20000


@dataclass
class SmoothFn:
    """Piecewise-linear curve: fitted values on a sorted knot grid.

    Evaluation interpolates linearly between knots and holds the boundary
    value flat outside the knot range.
    """

    knots: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        self.knots = np.asarray(self.knots, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.knots.ndim != 1 or self.knots.shape != self.values.shape:
            raise DataError("knots and values must be 1-d arrays of equal length")
        if self.knots.size == 0:
            raise DataError("empty knot grid")
        if np.any(np.diff(self.knots) <= 0):
            raise DataError("knots must be strictly increasing")

    def __call__(self, x):
        return np.interp(x, self.knots, self.values)

    def to_dict(self):
        return {"knots": self.knots.tolist(), "values": self.values.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(knots=np.asarray(d["knots"]), values=np.asarray(d["values"]))


def smoothstep(t):
    """Cubic easing t^2 (3 - 2t); C1 at both ends of [0, 1]."""
    t = np.asarray(t, dtype=float)
    out = t * t * (3.0 - 2.0 * t)
    return out if out.ndim else float(out)


def lowess(x, y, bandwidth=0.20, weights=None, max_knots=MAX_KNOTS):
    """Locally linear scatterplot smoother with a tricube kernel.

    Parameters
    ----------
    x, y : array_like
        Observations.  ``x`` needs at least two distinct values.
    bandwidth : float
        Fraction of points in each local window.
    weights : array_like, optional
        Non-negative prior weights.  They multiply the tricube kernel
        weights inside each window; the window itself is chosen by
        distance alone, so zero-weight points occupy span but exert no
        pull on the fit.
    max_knots : int
        Evaluation grid cap.  Above it the grid is quantile-spaced.

    Returns
    -------
    SmoothFn

    Notes
    -----
    Degree-1 local fits, zero robustness iterations.  A window whose
    weighted design is degenerate falls back to the weighted local mean,
    and a window with no positive-weight points to the unweighted one.
    """
    x = np.asarray(x, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    if x.shape != y.shape:
        raise DataError("x and y must have equal length")
    n = x.size
    xu = np.unique(x)
    if xu.size < 2:
        raise DataError("need at least two distinct x values")
    if weights is not None:
        weights = np.asarray(weights, dtype=float).ravel()
        if weights.shape != x.shape:
            raise DataError("weights must match x in length")
        if np.any(weights < 0):
            raise DataError("weights must be non-negative")

    if xu.size > max_knots:
        knots = np.unique(np.quantile(x, np.linspace(0.0, 1.0, max_knots)))
    else:
        knots = xu

    span = int(np.ceil(bandwidth * n))
    span = min(max(span, 2), n)
    scale = xu[-1] - xu[0]
    h_floor = 1e-12 * max(scale, 1.0)

    fitted = np.empty(knots.size)
    # chunk the knot loop so the (knots x n) distance matrix stays small
    chunk = max(1, int(2_000_000 // n))
    for lo in range(0, knots.size, chunk):
        k = knots[lo:lo + chunk, None]
        d = np.abs(x[None, :] - k)
        h = np.partition(d, span - 1, axis=1)[:, span - 1:span]
        h = np.maximum(h, h_floor)
        u = np.clip(d / h, 0.0, 1.0)
        w = (1.0 - u ** 3) ** 3
        if weights is not None:
            w = w * weights[None, :]
        xc = x[None, :] - k
        s0 = w.sum(axis=1)
        s1 = (w * xc).sum(axis=1)
        s2 = (w * xc * xc).sum(axis=1)
        t0 = w @ y
        t1 = (w * xc) @ y
        denom = s0 * s2 - s1 * s1
        ok = denom > 1e-12 * np.maximum(s0 * s2, 1e-300)
        value = np.where(ok, (s2 * t0 - s1 * t1) / np.where(ok, denom, 1.0),
                         t0 / np.where(s0 > 0, s0, 1.0))
        dead = s0 <= 0
        if np.any(dead):
            near = d <= h
            counts = near.sum(axis=1)
            flat = (near * y).sum(axis=1) / np.maximum(counts, 1)
            value = np.where(dead, flat, value)
        fitted[lo:lo + k.size] = value

    return SmoothFn(knots=knots, values=fitted)


# ----------------------------------------------------------------------
# Era weighting
# ----------------------------------------------------------------------

@dataclass(frozen=True)
class EraKernel:
    """One-sided exponential recency kernel anchored at an origin year.

    Weight halves every ``tau`` years into the past and cuts to zero
    beyond ``window`` years.  Future years are the caller's problem; every
    fit in this package pools only years at or before the origin.
    """

    origin: float
    tau: float
    window: float

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError("tau must be positive")
        if not self.window > 0:
            raise ValueError("window must be positive")


def era_weights(years, kernel):
    """Kernel weight for each year: 2^(-(t0 - t)/tau), 0 beyond the window."""
    years = np.asarray(years, dtype=float)
    age = kernel.origin - years
    w = 2.0 ** (-age / kernel.tau)
    return np.where(age > kernel.window, 0.0, w)


def era_lowess(x, y, years, kernel, bandwidth=0.20, seed=0,
               max_resample=MAX_RESAMPLE, max_knots=MAX_KNOTS):
    """Era-weighted LOWESS via a weighted bootstrap.

    Points are resampled with replacement proportionally to their era
    weights (resample size ``min(3n, max_resample)``), then smoothed with
    the standard unweighted fit.  Deterministic for a given seed; the
    generator is counter-based so results do not depend on platform.
    """
    x = np.asarray(x, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    years = np.asarray(years, dtype=float).ravel()
    if not (x.shape == y.shape == years.shape):
        raise DataError("x, y and years must have equal length")
    w = era_weights(years, kernel)
    total = w.sum()
    if not total > 0:
        raise EmptyEraError("no observations carry positive era weight")
    m = min(3 * x.size, max_resample)
    rng = np.random.Generator(np.random.Philox(seed))
    idx = rng.choice(x.size, size=m, replace=True, p=w / total)
    return lowess(x[idx], y[idx], bandwidth=bandwidth, max_knots=max_knots)


# ----------------------------------------------------------------------
# Tangent tail extension
# ----------------------------------------------------------------------

@dataclass
class ExtendedFn:
    """SmoothFn continued past a frontier by its interior tangent.

    At or above the transition the base curve applies unchanged.  Over
    ``blend_width`` below it the curve eases into the tangent line via
    smoothstep, and further below it is exactly that line, so far
    extrapolations stay affine instead of saturating flat.
    """

    base: SmoothFn
    transition: float
    delta: float
    blend_width: float
    anchor: float = field(default=0.0)
    slope: float = field(default=0.0)

    @classmethod
    def build(cls, base, transition, delta=2.0, blend_width=3.0):
        lo, hi = base.knots[0], base.knots[-1]
        if transition < lo or transition + delta > hi:
            raise TailConfigError(
                f"transition {transition} with delta {delta} falls outside "
                f"the knot range [{lo}, {hi}]"
            )
        anchor = float(base(transition))
        slope = (anchor - float(base(transition + delta))) / (-delta)
        return cls(base=base, transition=float(transition), delta=float(delta),
                   blend_width=float(blend_width), anchor=anchor, slope=slope)

    def __call__(self, s):
        s = np.asarray(s, dtype=float)
        line = self.anchor + self.slope * (s - self.transition)
        t = np.clip((self.transition - s) / self.blend_width, 0.0, 1.0)
        w = t * t * (3.0 - 2.0 * t)
        out = (1.0 - w) * self.base(s) + w * line
        return out if out.ndim else float(out)

    def to_dict(self):
        return {"base": self.base.to_dict(), "transition": self.transition,
                "delta": self.delta, "blend_width": self.blend_width}

    @classmethod
    def from_dict(cls, d):
        return cls.build(SmoothFn.from_dict(d["base"]), d["transition"],
                         delta=d["delta"], blend_width=d["blend_width"])
