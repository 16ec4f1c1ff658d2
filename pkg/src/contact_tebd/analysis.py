"""Power-law fits, error bars and derived exponents.

All fits are unweighted least squares in natural-log space. ``FitResult.exponent``
is always the raw log-log slope; callers flip the sign for decaying
observables (``P_sur ~ t^-delta``).
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, replace
from typing import Mapping, Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray

METHODS = ("chi_difference", "bootstrap_2sigma", "propagated", "none")
MIN_POINTS = 5


class FitError(ValueError):
    """Raised when a fit cannot be performed on the requested data or window."""


@dataclass(frozen=True)
class FitResult:
    """Slope and amplitude of ``y = amplitude * t**exponent`` on ``window``."""

    exponent: float
    amplitude: float
    window: tuple[float, float]
    residual_rms: float
    error: float = 0.0
    method: str = "none"
    n_points: int = 0

    def __post_init__(self) -> None:
        if self.method not in METHODS:
            raise ValueError(f"unknown error method {self.method!r}")
        object.__setattr__(self, "window", (float(self.window[0]), float(self.window[1])))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["window"] = list(self.window)
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> FitResult:
        d = dict(d)
        d["window"] = tuple(d["window"])
        return cls(**d)


def _window_mask(t: NDArray, window: tuple[float, float]) -> NDArray[np.bool_]:
    lo, hi = window
    if not lo < hi:
        raise FitError(f"empty fit window [{lo}, {hi}]")
    tol = 1e-9 * max(1.0, abs(hi))
    if t.size == 0 or lo < t.min() - tol or hi > t.max() + tol:
        rng = (float(t.min()), float(t.max())) if t.size else (math.nan, math.nan)
        raise FitError(f"fit window [{lo}, {hi}] lies outside the data range [{rng[0]}, {rng[1]}]")
    return (t >= lo - tol) & (t <= hi + tol)


def powerlaw_fit(t: ArrayLike, y: ArrayLike, window: tuple[float, float]) -> FitResult:
    """Fit ``log y = log A + p log t`` over the points with ``t`` inside ``window``.

    Raises:
        FitError: if the window is outside the data, holds fewer than five
            points, or contains non-positive ``t`` or ``y``.
    """
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    if t.shape != y.shape or t.ndim != 1:
        raise FitError("t and y must be 1-d arrays of equal length")
    mask = _window_mask(t, window)
    tw, yw = t[mask], y[mask]
    if tw.size < MIN_POINTS:
        raise FitError(f"window {tuple(window)} holds {tw.size} points, need at least {MIN_POINTS}")
    if np.any(tw <= 0) or np.any(~np.isfinite(yw)) or np.any(yw <= 0):
        raise FitError(f"non-positive or non-finite data inside window {tuple(window)}")
    x, z = np.log(tw), np.log(yw)
    design = np.column_stack([x, np.ones_like(x)])
    (slope, intercept), *_ = np.linalg.lstsq(design, z, rcond=None)
    resid = z - (slope * x + intercept)
    return FitResult(
        exponent=float(slope),
        amplitude=float(np.exp(intercept)),
        window=tuple(window),
        residual_rms=float(np.sqrt(np.mean(resid**2))),
        n_points=int(tw.size),
    )


def chi_difference_error(fit_hi: FitResult, fit_half: FitResult) -> FitResult:
    """Attach ``|p_hi - p_half|`` as the error of the larger-chi fit."""
    if fit_hi.window != fit_half.window:
        raise FitError(f"fit windows differ: {fit_hi.window} vs {fit_half.window}")
    return replace(fit_hi, error=abs(fit_hi.exponent - fit_half.exponent), method="chi_difference")


def _resample_counts(n: int, n_resample: int, seed: int) -> NDArray[np.float64]:
    """How often each trajectory appears in each resample.

    Multinomial counts have exactly the distribution of drawing ``n``
    indices with replacement, and turn resampled means into one matrix product.
    """
    rng = np.random.default_rng(seed)
    return rng.multinomial(n, np.full(n, 1.0 / n), size=n_resample).astype(float)


def _resampled_means(samples: NDArray, counts: NDArray) -> NDArray[np.float64]:
    return counts @ samples / samples.shape[0]


def bootstrap_slope(
    times: ArrayLike,
    samples: ArrayLike,
    window: tuple[float, float],
    n_resample: int = 1000,
    seed: int = 0,
) -> FitResult:
    """Fit the ensemble mean and bootstrap the slope over whole trajectories.

    Args:
        times: measurement times, shape ``(n_times,)``.
        samples: per-trajectory series, shape ``(n_traj, n_times)``.
        window: fit window in units of ``1/gamma``.
        n_resample: number of resampled ensembles.
        seed: RNG seed for the resampling.

    Returns:
        The fit of the full-ensemble mean with ``error`` equal to twice the
        standard deviation of the resampled slopes.
    """
    times = np.asarray(times, dtype=float)
    samples = np.atleast_2d(np.asarray(samples, dtype=float))
    if samples.shape[1] != times.size:
        raise FitError("samples must have shape (n_traj, n_times)")
    base = powerlaw_fit(times, samples.mean(axis=0), window)
    mask = _window_mask(times, window)
    counts = _resample_counts(samples.shape[0], n_resample, seed)
    slopes = _slopes(times[mask], _resampled_means(samples[:, mask], counts))
    err = float(2.0 * slopes.std(ddof=1)) if n_resample > 1 else 0.0
    return replace(base, error=err, method="bootstrap_2sigma")


TRAJECTORY_OBSERVABLES = ("P_sur", "N_a", "n_seed", "survival_overlap", "S")


def bootstrap_exponent(
    source,
    observable: str,
    window: tuple[float, float],
    n_resample: int = 1000,
    seed: int = 0,
) -> FitResult:
    """Bootstrap the slope of ``observable`` from an ensemble store or its stats.

    ``source`` is an :class:`~contact_tebd.qjmc.EnsembleStore`, an
    :class:`~contact_tebd.qjmc.EnsembleStats` or a path to a store.

    Raises:
        FitError: if ``observable`` is not recorded per trajectory.
    """
    from .qjmc import EnsembleStats, EnsembleStore

    if observable not in TRAJECTORY_OBSERVABLES:
        raise FitError(f"observable {observable!r} is not available per trajectory; choose from {TRAJECTORY_OBSERVABLES}")
    if isinstance(source, EnsembleStats):
        stats = source
    else:
        store = source if isinstance(source, EnsembleStore) else EnsembleStore(source)
        stats = store.stats()
    return bootstrap_slope(stats.times, stats.samples[observable], window, n_resample, seed)


def _slopes(t: NDArray, ys: NDArray) -> NDArray[np.float64]:
    """Vectorized log-log slopes of many series sampled on the same ``t``."""
    if np.any(ys <= 0):
        raise FitError("a resampled mean series is non-positive inside the window")
    x = np.log(t)
    xc = x - x.mean()
    z = np.log(ys)
    return (z - z.mean(axis=1, keepdims=True)) @ xc / np.dot(xc, xc)


def propagate_z(theta_fit: FitResult, seed_slope_fit: FitResult) -> FitResult:
    """Dynamical exponent from ``n_seed ~ t^(Theta - 1/z)``.

    ``z = 1 / (Theta - s)`` with first-order error ``z**2 * hypot(err_Theta, err_s)``.

    Raises:
        FitError: if ``Theta - s <= 0``.
    """
    gap = theta_fit.exponent - seed_slope_fit.exponent
    if not gap > 0:
        raise FitError(f"Theta - s = {gap:.4g} <= 0; no physical z")
    z = 1.0 / gap
    err = z * z * math.hypot(theta_fit.error, seed_slope_fit.error)
    return FitResult(
        exponent=z,
        amplitude=float("nan"),
        window=theta_fit.window,
        residual_rms=max(theta_fit.residual_rms, seed_slope_fit.residual_rms),
        error=err,
        method="propagated",
        n_points=min(theta_fit.n_points, seed_slope_fit.n_points),
    )


@dataclass(frozen=True)
class JointBootstrap:
    """Bootstrapped ``delta``, ``Theta``, seed slope and ``z`` from the same resamples."""

    delta: FitResult
    theta: FitResult
    seed_slope: FitResult
    z: FitResult

    def to_dict(self) -> dict:
        return {k: getattr(self, k).to_dict() for k in ("delta", "theta", "seed_slope", "z")}


def joint_bootstrap(
    times: ArrayLike,
    p_sur: ArrayLike,
    n_a: ArrayLike,
    n_seed: ArrayLike,
    window: tuple[float, float],
    n_resample: int = 1000,
    seed: int = 0,
) -> JointBootstrap:
    """Bootstrap all trajectory exponents with shared resampled index sets.

    ``delta`` is reported as the positive number ``-slope(P_sur)``. ``z`` is
    computed per resample so correlations between ``Theta`` and the seed
    slope are carried into its error.
    """
    times = np.asarray(times, dtype=float)
    arrays = [np.atleast_2d(np.asarray(a, dtype=float)) for a in (p_sur, n_a, n_seed)]
    n = arrays[0].shape[0]
    if any(a.shape != arrays[0].shape for a in arrays):
        raise FitError("p_sur, n_a and n_seed must share the (n_traj, n_times) shape")
    base = [powerlaw_fit(times, a.mean(axis=0), window) for a in arrays]
    mask = _window_mask(times, window)
    counts = _resample_counts(n, n_resample, seed)
    slopes = [_slopes(times[mask], _resampled_means(a[:, mask], counts)) for a in arrays]
    ddof = 1 if n_resample > 1 else 0

    def err(v: NDArray) -> float:
        return float(2.0 * v.std(ddof=ddof)) if n_resample > 1 else 0.0

    fd, ft, fs = base
    delta = replace(fd, exponent=-fd.exponent, error=err(slopes[0]), method="bootstrap_2sigma")
    theta = replace(ft, error=err(slopes[1]), method="bootstrap_2sigma")
    seed_slope = replace(fs, error=err(slopes[2]), method="bootstrap_2sigma")
    gap = theta.exponent - seed_slope.exponent
    if not gap > 0:
        raise FitError(f"Theta - s = {gap:.4g} <= 0; no physical z")
    gaps = slopes[1] - slopes[2]
    good = gaps > 0
    z_samples = 1.0 / gaps[good]
    z = FitResult(
        exponent=1.0 / gap,
        amplitude=float("nan"),
        window=theta.window,
        residual_rms=max(theta.residual_rms, seed_slope.residual_rms),
        error=err(z_samples) if z_samples.size > 1 else float("inf"),
        method="bootstrap_2sigma",
        n_points=theta.n_points,
    )
    return JointBootstrap(delta, theta, seed_slope, z)


@dataclass(frozen=True)
class Significance:
    value: float
    reference: float
    label: str
    standard_error: float
    n_sigma: float

    def __str__(self) -> str:
        return f"{self.value:.4g} vs {self.label} {self.reference:.4g}: {self.n_sigma:.2f} standard errors"


def compare_to_reference(fit: FitResult | float, reference_value: float, reference_label: str, error: float | None = None) -> Significance:
    """Distance of a fitted exponent from a reference in standard errors.

    For bootstrap fits the stored error is two standard deviations, so the
    standard error is ``error / 2``. A bare float may be passed together with
    an explicit two-sigma ``error``.
    """
    if isinstance(fit, FitResult):
        value, two_sigma = fit.exponent, fit.error
    else:
        value, two_sigma = float(fit), float(error or 0.0)
    se = two_sigma / 2.0
    diff = value - reference_value
    if se > 0:
        n_sigma = diff / se
    else:
        n_sigma = 0.0 if diff == 0 else math.copysign(math.inf, diff)
    return Significance(value, float(reference_value), reference_label, se, n_sigma)


def write_fits(path, fits: Mapping[str, object]) -> None:
    """JSON dump of fit results; values may be fits, plain mappings or scalars."""
    out = {}
    for k, v in fits.items():
        out[k] = v.to_dict() if hasattr(v, "to_dict") else v
    with open(path, "w") as fh:
        json.dump(out, fh, indent=2, sort_keys=True)
        fh.write("\n")


# 1d directed-percolation exponents used as reference values.
DP_1D = {"delta": 0.16, "theta": 0.31, "z": 1.58}
DP_2D_DELTA = 0.45


def summary_table(rows: Sequence[Mapping[str, object]]) -> str:
    """Plain-text table with columns ``label | delta | z | Theta``.

    Each row maps ``label`` and optionally ``delta``, ``z``, ``theta`` to
    either a number or a :class:`FitResult`.
    """

    def cell(v: object) -> str:
        if v is None:
            return "-"
        if isinstance(v, FitResult):
            return f"{v.exponent:.3f}" if v.error == 0 else f"{v.exponent:.3f} +- {v.error:.3f}"
        return f"{float(v):.3f}"

    header = ["", "delta", "z", "Theta"]
    body = [[str(r.get("label", "")), cell(r.get("delta")), cell(r.get("z")), cell(r.get("theta"))] for r in rows]
    widths = [max(len(x) for x in col) for col in zip(header, *body)]
    fmt = lambda cols: " | ".join(c.ljust(w) for c, w in zip(cols, widths))  # noqa: E731
    lines = [fmt(header), "-+-".join("-" * w for w in widths)] + [fmt(b) for b in body]
    return "\n".join(lines) + "\n"
