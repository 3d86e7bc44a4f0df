"""Super-Gaussian source densities and auxiliary-weight updates.

The unsupervised part of the objective scores unmixed sources x = W z with
a log-density penalty g and a log-determinant term::

    loss(W, z) = -log|det W| + (1/T) * sum_{c,t} g(x_{c,t})

Each supported g admits a quadratic variational upper bound
``g(x) = min_{u>0} (u x^2)/2 + f(u)``, which the solver exploits: given
per-entry auxiliary weights u the bound is quadratic in W.  The exact
minimizer is ``u = g'(x)/x``; a damped (proximal) variant stays near the
previous weights, which requires the penalty f in closed form.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

DEFAULT_U_MAX = 1e8


@dataclass(frozen=True)
class SuperGaussianDensity:
    """A source penalty g with its variational companion functions.

    ``f`` is the convex conjugate-style penalty such that
    ``g(x) = min_u u*x^2/2 + f(u)``; it is ``None`` when no closed form is
    implemented (the proximal aux update is then unavailable).
    """

    name: str
    g: Callable[[np.ndarray], np.ndarray]
    g_prime: Callable[[np.ndarray], np.ndarray]
    exact_weights: Callable[[np.ndarray, float], np.ndarray]
    f: Optional[Callable[[np.ndarray], np.ndarray]] = None

    @property
    def has_f(self) -> bool:
        return self.f is not None


def _laplace_weights(x, u_max):
    # u = g'(x)/x = 1/|x|, clamped to [0, u_max]
    ax = np.abs(x)
    with np.errstate(divide="ignore"):
        u = 1.0 / ax
    return np.minimum(u, u_max)


def _huber_g(x):
    ax = np.abs(x)
    return np.where(ax <= 1.0, 0.5 * x * x, ax - 0.5)


def _huber_weights(x, u_max):
    # g'(x)/x = 1 in the quadratic region, 1/|x| in the linear tails
    ax = np.abs(x)
    with np.errstate(divide="ignore"):
        tail = 1.0 / ax
    return np.minimum(np.where(ax <= 1.0, 1.0, tail), u_max)


LAPLACE = SuperGaussianDensity(
    name="laplace",
    g=np.abs,
    g_prime=np.sign,
    exact_weights=_laplace_weights,
    f=lambda u: 0.5 / u,
)

HUBER = SuperGaussianDensity(
    name="huber",
    g=_huber_g,
    g_prime=lambda x: np.clip(x, -1.0, 1.0),
    exact_weights=_huber_weights,
    f=None,
)

DENSITIES = {"laplace": LAPLACE, "huber": HUBER}


def get_density(name: str) -> SuperGaussianDensity:
    try:
        return DENSITIES[name]
    except KeyError:
        raise ValueError(
            f"unknown density {name!r}; choose from {sorted(DENSITIES)}") from None


def unsup_loss(logabsdet: float, sources: np.ndarray,
               density: SuperGaussianDensity) -> float:
    """Per-trial unsupervised loss -log|det W| + (1/T) sum g(x).

    Parameters
    ----------
    logabsdet : float
        log|det W| of the unmixing matrix that produced ``sources``.
    sources : ndarray, shape (C, T)
        Unmixed sources x = W z for one trial.
    """
    t = sources.shape[-1]
    return float(-logabsdet + density.g(sources).sum() / t)


def aux_exact(sources: np.ndarray, density: SuperGaussianDensity,
              u_max: float = DEFAULT_U_MAX) -> np.ndarray:
    """Exact auxiliary weights u = g'(x)/x, entrywise, clamped to u_max.

    These minimize the variational bound for fixed sources; works for any
    array shape.
    """
    return density.exact_weights(np.asarray(sources, dtype=np.float64), u_max)


def aux_proximal(sources: np.ndarray, u_prev: np.ndarray, eta_a: float,
                 density: SuperGaussianDensity,
                 u_max: float = DEFAULT_U_MAX,
                 tol: float = 1e-12, max_iter: int = 100) -> np.ndarray:
    """Damped auxiliary update: proximal point step on the bound in u.

    Minimizes, entrywise over u > 0::

        psi(u) = u*x^2/2 + f(u) + (u - u_prev)^2 / (2*eta_a)

    For the Laplace penalty (f(u) = 1/(2u)) psi is strictly convex with a
    unique positive stationary point, located by safeguarded Newton
    bisection on psi'(u) = x^2/2 - 1/(2u^2) + (u - u_prev)/eta_a.  The
    result is clamped to [0, u_max].  As ``eta_a`` grows the step
    approaches :func:`aux_exact`; small ``eta_a`` keeps u near ``u_prev``.

    Raises
    ------
    ValueError
        If the density has no closed-form f (e.g. huber) or eta_a <= 0.
    """
    if not density.has_f:
        raise ValueError(
            f"proximal aux update needs a closed-form f; density "
            f"{density.name!r} does not provide one")
    if not eta_a > 0.0:
        raise ValueError("eta_a must be positive")
    x2 = np.asarray(sources, dtype=np.float64) ** 2
    prev = np.asarray(u_prev, dtype=np.float64)
    if prev.shape != x2.shape:
        raise ValueError("u_prev shape must match sources")

    def dpsi(u):
        return 0.5 * x2 - 0.5 / (u * u) + (u - prev) / eta_a

    # Bracket the root: psi' < 0 near 0+; double hi until psi'(hi) >= 0.
    lo = np.full_like(x2, 1e-12)
    hi = np.maximum(prev, 1.0)
    for _ in range(200):
        bad = dpsi(hi) < 0.0
        if not bad.any():
            break
        hi = np.where(bad, 2.0 * hi, hi)
    u = 0.5 * (lo + hi)
    scale = np.maximum(1.0, 0.5 * x2 + np.abs(prev) / eta_a)
    for _ in range(max_iter):
        d = dpsi(u)
        if np.max(np.abs(d) / scale) <= tol:
            break
        lo = np.where(d < 0.0, u, lo)
        hi = np.where(d >= 0.0, u, hi)
        # psi''(u) = 1/u^3 + 1/eta_a > 0
        step = u - d / (1.0 / u**3 + 1.0 / eta_a)
        inside = (step > lo) & (step < hi)
        u = np.where(inside, step, 0.5 * (lo + hi))
    return np.minimum(u, u_max)


def variational_value(sources: np.ndarray, u: np.ndarray,
                      density: SuperGaussianDensity) -> np.ndarray:
    """Entrywise bound value u*x^2/2 + f(u); requires a closed-form f."""
    if not density.has_f:
        raise ValueError(f"density {density.name!r} has no closed-form f")
    x = np.asarray(sources, dtype=np.float64)
    return 0.5 * u * x * x + density.f(u)
