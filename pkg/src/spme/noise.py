"""Cylindrical Wiener increments and diagonal Hilbert--Schmidt diffusion.

The diffusion operator acts mode-by-mode: coefficient ``k`` of ``B(X) dW``
is ``rho(|X|_H) * sigma_k * dW_k``, where ``rho`` is an optional bounded,
Lipschitz scalar factor (``rho = 1`` gives additive noise).  Since the modes
``s_k / sqrt(lam_k)`` are H-orthonormal, the squared Hilbert--Schmidt norm of
``B`` into H is the closed form ``rho^2 * sum_k sigma_k^2 / lam_k``.

Randomness policy: every path owns a child stream derived from
``SeedSequence([master_seed, path_idx])``, so ensembles are reproducible no
matter how paths are scheduled or how the time axis is chunked.  Refining a
path to step ``dt/2`` uses a Brownian-bridge split whose midpoint draws come
from a separate stream keyed by the refinement level; the two half-step
increments always sum back to the coarse increment.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .triple import Field, SpectralDomain, h_norm


@dataclass(frozen=True)
class RhoFactor:
    """Multiplicative amplitude rho(x) = rho_min + (rho_max - rho_min)/(1 + x).

    Defined for x >= 0 (the H-norm of the state).  The family is bounded in
    [rho_min, rho_max] and Lipschitz with constant rho_max - rho_min; the
    choice rho_min=0, rho_max=1 reproduces the reference factor 1/(1+x).
    """

    rho_min: float
    rho_max: float

    def __post_init__(self):
        if not (0.0 <= self.rho_min <= self.rho_max) or not math.isfinite(self.rho_max):
            raise ValueError("need 0 <= rho_min <= rho_max < inf")

    @property
    def lipschitz(self) -> float:
        return self.rho_max - self.rho_min

    def __call__(self, x):
        return self.rho_min + (self.rho_max - self.rho_min) / (1.0 + x)


@dataclass(frozen=True)
class NoiseSpec:
    """Per-mode amplitudes sigma_k >= 0 plus an optional multiplicative factor."""

    sigma: tuple
    mult: RhoFactor | None = None

    def __post_init__(self):
        sig = tuple(float(s) for s in self.sigma)
        if len(sig) == 0:
            raise ValueError("need at least one mode amplitude")
        if any(not math.isfinite(s) or s < 0.0 for s in sig):
            raise ValueError("mode amplitudes must be finite and >= 0")
        object.__setattr__(self, "sigma", sig)

    @property
    def n_modes(self) -> int:
        return len(self.sigma)

    @property
    def lipschitz(self) -> float:
        """Lipschitz constant of x -> rho(x) (0 for additive noise)."""
        return 0.0 if self.mult is None else self.mult.lipschitz

    def sigma_array(self) -> np.ndarray:
        return np.asarray(self.sigma, dtype=float)


def power_decay_sigma(n_modes: int, sigma0: float, beta: float) -> NoiseSpec:
    """Additive spec with sigma_k = sigma0 * k^(-beta), k = 1..n_modes."""
    k = np.arange(1, n_modes + 1, dtype=float)
    return NoiseSpec(sigma=tuple(sigma0 * k**-beta))


def rho_factor(spec: NoiseSpec, h_norm_value):
    """rho evaluated at one or many H-norms (1.0 when the spec is additive)."""
    x = np.asarray(h_norm_value, dtype=float)
    out = np.ones_like(x) if spec.mult is None else spec.mult(x)
    return float(out) if np.isscalar(h_norm_value) or x.ndim == 0 else out


def hs0_sq(spec: NoiseSpec, dom: SpectralDomain) -> float:
    """Baseline squared HS norm sum_k sigma_k^2 / lam_k (the rho=1 value)."""
    if spec.n_modes > dom.n_grid:
        raise ValueError(
            f"noise has {spec.n_modes} modes but the domain only {dom.n_grid}"
        )
    sig = spec.sigma_array()
    return float(np.sum(sig**2 / dom.lam[: spec.n_modes]))


def hs_norm_sq(spec: NoiseSpec, dom: SpectralDomain, X: Field) -> float:
    """Squared HS norm of B at state X: rho(|X|_H)^2 * sum sigma_k^2/lam_k."""
    return rho_factor(spec, h_norm(dom, X)) ** 2 * hs0_sq(spec, dom)


def sample_increment(spec: NoiseSpec, dt: float, rng: np.random.Generator) -> np.ndarray:
    """One vector of independent N(0, dt) mode increments (zeros when dt=0)."""
    if dt < 0.0:
        raise ValueError("dt must be >= 0")
    return rng.normal(0.0, math.sqrt(dt), size=spec.n_modes)


def apply_B(spec: NoiseSpec, dom: SpectralDomain, X: Field, dW: np.ndarray) -> Field:
    """The field B(X) dW, i.e. spectral coefficients rho(|X|_H)*sigma_k*dW_k."""
    dW = np.asarray(dW, dtype=float)
    if dW.shape != (spec.n_modes,):
        raise ValueError(f"expected {spec.n_modes} increments, got shape {dW.shape}")
    rho = rho_factor(spec, h_norm(dom, X))
    coeffs = np.zeros(dom.n_grid)
    coeffs[: spec.n_modes] = rho * spec.sigma_array() * dW
    return Field.from_coeffs(dom, coeffs)


# ---------------------------------------------------------------------------
# Increment streams
# ---------------------------------------------------------------------------


def path_stream(master_seed: int, path_idx: int) -> np.random.Generator:
    """The base increment stream of one path (child of the master seed)."""
    return np.random.default_rng(np.random.SeedSequence([master_seed, path_idx]))


def _bridge_stream(master_seed: int, path_idx: int, level: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([master_seed, path_idx, level]))


def increments_for_path(
    spec: NoiseSpec, n_steps: int, dt: float, master_seed: int, path_idx: int
) -> np.ndarray:
    """All increments of one path, shape (n_steps, n_modes), row per step.

    Rows are drawn in C order from the path stream, so generating the array
    in one call or in sequential row chunks yields identical numbers.
    """
    rng = path_stream(master_seed, path_idx)
    return rng.normal(0.0, math.sqrt(dt), size=(n_steps, spec.n_modes))


def refine_increments(
    dW: np.ndarray, dt: float, master_seed: int, path_idx: int, level: int = 1
) -> np.ndarray:
    """Split step-dt increments into step-dt/2 halves along the same path.

    Brownian bridge: each coarse increment D becomes (D/2 + z, D/2 - z) with
    z ~ N(0, dt/4) drawn from the level-keyed stream, so the halves have the
    correct dt/2 variance, are independent, and sum exactly to D.  Refining
    again (level+1) keeps all previously generated levels unchanged.
    """
    dW = np.asarray(dW, dtype=float)
    if dW.ndim != 2:
        raise ValueError("expected increments of shape (n_steps, n_modes)")
    n_steps, n_modes = dW.shape
    z = _bridge_stream(master_seed, path_idx, level).normal(
        0.0, 0.5 * math.sqrt(dt), size=(n_steps, n_modes)
    )
    fine = np.empty((2 * n_steps, n_modes))
    fine[0::2] = 0.5 * dW + z
    fine[1::2] = 0.5 * dW - z
    return fine
