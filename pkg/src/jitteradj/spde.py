"""Matérn (nu = 1) fields through the SPDE/FEM precision, and the PC prior."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.special import kv

from .errors import InvalidInputError, NumericalError
from .linalg import NotPositiveDefinite, SparseCholesky
from .mesh import FemMatrices

SQRT8 = np.sqrt(8.0)


@dataclass(frozen=True)
class Hyperparameters:
    """Internal hyperparameter scale ``(log sigma^2, log rho)``."""

    log_sigma2: float
    log_rho: float

    def __post_init__(self):
        if not (np.isfinite(self.log_sigma2) and np.isfinite(self.log_rho)):
            raise InvalidInputError("hyperparameters must be finite")

    @classmethod
    def from_natural(cls, sigma2: float, rho: float) -> "Hyperparameters":
        return cls(float(np.log(sigma2)), float(np.log(rho)))

    @property
    def sigma2(self) -> float:
        return float(np.exp(self.log_sigma2))

    @property
    def rho(self) -> float:
        return float(np.exp(self.log_rho))

    def as_array(self) -> np.ndarray:
        return np.array([self.log_sigma2, self.log_rho])


def kappa_tau(theta: Hyperparameters) -> tuple[float, float]:
    """SPDE parameters: ``kappa = sqrt(8)/rho`` and ``sigma^2 = 1/(4 pi tau^2 kappa^2)``."""
    kappa = SQRT8 / theta.rho
    tau = 1.0 / np.sqrt(4.0 * np.pi * theta.sigma2 * kappa**2)
    return float(kappa), float(tau)


@dataclass(frozen=True, eq=False)
class SpdePrecision:
    Q: sp.csc_matrix
    kappa: float
    tau: float

    def cholesky(self) -> SparseCholesky:
        return SparseCholesky(self.Q)

    def to_triplet_text(self) -> str:
        """Upper triangle of ``Q`` as ``row col value`` lines (0-based)."""
        T = sp.triu(self.Q, format="coo")
        order = np.lexsort((T.col, T.row))
        return "".join(f"{int(T.row[k])} {int(T.col[k])} {float(T.data[k])!r}\n" for k in order)


def precision(fem: FemMatrices, theta: Hyperparameters, check: bool = True) -> SpdePrecision:
    """``Q = tau^2 (kappa^4 C + 2 kappa^2 G + G C^-1 G)`` for smoothness nu = 1."""
    kappa, tau = kappa_tau(theta)
    Q = (tau**2) * (kappa**4 * fem.C + (2.0 * kappa**2) * fem.G + fem.G_Cinv_G)
    Q = sp.csc_matrix(Q)
    if check:
        try:
            SparseCholesky(Q)
        except NotPositiveDefinite:
            raise NumericalError(
                f"SPDE precision is not positive definite at theta={theta}", theta=theta
            ) from None
    return SpdePrecision(Q, kappa, tau)


def matern_covariance(d, sigma2: float, rho: float):
    """Matérn covariance with smoothness 1: ``sigma2 * x K1(x)``, ``x = sqrt(8) d / rho``."""
    d = np.asarray(d, dtype=float)
    x = SQRT8 * d / rho
    with np.errstate(invalid="ignore", over="ignore"):
        val = sigma2 * x * kv(1, x)
    val = np.where(x == 0, sigma2, val)
    val = np.where(np.isinf(x), 0.0, val)
    return val if val.ndim else float(val)


def matern_correlation(d, rho: float):
    return matern_covariance(d, 1.0, rho)


@dataclass(frozen=True)
class PcPriorConfig:
    """PC prior with ``P(rho < R0) = alpha_rho`` and ``P(sigma > S0) = alpha_sigma``."""

    R0: float = 160.0
    S0: float = 1.0
    alpha_rho: float = 0.5
    alpha_sigma: float = 0.05

    def __post_init__(self):
        if not (self.R0 > 0 and self.S0 > 0):
            raise InvalidInputError("R0 and S0 must be positive")
        if not (0 < self.alpha_rho < 1 and 0 < self.alpha_sigma < 1):
            raise InvalidInputError("PC prior tail probabilities must lie in (0, 1)")

    @property
    def lambda_rho(self) -> float:
        # d = 2: lambda_rho = -log(alpha_rho) * R0^(d/2)
        return -np.log(self.alpha_rho) * self.R0

    @property
    def lambda_sigma(self) -> float:
        return -np.log(self.alpha_sigma) / self.S0

    def rho_cdf(self, rho):
        rho = np.asarray(rho, dtype=float)
        return np.exp(-self.lambda_rho / rho)

    def sigma_cdf(self, sigma):
        sigma = np.asarray(sigma, dtype=float)
        return -np.expm1(-self.lambda_sigma * sigma)


def pc_prior_logdensity_natural(rho, sigma, cfg: PcPriorConfig):
    """Joint PC prior density of ``(rho, sigma)`` on the natural scale (log)."""
    lr, ls = cfg.lambda_rho, cfg.lambda_sigma
    rho = np.asarray(rho, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    return np.log(lr) - 2.0 * np.log(rho) - lr / rho + np.log(ls) - ls * sigma


def pc_prior_logdensity(theta: Hyperparameters, cfg: PcPriorConfig) -> float:
    """Log density on ``(log sigma^2, log rho)`` including the change of variables.

    With ``rho = e^{t2}`` and ``sigma = e^{t1 / 2}`` the Jacobian is ``rho * sigma / 2``.
    """
    rho = theta.rho
    sigma = np.sqrt(theta.sigma2)
    jac = np.log(rho) + np.log(sigma) - np.log(2.0)
    return float(pc_prior_logdensity_natural(rho, sigma, cfg) + jac)
