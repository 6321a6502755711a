"""State estimation and residual-statistic laws.

The weighted sum of squared residuals (WSSR) of the least-squares state
estimate is the detection query everything downstream consumes. For the
unregularized model it follows a noncentral chi-square law whose degrees
of freedom equal the projector rank; the ridge variant is exactly a
weighted mixture of unit chi-squares exposed here through an SVD
decomposition, together with its cumulants and the moment-matched
Gaussian approximation with a computable sup-density error bound.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .exceptions import RankDeficiencyError
from .measurement_model import (
    MeasurementModel,
    StateVector,
    _attack_dense,
    _readonly,
    _state_dense,
    projection_matrix,
)
from .streams import as_generator


class Regime(enum.Enum):
    """Distributional regime of a residual statistic."""

    CHI_SQUARE = "chi_square"
    GAUSSIAN = "gaussian"


@dataclass(frozen=True)
class ResidualLaw:
    """Distribution descriptor of a WSSR-type query.

    Chi-square regime: degrees of freedom and noncentrality.
    Gaussian regime: mean and variance.
    """

    regime: Regime
    dof: float | None = None
    noncentrality: float | None = None
    mean: float | None = None
    variance: float | None = None

    def __post_init__(self):
        if self.regime is Regime.CHI_SQUARE:
            if self.dof is None or self.dof < 0:
                raise ValueError(f"chi-square law needs dof >= 0, got {self.dof}")
            if self.noncentrality is None or self.noncentrality < 0:
                raise ValueError(
                    f"noncentrality must be >= 0, got {self.noncentrality}"
                )
        else:
            if self.mean is None or self.variance is None or not self.variance > 0:
                raise ValueError("gaussian law needs a mean and variance > 0")

    @classmethod
    def chi_square(cls, dof: float, noncentrality: float = 0.0) -> "ResidualLaw":
        return cls(regime=Regime.CHI_SQUARE, dof=dof, noncentrality=noncentrality)

    @classmethod
    def gaussian(cls, mean: float, variance: float) -> "ResidualLaw":
        return cls(regime=Regime.GAUSSIAN, mean=mean, variance=variance)


@dataclass(frozen=True, eq=False)
class ChiMixture:
    """Weighted mixture of independent unit-dof noncentral chi-squares.

    The query equals sum_i d_i * y_i with y_i ~ chi2_1(theta_i^2),
    obtained by rotating the measurements into the left singular basis of
    H. Weights d are the diagonal of
    D = (I - S (lam sigma^2 I + S^T S)^{-1} S^T)^2; for lam = 0 they are
    0/1 with exactly m - n ones.
    """

    d: np.ndarray
    theta: np.ndarray
    u: np.ndarray
    singular_values: np.ndarray
    vt: np.ndarray

    def __post_init__(self):
        for name in ("d", "theta", "u", "singular_values", "vt"):
            object.__setattr__(self, name, _readonly(getattr(self, name)))
        if np.any(self.d < -1e-12) or np.any(self.d > 1 + 1e-12):
            raise ValueError("mixture weights must lie in [0, 1]")
        if self.d.shape != self.theta.shape:
            raise ValueError("weights and centers must have equal length")

    @property
    def m(self) -> int:
        return self.d.shape[0]

    def sample(self, rng, size: int) -> np.ndarray:
        """Draw the mixture directly: sum_i d_i (N(theta_i, 1))^2."""
        gen = as_generator(rng)
        z = gen.standard_normal((int(size), self.m)) + self.theta[None, :]
        return (z * z) @ self.d


# ---------------------------------------------------------------------------
# Estimation and residual statistics
# ---------------------------------------------------------------------------

def wls_estimate(model: MeasurementModel, z) -> StateVector:
    """Least-squares state estimate; ridge-regularized when lam > 0.

    Solves min_x sigma^{-2} ||z - H x||^2 + lam ||x||^2 through an
    augmented least-squares factorization (no normal equations formed).
    With lam = 0 this is the ordinary least-squares solution.
    """
    z = np.asarray(z, dtype=float)
    if z.shape != (model.m,):
        raise ValueError(f"z has shape {z.shape}, expected ({model.m},)")
    if model.lam == 0:
        x, _, rank, _ = np.linalg.lstsq(model.H, z, rcond=None)
        if rank < model.n:
            raise RankDeficiencyError("H lacks full column rank with lambda = 0")
    else:
        ridge = math.sqrt(model.lam) * model.sigma
        A = np.vstack([model.H, ridge * np.eye(model.n)])
        b = np.concatenate([z, np.zeros(model.n)])
        x, _, _, _ = np.linalg.lstsq(A, b, rcond=None)
    return StateVector(x)


def wssr(model: MeasurementModel, z) -> float | np.ndarray:
    """Weighted sum of squared residuals sigma^{-2} ||z - H x*||^2.

    Accepts a single measurement vector or a (trials, m) batch; returns a
    float or a length-trials array correspondingly. Always >= 0.
    """
    z = np.asarray(z, dtype=float)
    batch = z.ndim == 2
    Z = np.atleast_2d(z)
    if Z.shape[1] != model.m:
        raise ValueError(f"z has {Z.shape[1]} entries, expected m={model.m}")
    P = projection_matrix(model).matrix
    R = Z @ P.T
    out = np.einsum("ij,ij->i", R, R) / model.sigma**2
    return out if batch else float(out[0])


def residual_law(model: MeasurementModel, x, attack=None) -> ResidualLaw:
    """Chi-square-regime law of the WSSR under the given state and attack.

    Degrees of freedom are the projector's numerical rank. For lam = 0 the
    noncentrality is sigma^{-2} ||P a||^2, independent of the state; for
    lam > 0 it is sigma^{-2} (H x + a)^T P^2 (H x + a) and state-dependent.
    """
    proj = projection_matrix(model)
    a = _attack_dense(attack, model.m)
    if model.lam == 0:
        v = proj.matrix @ a
    else:
        v = proj.matrix @ (model.H @ _state_dense(x, model.n) + a)
    nc = float(v @ v) / model.sigma**2
    return ResidualLaw.chi_square(dof=float(proj.rank), noncentrality=nc)


def svd_projection(model: MeasurementModel) -> np.ndarray:
    """Residual projector rebuilt from the SVD of H.

    P = U (I - S (S^T S + lam sigma^2 I)^{-1} S^T) U^T. Serves as an
    independent construction against the factorization in
    ``projection_matrix``.
    """
    u, s, vt = np.linalg.svd(model.H, full_matrices=True)
    m, n = model.H.shape
    core = np.eye(m)
    shrink = s**2 / (s**2 + model.lam * model.sigma**2) if model.lam > 0 else np.ones_like(s)
    if model.lam == 0 and s.size and np.any(s <= max(m, n) * np.finfo(float).eps * s[0]):
        raise RankDeficiencyError("H^T H is numerically singular with lambda = 0")
    core[: s.size, : s.size] -= np.diag(shrink)
    return u @ core @ u.T


def chi_mixture(model: MeasurementModel, x, attack=None) -> ChiMixture:
    """SVD decomposition of the WSSR into weighted unit chi-squares.

    Centers are theta = (S V^T x + U^T a) / sigma, so that the rotated,
    noise-normalized measurements are unit-variance Gaussians around
    theta.
    """
    u, s, vt = np.linalg.svd(model.H, full_matrices=True)
    m, n = model.H.shape
    a = _attack_dense(attack, model.m)
    xv = _state_dense(x, model.n)

    dvec = np.ones(m)
    shrink = model.lam * model.sigma**2 / (s**2 + model.lam * model.sigma**2) \
        if model.lam > 0 else np.zeros_like(s)
    dvec[: s.size] = shrink**2 if model.lam > 0 else 0.0

    s_full = np.zeros((m, n))
    s_full[: s.size, : s.size] = np.diag(s)
    theta = (s_full @ (vt @ xv) + u.T @ a) / model.sigma
    return ChiMixture(d=dvec, theta=theta, u=u, singular_values=s, vt=vt)


# ---------------------------------------------------------------------------
# Cumulants and the Gaussian approximation
# ---------------------------------------------------------------------------

def cumulant(mix: ChiMixture, order: int) -> float:
    """Cumulant K_ell = 2^{ell-1} (ell-1)! sum_i d_i^ell (1 + ell theta_i^2).

    Supported for order 1..4: mean, variance, the skewness numerator, and
    the kurtosis diagnostic.
    """
    if not 1 <= order <= 4:
        raise ValueError(f"cumulant order must be in 1..4, got {order}")
    ell = int(order)
    return float(
        2 ** (ell - 1) * math.factorial(ell - 1)
        * np.sum(mix.d**ell * (1.0 + ell * mix.theta**2))
    )


@dataclass(frozen=True)
class GaussianApproximation:
    """Moment-matched Gaussian law for the mixture with quality diagnostics.

    ``sup_density_bound`` bounds the sup-norm gap between the density of
    the standardized query and the standard normal density:
    0.1323 (4 + 0.2503 / (1 - 8 rho)^2) / sqrt(zeta), available only when
    rho < 1/8. ``zeta`` is None when the third cumulant vanishes. The
    approximation becomes exact as rho -> 0 or zeta -> inf.
    """

    law: ResidualLaw
    rho: float
    zeta: float | None
    sup_density_bound: float | None

    @property
    def bound_available(self) -> bool:
        return self.sup_density_bound is not None


def normal_approx_bound(rho: float, zeta: float) -> float:
    """Sup-density error bound 0.1323 (4 + 0.2503/(1-8 rho)^2) / sqrt(zeta).

    Valid for rho < 1/8 and zeta > 0; nonnegative and decreasing in zeta.
    """
    if not rho < 0.125:
        raise ValueError(f"bound requires rho < 1/8, got {rho}")
    if not zeta > 0:
        raise ValueError(f"zeta must be > 0, got {zeta}")
    return 0.1323 * (4.0 + 0.2503 / (1.0 - 8.0 * rho) ** 2) / math.sqrt(zeta)


def gaussian_law(mix: ChiMixture) -> GaussianApproximation:
    """Gaussian-regime law N(K1, K2) of the mixture, with diagnostics."""
    k1 = cumulant(mix, 1)
    k2 = cumulant(mix, 2)
    k3 = cumulant(mix, 3)
    if not k2 > 0:
        raise ValueError("mixture has zero variance; no residual to approximate")
    rho = float(np.max(2.0 * mix.d**2 * (1.0 + 2.0 * mix.theta**2)) / k2)
    zeta = 8.0 * k2**3 / k3**2 if k3 != 0 else None
    bound = None
    if rho < 0.125 and zeta is not None:
        bound = normal_approx_bound(rho, zeta)
    return GaussianApproximation(
        law=ResidualLaw.gaussian(mean=k1, variance=k2),
        rho=rho,
        zeta=zeta,
        sup_density_bound=bound,
    )


def preferred_regime(mix: ChiMixture, rho_max: float = 0.125,
                     bound_max: float = 0.05) -> Regime:
    """Pick the working regime for a mixture.

    Gaussian when rho < rho_max and the sup-density bound is below
    ``bound_max``; chi-square otherwise. The chi-square analytics
    degenerate numerically for very many degrees of freedom, which is
    exactly when the bound becomes small.
    """
    approx = gaussian_law(mix)
    if approx.rho < rho_max and approx.sup_density_bound is not None \
            and approx.sup_density_bound < bound_max:
        return Regime.GAUSSIAN
    return Regime.CHI_SQUARE
