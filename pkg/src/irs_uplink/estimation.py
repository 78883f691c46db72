"""LMMSE estimation of the overall uplink channels under transceiver distortions.

With orthogonal pilots of length ``tau`` and power ``P``, the de-spread training
observation of UE ``k`` is

    r_k = h_k + sum_i a_i h_i + e + n,

where ``a_i ~ CN(0, kappa_UE/tau)`` comes from the UEs' transmit distortion,
``e`` given the channels is ``CN(0, (kappa_BS/tau) sum_i diag(|h_i|^2))`` from
the BS receive distortion, and ``n ~ CN(0, sigma^2/(tau P) I)``. The LMMSE
estimate is ``R_k Q_k r_k`` with

    Q_k = (R_k + (kappa_UE/tau) sum_i R_i + (kappa_BS/tau) sum_i I o R_i
           + sigma^2/(tau P) I)^{-1}.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .channel import ChannelDraw, NumericError, training_variates
from .scenario import Scenario

log = logging.getLogger(__name__)

_COND_WARN = 1e12


@dataclass(frozen=True)
class TrainingCoefficients:
    """Scalar weights of the training observation.

    Attributes
    ----------
    al : float
        Variance of each transmit-distortion coefficient, ``kappa_UE / tau``.
    be : float
        Receive-distortion weight, ``kappa_BS / tau``.
    c : float
        Effective noise variance, ``sigma^2 / (tau P)``.
    """

    al: float
    be: float
    c: float

    @classmethod
    def of(cls, scenario: Scenario) -> "TrainingCoefficients":
        tau = scenario.tau
        return cls(scenario.kappa_ue / tau, scenario.kappa_bs / tau,
                   scenario.sigma2 / (tau * scenario.P))

    @classmethod
    def ideal(cls) -> "TrainingCoefficients":
        return cls(0.0, 0.0, 0.0)


@dataclass(frozen=True)
class EstimatorState:
    """Per-UE LMMSE quantities, all stacked along a leading UE axis.

    Attributes
    ----------
    R : (K, M, M)
        Channel covariances the estimator was designed for.
    Q : (K, M, M)
        Inverse observation covariances.
    A : (K, M, M)
        ``Q_k R_k``; the estimate is ``A_k^H r_k`` so ``hhat_k^H h = r_k^H A_k h``.
    Psi : (K, M, M)
        Estimate covariances ``R_k Q_k R_k``.
    perfect : bool
        True when the state encodes perfect CSI (``Psi = R``, ``A = I``).
    """

    R: np.ndarray
    Q: np.ndarray
    A: np.ndarray
    Psi: np.ndarray
    perfect: bool = False

    @property
    def Psi_err(self) -> np.ndarray:
        """Error covariances ``R_k - Psi_k``."""
        return self.R - self.Psi

    @property
    def K(self) -> int:
        return self.R.shape[0]

    def nmse(self) -> np.ndarray:
        """Per-UE NMSE."""
        return np.array([nmse(self.Psi[k], self.R[k]) for k in range(self.K)])


def observation_covariance(R_all: np.ndarray, scenario: Scenario, k: int,
                           coeffs: TrainingCoefficients | None = None) -> np.ndarray:
    """``Q_k^{-1}``, the covariance of the training observation of UE ``k``."""
    co = TrainingCoefficients.of(scenario) if coeffs is None else coeffs
    Rsum = R_all.sum(axis=0)
    M = R_all.shape[-1]
    return (R_all[k] + co.al * Rsum + co.be * np.diag(np.real(np.diag(Rsum)))
            + co.c * np.eye(M))


def _hermitian_inverse(Omega: np.ndarray, op: str) -> np.ndarray:
    Omega = 0.5 * (Omega + Omega.conj().T)
    M = Omega.shape[0]
    try:
        Q = scipy.linalg.solve(Omega, np.eye(M), assume_a="pos")
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError):
        w = np.linalg.eigvalsh(Omega)
        log.warning("%s: observation covariance not positive definite (min eig %.3e); "
                    "using pseudo-inverse", op, w[0])
        Q = np.linalg.pinv(Omega, hermitian=True)
        if not np.all(np.isfinite(Q)) or not np.any(Q):
            raise NumericError(op, "observation covariance is singular")
    else:
        w = np.linalg.eigvalsh(Omega)
        if w[0] <= 0 or w[-1] / w[0] > _COND_WARN:
            log.warning("%s: ill-conditioned observation covariance (cond %.3e)",
                        op, w[-1] / max(w[0], np.finfo(float).tiny))
    return 0.5 * (Q + Q.conj().T)


def compute_Q(R_all: np.ndarray, scenario: Scenario,
              coeffs: TrainingCoefficients | None = None) -> np.ndarray:
    """Inverse observation covariances ``Q_k`` for every UE, shape ``(K, M, M)``."""
    co = TrainingCoefficients.of(scenario) if coeffs is None else coeffs
    return np.stack([_hermitian_inverse(observation_covariance(R_all, scenario, k, co),
                                        f"estimation.compute_Q[k={k}]")
                     for k in range(R_all.shape[0])])


def estimator_state(R_all: np.ndarray, scenario: Scenario) -> EstimatorState:
    """LMMSE state for covariances ``R_all``."""
    Q = compute_Q(R_all, scenario)
    A = Q @ R_all
    Psi = R_all @ A
    Psi = 0.5 * (Psi + np.conj(np.swapaxes(Psi, -1, -2)))
    return EstimatorState(R_all, Q, A, Psi)


def perfect_csi_state(R_all: np.ndarray) -> EstimatorState:
    """State with zero estimation error: ``Psi_k = R_k`` and ``hhat_k = h_k``."""
    K, M, _ = R_all.shape
    eye = np.broadcast_to(np.eye(M, dtype=complex), (K, M, M)).copy()
    return EstimatorState(R_all, eye, eye, R_all.copy(), perfect=True)


def training_observation(draw: ChannelDraw, scenario: Scenario, rng: np.random.Generator,
                         k: int) -> np.ndarray:
    """Sample the de-spread training observation ``r_k`` for one channel draw.

    The variates are drawn from ``rng`` in the order transmit distortion (K),
    receive distortion (M), noise (M).
    """
    K, M = draw.h.shape[-2:]
    z_t, z_r, z_w = training_variates(rng, K, M)
    return training_observation_from_variates(draw.h, scenario, k, z_t, z_r, z_w)


def training_observation_from_variates(h: np.ndarray, scenario: Scenario, k: int,
                                       z_t: np.ndarray, z_r: np.ndarray,
                                       z_w: np.ndarray) -> np.ndarray:
    """``r_k`` from the channels ``h`` (..., K, M) and standard complex Gaussians.

    ``z_t`` has shape (..., K), ``z_r`` and ``z_w`` have shape (..., M). Leading
    axes broadcast, so the Monte-Carlo engine can form many trials at once.
    """
    co = TrainingCoefficients.of(scenario)
    r = h[..., k, :] + np.einsum("...i,...im->...m", np.sqrt(co.al) * z_t, h)
    ups = co.be * np.sum(np.abs(h) ** 2, axis=-2)
    return r + np.sqrt(ups) * z_r + np.sqrt(co.c) * z_w


def lmmse_estimate(r_k: np.ndarray, R_k: np.ndarray, Q_k: np.ndarray) -> np.ndarray:
    """``hhat_k = R_k Q_k r_k``; ``r_k`` may carry leading batch axes."""
    return np.einsum("ab,...b->...a", R_k @ Q_k, r_k)


def nmse(Psi_k: np.ndarray, R_k: np.ndarray) -> float:
    """``1 - tr(Psi_k) / tr(R_k)``."""
    tr_R = float(np.real(np.trace(R_k)))
    if tr_R <= 0:
        raise ValueError("nmse needs tr(R_k) > 0")
    return float(1.0 - np.real(np.trace(Psi_k)) / tr_R)
