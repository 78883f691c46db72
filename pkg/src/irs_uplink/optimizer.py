"""Sum-SE gradient with respect to the reflection coefficients and projected gradient ascent.

The objective is only defined for unit-modulus coefficients, so the gradient
returned by :func:`grad_sum_se` is the conjugate-Wirtinger derivative of
``phi -> R(phi / |phi|)``. At a feasible point this is the tangential part

    q = d - phi * Re(conj(phi) * d)

of the derivative ``d`` of the smooth extension in which ``Theta`` enters
through ``G = H1 Theta``. The radial part never changes a feasible objective,
and removing it makes the uniform-phase-noise gradient vanish.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .channel import ChannelStatistics, RbmPhases, covariance_extension, effective_irs_correlation
from .estimation import TrainingCoefficients, compute_Q
from .ioutil import write_csv
from .performance import UatfModel
from .scenario import Scenario

log = logging.getLogger(__name__)

STATUSES = ("converged", "stalled", "zero_gradient", "max_iters")
TRACE_HEADER = ("iteration", "objective", "step", "grad_norm")

#: Gradients below this norm are treated as exactly zero.
ZERO_GRADIENT = 1e-12


def project_unit_modulus(s_tilde) -> np.ndarray:
    """``exp(j arg s)`` elementwise. Zero entries map to 1 (their phase is undefined)."""
    s = np.asarray(s_tilde, dtype=complex)
    out = np.ones_like(s)
    nz = s != 0
    # exp(j arg) rather than s/|s|: the division overflows for subnormal inputs
    out[nz] = np.exp(1j * np.angle(s[nz]))
    return out


def tangential(phi: np.ndarray, d: np.ndarray) -> np.ndarray:
    """Remove the radial component of a conjugate-Wirtinger derivative at ``phi``."""
    return d - phi * np.real(np.conj(phi) * d)


def trace_prod_derivative(A: np.ndarray, stats: ChannelStatistics, rbm: RbmPhases, k: int,
                          n: int | None = None):
    """``tr(A dR_k / d conj(phi_n))`` for a matrix ``A`` that does not depend on ``phi``.

    Uses ``R_k = beta_d R_BS + beta2 H1 Theta R~ Theta^H H1^H`` with the
    phase-noise-averaged IRS correlation ``R~ = m^2 R_IRS + (1 - m^2) I``, so
    the value is ``beta2 [H1^H A H1 Theta R~]_nn``. Returns the whole length-N
    vector when ``n`` is None.
    """
    Rt = stats.beta2[k] * effective_irs_correlation(stats.R_irs[k], stats.m)
    L = stats.H1.conj().T @ A @ stats.H1
    # [L Theta R~]_nn = sum_p L_np phi_p R~_pn
    v = np.einsum("np,p,pn->n", L, rbm.phi, Rt)
    return v if n is None else v[n]


def psi_trace_derivative(C: np.ndarray, stats: ChannelStatistics, rbm: RbmPhases,
                         scenario: Scenario, k: int, n: int | None = None):
    """``tr(C dPsi_k / d conj(phi_n))`` with ``Psi_k = R_k Q_k R_k``.

    ``Q_k`` depends on every ``R_i`` through the training distortions, so

        tr(C dPsi_k) = D_k(Q R C + C R Q - W) - al sum_i D_i(W) - be sum_i D_i(I o W)

    with ``W = Q R C R Q`` (all for UE ``k``) and ``D_i(X) = tr(X dR_i)``.
    """
    R_all = covariance_extension(stats, rbm.phi)
    Q = compute_Q(R_all, scenario)[k]
    R = R_all[k]
    co = TrainingCoefficients.of(scenario)
    W = Q @ R @ C @ R @ Q
    out = trace_prod_derivative(Q @ R @ C + C @ R @ Q - W, stats, rbm, k)
    Wd = np.diag(np.diag(W))
    for i in range(stats.K):
        out = out - trace_prod_derivative(co.al * W + co.be * Wd, stats, rbm, i)
    return out if n is None else out[n]


def sum_se_value(stats: ChannelStatistics, rbm: RbmPhases, scenario: Scenario, *,
                 form: str = "exact", perfect_csi: bool = False) -> float:
    return UatfModel(stats, rbm.phi, scenario, form=form, perfect_csi=perfect_csi).sum_se()


def grad_sum_se(stats: ChannelStatistics, rbm: RbmPhases, scenario: Scenario, *,
                form: str = "exact", perfect_csi: bool = False) -> np.ndarray:
    """Tangential conjugate-Wirtinger gradient ``q_n = dR / d conj(phi_n)`` of the sum SE."""
    model = UatfModel(stats, rbm.phi, scenario, form=form, perfect_csi=perfect_csi)
    return tangential(model.phi, model.sum_se_gradient())


def _model(stats, phi, scenario, form, perfect_csi) -> UatfModel:
    return UatfModel(stats, phi, scenario, form=form, perfect_csi=perfect_csi)


def _gradient(model: UatfModel) -> np.ndarray:
    return tangential(model.phi, model.sum_se_gradient())


@dataclass(frozen=True)
class OptimizerConfig:
    """Projected-gradient-ascent settings.

    Attributes
    ----------
    epsilon : float
        Stop when ``|R^{i+1} - R^i|^2 < epsilon``.
    max_iters : int
    ls_alpha : float
        Sufficient-increase fraction of the backtracking test.
    ls_beta : float
        Step shrink factor.
    mu0 : float
        First trial step of every line search. The sum-SE gradient is small
        in absolute terms (a few hundredths per element on the default
        deployment), so a unit first step moves the phases by only a few
        hundredths of a radian and the objective-change test stops the run
        after one iteration. The default lets backtracking pick the scale.
    max_backtracks : int
        Shrinks allowed per line search before the run is declared stalled.
    """

    epsilon: float = 1e-4
    max_iters: int = 200
    ls_alpha: float = 0.3
    ls_beta: float = 0.5
    mu0: float = 1e3
    max_backtracks: int = 60

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be > 0")
        if not 0 < self.ls_alpha < 0.5:
            raise ValueError("ls_alpha must lie in (0, 0.5)")
        if not 0 < self.ls_beta < 1:
            raise ValueError("ls_beta must lie in (0, 1)")
        if not self.mu0 > 0:
            raise ValueError("mu0 must be > 0")
        if self.max_iters < 1 or self.max_backtracks < 1:
            raise ValueError("max_iters and max_backtracks must be >= 1")


@dataclass
class OptimizerTrace:
    """Accepted iterates of one run; index 0 is the starting point."""

    phases: list = field(default_factory=list)
    objective: list = field(default_factory=list)
    grad_norm: list = field(default_factory=list)
    step: list = field(default_factory=list)
    status: str = "max_iters"

    @property
    def accepted_steps(self) -> int:
        return len(self.objective) - 1

    @property
    def iterations(self) -> int:
        """Iterations executed. A run stopped by a zero gradient at the start counts one."""
        return max(1, self.accepted_steps) if self.status == "zero_gradient" else \
            self.accepted_steps + (self.status == "stalled")

    @property
    def final_phases(self) -> np.ndarray:
        return self.phases[-1]

    @property
    def final_rbm(self) -> RbmPhases:
        return RbmPhases(self.phases[-1])

    @property
    def final_objective(self) -> float:
        return self.objective[-1]

    @property
    def initial_objective(self) -> float:
        return self.objective[0]

    def rows(self):
        return [(i, self.objective[i], self.step[i], self.grad_norm[i])
                for i in range(len(self.objective))]

    def to_csv(self, path: str | Path) -> Path:
        return write_csv(path, TRACE_HEADER, self.rows())


def run_pga(stats: ChannelStatistics, scenario: Scenario, config: OptimizerConfig | None = None,
            s0=None, *, form: str = "exact", perfect_csi: bool = False) -> OptimizerTrace:
    """Maximise the sum SE over unit-modulus reflection coefficients.

    Each iteration takes ``s + mu q``, projects it onto the unit circle and
    accepts the first ``mu = mu0 * ls_beta^j`` passing the sufficient-increase
    test ``R(new) >= R(s) + ls_alpha * mu * |q|^2``. A line search that runs out
    of shrinks ends the run with status ``"stalled"`` at the best iterate.
    """
    cfg = OptimizerConfig() if config is None else config
    s = RbmPhases.default(stats.N).phi if s0 is None else RbmPhases(
        s0.phi if isinstance(s0, RbmPhases) else s0).phi
    model = _model(stats, s, scenario, form, perfect_csi)
    f, q = model.sum_se(), _gradient(model)
    gn = float(np.linalg.norm(q))
    trace = OptimizerTrace([s.copy()], [f], [gn], [0.0])
    if gn <= ZERO_GRADIENT:
        trace.status = "zero_gradient"
        return trace
    for it in range(1, cfg.max_iters + 1):
        mu = cfg.mu0
        for _ in range(cfg.max_backtracks):
            cand = project_unit_modulus(s + mu * q)
            model = _model(stats, cand, scenario, form, perfect_csi)
            f_new = model.sum_se()
            if f_new >= f + cfg.ls_alpha * mu * gn ** 2:
                break
            mu *= cfg.ls_beta
        else:
            log.info("line search stalled at iteration %d (objective %.6g)", it, f)
            trace.status = "stalled"
            return trace
        gain = f_new - f
        s, f, q = cand, f_new, _gradient(model)
        gn = float(np.linalg.norm(q))
        trace.phases.append(s.copy())
        trace.objective.append(f)
        trace.grad_norm.append(gn)
        trace.step.append(mu)
        if gain ** 2 < cfg.epsilon:
            trace.status = "converged"
            return trace
        if gn <= ZERO_GRADIENT:
            trace.status = "zero_gradient"
            return trace
    trace.status = "max_iters"
    return trace
