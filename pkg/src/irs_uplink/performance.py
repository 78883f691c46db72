"""Closed-form use-and-then-forget (UatF) SINR and sum spectral efficiency.

With the MRC combiner ``v_k = hhat_k`` the UatF bound needs the first moment
``E[v_k^H h_k] = tr(Psi_k)`` and, for every pair ``(k, i)``,

    T_ki = E|v_k^H h_i|^2,      Z_ki = E[sum_m |v_km|^2 |h_im|^2].

The interference power is then

    I_k = (1 + kappa_UE) sum_i rho_i T_ki - rho_k tr(Psi_k)^2
          + kappa_BS sum_i rho_i Z_ki + sigma^2 tr(Psi_k).

Two closed forms of ``T`` and ``Z`` are provided:

``"exact"``
    The expectations themselves. They include the coupling of the estimate to
    every UE's channel through the training distortions and the non-Gaussian
    fourth moments caused by the IRS phase errors (see :mod:`.phase_moments`).
``"simplified"``
    The commonly used shortcut ``T_ki = tr(Psi_k R_i) + [i=k](tr(Psi_k)^2 -
    tr(Psi_k^2))`` and ``Z_ki = tr((I o R_i) Psi_k) + [i=k] tr(Psi_k)^2``.
    It treats the estimate as if it were independent of the other channels
    and ignores the fluctuation of its quadratic form, so it underestimates
    the beamforming uncertainty and overestimates the receive distortion.

:class:`UatfModel` evaluates either form and carries the reverse-mode
derivative of any real function of ``(T, Z, tr Psi)`` with respect to the
reflection coefficients.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .channel import (ChannelStatistics, NumericError, RbmPhases, covariance_extension,
                      effective_covariances)
from .estimation import (EstimatorState, TrainingCoefficients, estimator_state,
                         perfect_csi_state)
from .phase_moments import (KernelPair, Lifted, LiftedGrad, PhaseErrorCovariance, lift,
                            lift_back, off_diagonal, pair_a, pair_a_back, pair_b, pair_b_back)
from .scenario import Scenario

FORMS = ("exact", "simplified")

_LN2 = np.log(2.0)


def _h(X: np.ndarray) -> np.ndarray:
    return np.conj(np.swapaxes(X, -1, -2))


@dataclass(frozen=True)
class SinrBreakdown:
    """Per-UE signal and interference powers of the UatF SINR.

    Every field is an array over UEs holding the power that term contributes,
    already weighted by the relevant transmit power.

    Attributes
    ----------
    signal : desired signal ``rho_k tr(Psi_k)^2``
    bu : beamforming uncertainty ``rho_k (T_kk - tr(Psi_k)^2)``
    mui : multi-user interference ``sum_{i != k} rho_i T_ki``
    td : UE transmit distortion ``kappa_UE sum_i rho_i T_ki``
    rd : BS receive distortion ``kappa_BS sum_i rho_i Z_ki``
    rn : receiver noise ``sigma^2 tr(Psi_k)``
    pre_log : fraction of the coherence block used for data
    """

    signal: np.ndarray
    bu: np.ndarray
    mui: np.ndarray
    td: np.ndarray
    rd: np.ndarray
    rn: np.ndarray
    pre_log: float

    TERMS = ("signal", "bu", "mui", "td", "rd", "rn")

    def __post_init__(self):
        if np.any(self.interference <= 0):
            raise NumericError("performance.closed_form_sinr",
                               "non-positive interference-plus-noise power")

    @property
    def interference(self) -> np.ndarray:
        return self.bu + self.mui + self.td + self.rd + self.rn

    @property
    def gamma(self) -> np.ndarray:
        return self.signal / self.interference

    @property
    def se(self) -> np.ndarray:
        """Per-UE SE in bps/Hz, including the pre-log factor."""
        return self.pre_log * np.log1p(self.gamma) / _LN2

    def term(self, name: str) -> np.ndarray:
        return getattr(self, name)

    def select(self, k: int) -> "SinrBreakdown":
        """Breakdown restricted to UE ``k``."""
        sl = slice(k, k + 1)
        return SinrBreakdown(*(getattr(self, t)[sl] for t in self.TERMS), self.pre_log)


@dataclass(frozen=True)
class SecondMoments:
    """``tau_k = tr(Psi_k)``, ``T[k, i]`` and ``Z[k, i]`` (all real)."""

    tau: np.ndarray
    T: np.ndarray
    Z: np.ndarray


def breakdown_from_moments(mom: SecondMoments, scenario: Scenario) -> SinrBreakdown:
    """Assemble the SINR terms from the second moments."""
    rho = scenario.rho_array
    tau, T, Z = mom.tau, mom.T, mom.Z
    weighted = T * rho[None, :]
    own = np.diag(weighted)
    return SinrBreakdown(
        signal=rho * tau ** 2,
        bu=own - rho * tau ** 2,
        mui=weighted.sum(axis=1) - own,
        td=scenario.kappa_ue * weighted.sum(axis=1),
        rd=scenario.kappa_bs * (Z * rho[None, :]).sum(axis=1),
        rn=scenario.sigma2 * tau,
        pre_log=scenario.pre_log,
    )


def sum_se(breakdowns, scenario: Scenario) -> float:
    """``(tau_c - tau)/tau_c * sum_k log2(1 + gamma_k)``.

    ``breakdowns`` is a :class:`SinrBreakdown` or an iterable of them (one per
    UE, as returned by ``closed_form_sinr(..., k=k)``).
    """
    if isinstance(breakdowns, SinrBreakdown):
        breakdowns = [breakdowns]
    gamma = np.concatenate([np.atleast_1d(b.gamma) for b in breakdowns])
    return float(scenario.pre_log * np.sum(np.log1p(gamma)) / _LN2)


# ---------------------------------------------------------------------------
# closed-form model with reverse-mode derivative
# ---------------------------------------------------------------------------

@dataclass
class _Factors:
    """BS-space factors ``x_p x_q^H`` of one lifted argument, plus its lift."""

    kind: str
    xp: np.ndarray
    xq: np.ndarray
    lifted: object = None


@dataclass
class _Term:
    """One phase-error correction contributing ``coef * sum_b pair(X_b, Y_b)``."""

    dest: str          # "T" or "Z"
    i: int
    kind: str          # "a" or "b"
    X: str
    Y: str
    kernels: tuple
    coef: float


@dataclass
class Cotangents:
    """Adjoint seeds: the derivative is taken of ``sum T_bar*T + Z_bar*Z + tau_bar*tau``."""

    T: np.ndarray
    Z: np.ndarray
    tau: np.ndarray


@dataclass
class UatfModel:
    """Second moments of the UatF bound for one reflection configuration.

    Parameters
    ----------
    stats : ChannelStatistics
    phi : (N,) complex
        Unit-modulus reflection coefficients.
    scenario : Scenario
    form : {"exact", "simplified"}
    perfect_csi : bool
        Replace the LMMSE estimate by the true channel (``Psi_k = R_k``).
    off_circle : bool
        Accept any complex ``phi`` and evaluate the smooth extension built on
        ``G = H1 diag(phi)``. This is the function whose derivative
        :meth:`sum_se_gradient` returns, so finite-difference checks in the
        real and imaginary parts of ``phi`` need it.
    """

    stats: ChannelStatistics
    phi: np.ndarray
    scenario: Scenario
    form: str = "exact"
    perfect_csi: bool = False
    off_circle: bool = False
    state: EstimatorState = field(init=False)
    moments: SecondMoments = field(init=False)

    def __post_init__(self):
        if self.form not in FORMS:
            raise ValueError(f"form must be one of {FORMS}, got {self.form!r}")
        stats = self.stats
        if self.off_circle:
            self.phi = np.asarray(self.phi, dtype=complex).reshape(-1)
            R = covariance_extension(stats, self.phi)
        else:
            self.phi = RbmPhases(self.phi).phi
            R = effective_covariances(stats, RbmPhases(self.phi))
        self.G = stats.H1 * self.phi[None, :]
        if self.perfect_csi:
            self.state = perfect_csi_state(R)
            self.co = TrainingCoefficients.ideal()
        else:
            self.state = estimator_state(R, self.scenario)
            self.co = TrainingCoefficients.of(self.scenario)
        self.cov = PhaseErrorCovariance(stats.m, stats.m2)
        self.corrected = self.form == "exact" and not self.cov.vanishes
        K = stats.K
        S = np.stack([stats.irs_covariance(k) for k in range(K)])
        self.S_off = off_diagonal(S)
        self.S_sum = self.S_off.sum(axis=0)
        self._kernel_cache: dict = {}
        self.moments = self._forward()

    # -- helpers ----------------------------------------------------------

    @property
    def K(self) -> int:
        return self.stats.K

    @property
    def M(self) -> int:
        return self.stats.M

    def _S(self, a: int) -> np.ndarray:
        return self.S_sum if a == self.K else self.S_off[a]

    def _kernels(self, a: int, b: int) -> KernelPair:
        key = (a, b)
        if key not in self._kernel_cache:
            self._kernel_cache[key] = KernelPair.of(self._S(a), self._S(b))
        return self._kernel_cache[key]

    def _factors(self, k: int) -> dict:
        """BS-space factors of the lifted arguments used for receiver ``k``."""
        M = self.M
        A = self.state.A[k]
        eye = np.eye(M, dtype=complex)
        cols = eye[:, :, None]
        out = {
            "A": _Factors("A", A[None], eye[None]),
            "AH": _Factors("AH", _h(A)[None], eye[None]),
            "E": _Factors("E", cols, cols),
            "Xa": _Factors("Xa", np.conj(A)[:, :, None], np.conj(A)[:, :, None]),
            "B": _Factors("B", A.T[:, :, None], A.T[:, :, None]),
        }
        for f in out.values():
            f.lifted = lift(self.G, f.xp, f.xq)
        return out

    def _terms(self, k: int):
        """Phase-error corrections of ``T[k, :]`` and ``Z[k, :]``."""
        K, al = self.K, self.co.al
        be = self.co.be
        S = K  # index of the summed kernel
        terms = []
        for i in range(K):
            terms.append(_Term("T", i, "b", "A", "AH", (i, k), 1.0))
            if i == k:
                terms.append(_Term("T", i, "a", "A", "AH", (k, k), 1.0))
                terms.append(_Term("Z", i, "b", "B", "E", (k, k), 1.0))
            terms.append(_Term("Z", i, "a", "B", "E", (k, i), 1.0))
            if al:
                terms += [_Term("T", i, "a", "A", "AH", (i, i), al),
                          _Term("T", i, "b", "A", "AH", (i, S), al),
                          _Term("Z", i, "a", "B", "E", (S, i), al),
                          _Term("Z", i, "b", "B", "E", (i, i), al)]
            if be:
                terms += [_Term("T", i, "b", "E", "Xa", (i, i), be),
                          _Term("T", i, "a", "Xa", "E", (i, S), be)]
        return terms

    def _element_pairs(self):
        """Lifted unit vectors arranged as all ``(l, m)`` pairs (row-major)."""
        M = self.M
        cols = np.eye(M, dtype=complex)[:, :, None]
        E = lift(self.G, cols, cols)
        Xl = Lifted(np.repeat(E.P, M, axis=0), np.repeat(E.Q, M, axis=0))
        Ym = Lifted(np.tile(E.P, (M, 1, 1)), np.tile(E.Q, (M, 1, 1)))
        return Xl, Ym

    def _element_moments(self) -> np.ndarray:
        """``D_i[l, m] = pair_a(E_l, E_m; sum, i) + pair_b(E_l, E_m; i, i)``."""
        M, K = self.M, self.K
        Xl, Ym = self._element_pairs()
        D = np.empty((K, M, M), dtype=complex)
        for i in range(K):
            d = (pair_a(Xl, Ym, self._kernels(K, i), self.cov)
                 + pair_b(Xl, Ym, self._kernels(i, i), self.cov))
            D[i] = d.reshape(M, M)
        return D

    # -- forward ----------------------------------------------------------

    def _forward(self) -> SecondMoments:
        K = self.K
        R, A, Psi = self.state.R, self.state.A, self.state.Psi
        al, be = self.co.al, self.co.be
        exact = self.form == "exact"
        tau = np.real(np.trace(Psi, axis1=-2, axis2=-1))
        T = np.zeros((K, K))
        Z = np.zeros((K, K))
        dR = np.real(np.diagonal(R, axis1=-2, axis2=-1))
        self._D = self._element_moments() if self.corrected and be else None
        for k in range(K):
            dPsi = np.real(np.diag(Psi[k]))
            for i in range(K):
                T[k, i] = np.real(np.sum(Psi[k] * R[i].T))
                Z[k, i] = np.sum(dR[i] * dPsi)
                if i == k:
                    T[k, i] += tau[k] ** 2
                    Z[k, i] += np.sum(dPsi ** 2) if exact else tau[k] ** 2
                    if not exact:
                        T[k, i] -= np.real(np.sum(Psi[k] * Psi[k].T))
                if exact:
                    AR = A[k] @ R[i]
                    RA = R[i] @ A[k]
                    T[k, i] += al * abs(np.trace(AR)) ** 2 + be * np.sum(np.abs(np.diag(AR)) ** 2)
                    Z[k, i] += (al * np.sum(np.abs(np.diag(RA)) ** 2)
                                + be * np.sum(np.abs(A[k]) ** 2 * np.abs(R[i]) ** 2))
            if not self.corrected:
                continue
            fac = self._factors(k)
            for t in self._terms(k):
                fn = pair_a if t.kind == "a" else pair_b
                val = np.real(np.sum(fn(fac[t.X].lifted, fac[t.Y].lifted,
                                        self._kernels(*t.kernels), self.cov)))
                (T if t.dest == "T" else Z)[k, t.i] += t.coef * val
            if self._D is not None:
                for i in range(K):
                    Z[k, i] += be * np.sum(np.abs(A[k]) ** 2 * np.real(self._D[i]))
        return SecondMoments(tau, T, Z)

    # -- reverse mode -----------------------------------------------------

    def vjp(self, ct: Cotangents) -> np.ndarray:
        """Conjugate-Wirtinger derivative ``df/dphi*`` of ``f = <ct, moments>``.

        Returns the full (not yet tangential) derivative of the smooth
        extension ``R_k(phi) = beta_d R_BS + G S~ G^H``, ``G = H1 diag(phi)``.
        """
        K, M = self.K, self.M
        R, A, Psi, Q = self.state.R, self.state.A, self.state.Psi, self.state.Q
        al, be = self.co.al, self.co.be
        exact = self.form == "exact"
        tau = self.moments.tau
        Tb, Zb = ct.T, ct.Z
        tau_b = np.array(ct.tau, dtype=float).copy()
        R_b = np.zeros((K, M, M), dtype=complex)
        G_b = np.zeros_like(self.G)
        dR = np.real(np.diagonal(R, axis1=-2, axis2=-1))
        D_b = np.zeros((K, M, M)) if self._D is not None else None
        for k in range(K):
            Psi_b = np.zeros((M, M), dtype=complex)
            A_b = np.zeros((M, M), dtype=complex)
            dPsi = np.real(np.diag(Psi[k]))
            for i in range(K):
                wT, wZ = Tb[k, i], Zb[k, i]
                # tr(Psi R_i) and sum diag(R_i) diag(Psi)
                Psi_b += wT * _h(R[i]) + wZ * np.diag(dR[i])
                R_b[i] += wT * _h(Psi[k]) + wZ * np.diag(dPsi)
                if i == k:
                    tau_b[k] += 2 * tau[k] * wT
                    if exact:
                        Psi_b += 2 * wZ * np.diag(dPsi)
                    else:
                        tau_b[k] += 2 * tau[k] * wZ
                        Psi_b -= 2 * wT * _h(Psi[k])
                if exact:
                    AR = A[k] @ R[i]
                    RA = R[i] @ A[k]
                    t = np.trace(AR)
                    tb = 2 * al * wT * t
                    A_b += tb * _h(R[i])
                    R_b[i] += tb * _h(A[k])
                    d = 2 * be * wT * np.diag(AR)
                    A_b += d[:, None] * _h(R[i])
                    R_b[i] += _h(A[k]) * d[None, :]
                    d = 2 * al * wZ * np.diag(RA)
                    R_b[i] += d[:, None] * _h(A[k])
                    A_b += _h(R[i]) * d[None, :]
                    A_b += 2 * be * wZ * A[k] * np.abs(R[i]) ** 2
                    R_b[i] += 2 * be * wZ * R[i] * np.abs(A[k]) ** 2
            if self.corrected:
                A_b += self._corrections_back(k, Tb, Zb, G_b)
                if D_b is not None:
                    for i in range(K):
                        A_b += 2 * be * Zb[k, i] * A[k] * np.real(self._D[i])
                        D_b[i] += be * Zb[k, i] * np.abs(A[k]) ** 2
            Psi_b += tau_b[k] * np.eye(M)
            if self.perfect_csi:
                R_b[k] += Psi_b
                continue
            # Psi = R_k A,  A = Q R_k,  Q = Omega^{-1}
            R_b[k] += Psi_b @ _h(A[k])
            A_b += _h(R[k]) @ Psi_b
            Q_b = A_b @ _h(R[k])
            R_b[k] += _h(Q[k]) @ A_b
            Om_b = -_h(Q[k]) @ Q_b @ _h(Q[k])
            R_b[k] += Om_b
            R_b += al * Om_b + be * np.diag(np.real(np.diag(Om_b)))
        if D_b is not None:
            self._element_moments_back(D_b, G_b)
        # R_i = C_i + G S~_i G^H
        m2 = self.stats.m ** 2
        for i in range(K):
            S = self.stats.irs_covariance(i)
            St = m2 * S + (1.0 - m2) * np.diag(np.diag(S))
            G_b += (R_b[i] + _h(R_b[i])) @ self.G @ St
        phi_b = np.einsum("mn,mn->n", np.conj(self.stats.H1), G_b)
        return 0.5 * phi_b

    def _corrections_back(self, k: int, Tb: np.ndarray, Zb: np.ndarray,
                          G_b: np.ndarray) -> np.ndarray:
        """Accumulate the corrections' derivative into ``G_b``; return ``A_bar``."""
        M = self.M
        fac = self._factors(k)
        grads = {name: [np.zeros_like(f.lifted.P), np.zeros_like(f.lifted.Q)]
                 for name, f in fac.items()}
        for t in self._terms(k):
            w = t.coef * (Tb[k, t.i] if t.dest == "T" else Zb[k, t.i])
            if w == 0.0:
                continue
            back = pair_a_back if t.kind == "a" else pair_b_back
            gX, gY = back(w, fac[t.X].lifted, fac[t.Y].lifted, self._kernels(*t.kernels), self.cov)
            grads[t.X][0] += gX.P
            grads[t.X][1] += gX.Q
            grads[t.Y][0] += gY.P
            grads[t.Y][1] += gY.Q
        A_b = np.zeros((M, M), dtype=complex)
        for name, (gP, gQ) in grads.items():
            f = fac[name]
            xp_b, xq_b, Gb = lift_back(self.G, f.xp, f.xq, LiftedGrad(gP, gQ))
            G_b += Gb
            if name == "A":
                A_b += xp_b[0]
            elif name == "AH":
                A_b += _h(xp_b[0])
            elif name == "Xa":
                A_b += np.conj((xp_b + xq_b)[:, :, 0])
            elif name == "B":
                A_b += (xp_b + xq_b)[:, :, 0].T
        return A_b

    def _element_moments_back(self, D_b: np.ndarray, G_b: np.ndarray) -> None:
        M, K = self.M, self.K
        Xl, Ym = self._element_pairs()
        gP = np.zeros((M, self.stats.N, 1), dtype=complex)
        gQ = np.zeros_like(gP)
        for i in range(K):
            w = D_b[i].reshape(-1)
            for back, kp in ((pair_a_back, self._kernels(K, i)), (pair_b_back, self._kernels(i, i))):
                gX, gY = back(w, Xl, Ym, kp, self.cov)
                gP += gX.P.reshape(M, M, -1, 1).sum(axis=1) + gY.P.reshape(M, M, -1, 1).sum(axis=0)
                gQ += gX.Q.reshape(M, M, -1, 1).sum(axis=1) + gY.Q.reshape(M, M, -1, 1).sum(axis=0)
        cols = np.eye(M, dtype=complex)[:, :, None]
        G_b += lift_back(self.G, cols, cols, LiftedGrad(gP, gQ))[2]

    # -- SINR / SE ----------------------------------------------------------

    def breakdown(self) -> SinrBreakdown:
        return breakdown_from_moments(self.moments, self.scenario)

    def sum_se(self) -> float:
        return sum_se(self.breakdown(), self.scenario)

    def sum_se_cotangents(self) -> Cotangents:
        """Seeds for the derivative of the sum SE."""
        sc = self.scenario
        bd = self.breakdown()
        S, I = bd.signal, bd.interference
        rho = sc.rho_array
        g_S = sc.pre_log / _LN2 / (I + S)
        g_I = -sc.pre_log / _LN2 * S / (I * (I + S))
        tau = self.moments.tau
        T_b = (g_I * (1.0 + sc.kappa_ue))[:, None] * rho[None, :]
        Z_b = (g_I * sc.kappa_bs)[:, None] * rho[None, :]
        tau_b = 2 * rho * tau * (g_S - g_I) + g_I * sc.sigma2
        return Cotangents(T_b, Z_b, tau_b)

    def sum_se_gradient(self) -> np.ndarray:
        """Conjugate-Wirtinger derivative of the sum SE (full, not tangential)."""
        return self.vjp(self.sum_se_cotangents())


def closed_form_sinr(stats: ChannelStatistics, rbm: RbmPhases, state: EstimatorState | None,
                     scenario: Scenario, k: int | None = None,
                     form: str = "exact") -> SinrBreakdown:
    """Closed-form UatF breakdown for UE ``k`` (all UEs when ``k`` is None).

    ``state`` only selects the estimator: a perfect-CSI state (see
    :func:`.estimation.perfect_csi_state`) evaluates the bound with
    ``hhat_k = h_k``; otherwise the LMMSE state implied by ``rbm`` is used.
    """
    perfect = bool(state is not None and state.perfect)
    bd = UatfModel(stats, RbmPhases(rbm.phi).phi, scenario, form=form,
                   perfect_csi=perfect).breakdown()
    return bd if k is None else bd.select(k)


@dataclass(frozen=True)
class Evaluation:
    """Analytic performance of one reflection configuration."""

    breakdown: SinrBreakdown
    nmse: np.ndarray
    sum_se: float

    def rows(self):
        """``(quantity, ue, value)`` triples for tabular output."""
        out = [("sum_se", "", self.sum_se)]
        for k in range(self.nmse.size):
            out.append(("nmse", k, float(self.nmse[k])))
            out.append(("gamma", k, float(self.breakdown.gamma[k])))
            out.append(("se", k, float(self.breakdown.se[k])))
            for t in SinrBreakdown.TERMS:
                out.append((t, k, float(self.breakdown.term(t)[k])))
        return out


def evaluate(stats: ChannelStatistics, rbm: RbmPhases, scenario: Scenario, *,
             form: str = "exact", perfect_csi: bool = False) -> Evaluation:
    """Breakdown, NMSE and sum SE for one RBM."""
    model = UatfModel(stats, RbmPhases(rbm.phi).phi, scenario, form=form,
                      perfect_csi=perfect_csi)
    bd = model.breakdown()
    return Evaluation(bd, model.state.nmse(), sum_se(bd, scenario))
