"""Second-order statistics of the IRS phase errors and the moments they induce.

Given the phase errors ``D = diag(exp(j theta))``, the reflected part of UE ``a``'s
channel has conditional covariance ``G D S_a D^H G^H``. Its fluctuation around
the phase-averaged covariance is

    E_a = G (Phi o S_a°) G^H,    Phi_pq = exp(j(theta_p - theta_q)) - m^2  (p != q),

where ``S_a°`` is ``S_a`` with its diagonal removed. Conditioned on ``D`` every
channel is Gaussian, so all fourth-order moments needed by the closed-form SINR
reduce to Gaussian moments plus averages of products of two ``E`` matrices:

    pair_a(X, Y; a, b) = E[tr(X E_a) tr(Y E_b)]
    pair_b(X, Y; a, b) = E[tr(X E_a Y E_b)]

Because ``D`` is common to all UEs these are nonzero for ``a != b`` as well.

``E[Phi_pq Phi_st]`` takes one of six values depending on which indices
coincide, so both quantities collapse to ``O(N^2)`` contractions. The matrices
enter in lifted, factored form ``G^H X G = P Q^H`` so that rank-one batches and
full-rank arguments share one implementation. Every contraction has a
reverse-mode counterpart returning cogradients of ``Re sum_b w_b value_b`` with
respect to the factors (convention ``df = Re sum conj(Z_bar) dZ``).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# rank products above which the Hadamard contractions form the lifted matrices
_EXPLICIT_RANK = 4


@dataclass(frozen=True)
class PhaseErrorCovariance:
    """Index-coincidence coefficients of ``E[Phi_pq Phi_st]`` (``p != q``, ``s != t``).

    ``E[Phi_pq Phi_st] = b1([p=s] + [q=t]) + b2([p=t] + [q=s])
    + e2 [p=s][q=t] + e1 [p=t][q=s]``.

    Parameters
    ----------
    m : float
        ``E[exp(j theta)]``.
    m2 : float
        ``E[exp(2j theta)]``.
    """

    m: float
    m2: float

    @property
    def b1(self) -> float:
        return self.m2 * self.m ** 2 - self.m ** 4

    @property
    def b2(self) -> float:
        return self.m ** 2 - self.m ** 4

    @property
    def e1(self) -> float:
        return (1.0 - self.m ** 4) - 2.0 * self.b2

    @property
    def e2(self) -> float:
        return (self.m2 ** 2 - self.m ** 4) - 2.0 * self.b1

    @property
    def vanishes(self) -> bool:
        """True when the phases are deterministic and every correction is zero."""
        return self.b1 == 0.0 and self.b2 == 0.0 and self.e1 == 0.0 and self.e2 == 0.0

    def entry(self, p: int, q: int, s: int, t: int) -> float:
        """``E[Phi_pq Phi_st]`` for a single index tuple (zero on the diagonal)."""
        if p == q or s == t:
            return 0.0
        return (self.b1 * ((p == s) + (q == t)) + self.b2 * ((p == t) + (q == s))
                + self.e2 * ((p == s) and (q == t)) + self.e1 * ((p == t) and (q == s)))


@dataclass(frozen=True)
class KernelPair:
    """Off-diagonal covariances ``S_a°``, ``S_b°`` and their Hadamard products."""

    Sa: np.ndarray
    Sb: np.ndarray
    Sab: np.ndarray    # Sa o Sb
    Sabt: np.ndarray   # Sa o Sb^T

    @classmethod
    def of(cls, Sa: np.ndarray, Sb: np.ndarray) -> "KernelPair":
        return cls(Sa, Sb, Sa * Sb, Sa * Sb.T)


def off_diagonal(S: np.ndarray) -> np.ndarray:
    """Copy of ``S`` with its (last two axes) diagonal zeroed."""
    out = np.array(S, dtype=complex, copy=True)
    idx = np.arange(out.shape[-1])
    out[..., idx, idx] = 0.0
    return out


@dataclass
class Lifted:
    """Factored lifted matrix ``G^H X G = P Q^H`` for a batch.

    ``P`` and ``Q`` have shape ``(B, N, r)``.
    """

    P: np.ndarray
    Q: np.ndarray

    @property
    def rank(self) -> int:
        return self.P.shape[-1]

    def dense(self) -> np.ndarray:
        return self.P @ _h(self.Q)


@dataclass
class LiftedGrad:
    """Cogradients with respect to the factors of a :class:`Lifted`."""

    P: np.ndarray
    Q: np.ndarray


def _h(X: np.ndarray) -> np.ndarray:
    return np.conj(np.swapaxes(X, -1, -2))


def _rowdot(F: np.ndarray, H: np.ndarray) -> np.ndarray:
    """``diag(F H^H)`` over a batch: ``sum_r F[..., n, r] conj(H[..., n, r])``."""
    return np.einsum("...nr,...nr->...n", F, np.conj(H))


def _rowdot_back(lam: np.ndarray, F: np.ndarray, H: np.ndarray):
    """Cogradients of ``Re sum lam * _rowdot(F, H)`` with respect to ``F`` and ``H``."""
    return np.conj(lam)[..., None] * H, lam[..., None] * F


def _weights(w, B: int) -> np.ndarray:
    w = np.asarray(w, dtype=complex)
    return np.broadcast_to(w, (B,)) if w.ndim == 0 else w


# ---------------------------------------------------------------------------
# Hadamard contractions
#   had(X, Y; K)  = sum_pq X_qp Y_qp K_pq
#   hadt(X, Y; K) = sum_pq X_qp Y_pq K_pq
# ---------------------------------------------------------------------------

def _use_explicit(X: Lifted, Y: Lifted, path: str | None) -> bool:
    if path is not None:
        return path == "explicit"
    return X.rank * Y.rank > _EXPLICIT_RANK


def _pair_products(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """``Z[b, n, r*r'] = A[b, n, r] * B[b, n, r']``."""
    Bt, N, r = A.shape
    return (A[..., :, None] * B[..., None, :]).reshape(Bt, N, r * B.shape[-1])


def _had(X: Lifted, Y: Lifted, K: np.ndarray, path=None) -> np.ndarray:
    if _use_explicit(X, Y, path):
        return np.einsum("bqp,bqp,pq->b", X.dense(), Y.dense(), K)
    z1 = _pair_products(X.Q, Y.Q)
    z2 = _pair_products(X.P, Y.P)
    return np.einsum("bpj,bpj->b", np.conj(z1), K @ z2)


def _had_back(w, X: Lifted, Y: Lifted, K: np.ndarray, gX: LiftedGrad, gY: LiftedGrad,
              path=None) -> None:
    w = _weights(w, X.P.shape[0])
    if _use_explicit(X, Y, path):
        Xd, Yd = X.dense(), Y.dense()
        Xb = np.conj(w[:, None, None] * Yd * K.T)
        Yb = np.conj(w[:, None, None] * Xd * K.T)
        gX.P += Xb @ X.Q
        gX.Q += _h(Xb) @ X.P
        gY.P += Yb @ Y.Q
        gY.Q += _h(Yb) @ Y.P
        return
    r, s = X.rank, Y.rank
    z1 = _pair_products(X.Q, Y.Q)
    z2 = _pair_products(X.P, Y.P)
    z1b = (w[:, None, None] * (K @ z2)).reshape(-1, K.shape[0], r, s)
    z2b = (np.conj(w)[:, None, None] * (_h(K) @ z1)).reshape(-1, K.shape[0], r, s)
    gX.P += np.einsum("bnij,bnj->bni", z2b, np.conj(Y.P))
    gY.P += np.einsum("bnij,bni->bnj", z2b, np.conj(X.P))
    gX.Q += np.einsum("bnij,bnj->bni", z1b, np.conj(Y.Q))
    gY.Q += np.einsum("bnij,bni->bnj", z1b, np.conj(X.Q))


def _hadt(X: Lifted, Y: Lifted, K: np.ndarray, path=None) -> np.ndarray:
    if _use_explicit(X, Y, path):
        return np.einsum("bqp,bpq,pq->b", X.dense(), Y.dense(), K)
    z1 = _pair_products(X.Q, np.conj(Y.P))
    z2 = _pair_products(X.P, np.conj(Y.Q))
    return np.einsum("bpj,bpj->b", np.conj(z1), K @ z2)


def _hadt_back(w, X: Lifted, Y: Lifted, K: np.ndarray, gX: LiftedGrad, gY: LiftedGrad,
               path=None) -> None:
    w = _weights(w, X.P.shape[0])
    if _use_explicit(X, Y, path):
        Xd, Yd = X.dense(), Y.dense()
        Xb = np.conj(w[:, None, None] * np.swapaxes(Yd * K, -1, -2))
        Yb = np.conj(w[:, None, None] * np.swapaxes(Xd, -1, -2) * K)
        gX.P += Xb @ X.Q
        gX.Q += _h(Xb) @ X.P
        gY.P += Yb @ Y.Q
        gY.Q += _h(Yb) @ Y.P
        return
    r, s = X.rank, Y.rank
    z1 = _pair_products(X.Q, np.conj(Y.P))
    z2 = _pair_products(X.P, np.conj(Y.Q))
    z1b = (w[:, None, None] * (K @ z2)).reshape(-1, K.shape[0], r, s)
    z2b = (np.conj(w)[:, None, None] * (_h(K) @ z1)).reshape(-1, K.shape[0], r, s)
    # z2 = P o conj(Yq):  P_bar = z2b Yq,  Yq_bar = conj(z2b) P
    gX.P += np.einsum("bnij,bnj->bni", z2b, Y.Q)
    gY.Q += np.einsum("bnij,bni->bnj", np.conj(z2b), X.P)
    # z1 = Xq o conj(Yp)
    gX.Q += np.einsum("bnij,bnj->bni", z1b, Y.P)
    gY.P += np.einsum("bnij,bni->bnj", np.conj(z1b), X.Q)


# ---------------------------------------------------------------------------
# pair moments
# ---------------------------------------------------------------------------

def pair_a(X: Lifted, Y: Lifted, kp: KernelPair, cov: PhaseErrorCovariance,
           path: str | None = None) -> np.ndarray:
    """``E[tr(X E_a) tr(Y E_b)]`` for each batch element (complex, shape ``(B,)``)."""
    SaP, SaQ = kp.Sa @ X.P, kp.Sa @ X.Q
    SbR, SbT = kp.Sb @ Y.P, kp.Sb @ Y.Q
    rs1, cs1 = _rowdot(SaP, X.Q), _rowdot(X.P, SaQ)
    rs2, cs2 = _rowdot(SbR, Y.Q), _rowdot(Y.P, SbT)
    val = (cov.b1 * (np.sum(rs1 * rs2, -1) + np.sum(cs1 * cs2, -1))
           + cov.b2 * (np.sum(rs1 * cs2, -1) + np.sum(cs1 * rs2, -1)))
    if cov.e2:
        val = val + cov.e2 * _had(X, Y, kp.Sab, path)
    if cov.e1:
        val = val + cov.e1 * _hadt(X, Y, kp.Sabt, path)
    return val


def pair_a_back(w, X: Lifted, Y: Lifted, kp: KernelPair, cov: PhaseErrorCovariance,
                path: str | None = None) -> tuple[LiftedGrad, LiftedGrad]:
    """Cogradients of ``Re sum_b w_b pair_a_b`` with respect to the factors."""
    w = _weights(w, X.P.shape[0])
    gX = LiftedGrad(np.zeros_like(X.P), np.zeros_like(X.Q))
    gY = LiftedGrad(np.zeros_like(Y.P), np.zeros_like(Y.Q))
    Sa, Sb = kp.Sa, kp.Sb
    SaP, SaQ = Sa @ X.P, Sa @ X.Q
    SbR, SbT = Sb @ Y.P, Sb @ Y.Q
    rs1, cs1 = _rowdot(SaP, X.Q), _rowdot(X.P, SaQ)
    rs2, cs2 = _rowdot(SbR, Y.Q), _rowdot(Y.P, SbT)
    wc = w[:, None]
    l_rs1 = wc * (cov.b1 * rs2 + cov.b2 * cs2)
    l_cs1 = wc * (cov.b1 * cs2 + cov.b2 * rs2)
    l_rs2 = wc * (cov.b1 * rs1 + cov.b2 * cs1)
    l_cs2 = wc * (cov.b1 * cs1 + cov.b2 * rs1)
    f, h = _rowdot_back(l_rs1, SaP, X.Q)
    gX.P += Sa @ f
    gX.Q += h
    f, h = _rowdot_back(l_cs1, X.P, SaQ)
    gX.P += f
    gX.Q += Sa @ h
    f, h = _rowdot_back(l_rs2, SbR, Y.Q)
    gY.P += Sb @ f
    gY.Q += h
    f, h = _rowdot_back(l_cs2, Y.P, SbT)
    gY.P += f
    gY.Q += Sb @ h
    if cov.e2:
        _had_back(cov.e2 * w, X, Y, kp.Sab, gX, gY, path)
    if cov.e1:
        _hadt_back(cov.e1 * w, X, Y, kp.Sabt, gX, gY, path)
    return gX, gY


def pair_b(X: Lifted, Y: Lifted, kp: KernelPair, cov: PhaseErrorCovariance,
           path: str | None = None) -> np.ndarray:
    """``E[tr(X E_a Y E_b)]`` for each batch element (complex, shape ``(B,)``)."""
    Sa, Sb = kp.Sa, kp.Sb
    SaR, SaQ = Sa @ Y.P, Sa @ X.Q
    SbP, SbT = Sb @ X.P, Sb @ Y.Q
    dX, dY = _rowdot(X.P, X.Q), _rowdot(Y.P, Y.Q)
    t_ps = np.sum(_rowdot(SaR, Y.Q) * _rowdot(SbP, X.Q), -1)
    t_qt = np.sum(_rowdot(X.P, SaQ) * _rowdot(Y.P, SbT), -1)
    t_pt = np.sum(dX * _rowdot(SaR, SbT), -1)
    t_qs = np.sum(dY * _rowdot(SbP, SaQ), -1)
    val = cov.b1 * (t_ps + t_qt) + cov.b2 * (t_pt + t_qs)
    if cov.e2:
        val = val + cov.e2 * _had(X, Y, kp.Sab, path)
    if cov.e1:
        val = val + cov.e1 * np.einsum("bp,pq,bq->b", dX, kp.Sabt, dY)
    return val


def pair_b_back(w, X: Lifted, Y: Lifted, kp: KernelPair, cov: PhaseErrorCovariance,
                path: str | None = None) -> tuple[LiftedGrad, LiftedGrad]:
    """Cogradients of ``Re sum_b w_b pair_b_b`` with respect to the factors."""
    w = _weights(w, X.P.shape[0])
    gX = LiftedGrad(np.zeros_like(X.P), np.zeros_like(X.Q))
    gY = LiftedGrad(np.zeros_like(Y.P), np.zeros_like(Y.Q))
    Sa, Sb = kp.Sa, kp.Sb
    SaR, SaQ = Sa @ Y.P, Sa @ X.Q
    SbP, SbT = Sb @ X.P, Sb @ Y.Q
    dX, dY = _rowdot(X.P, X.Q), _rowdot(Y.P, Y.Q)
    x1, y1 = _rowdot(SaR, Y.Q), _rowdot(SbP, X.Q)
    x2, y2 = _rowdot(X.P, SaQ), _rowdot(Y.P, SbT)
    g, hh = _rowdot(SaR, SbT), _rowdot(SbP, SaQ)
    wc = w[:, None]
    l_dX = wc * cov.b2 * g
    l_dY = wc * cov.b2 * hh
    if cov.e1:
        l_dX = l_dX + cov.e1 * wc * (dY @ kp.Sabt.T)
        l_dY = l_dY + cov.e1 * wc * (dX @ kp.Sabt)
    # t_ps = x1 . y1
    f, h = _rowdot_back(wc * cov.b1 * y1, SaR, Y.Q)
    gY.P += Sa @ f
    gY.Q += h
    f, h = _rowdot_back(wc * cov.b1 * x1, SbP, X.Q)
    gX.P += Sb @ f
    gX.Q += h
    # t_qt = x2 . y2
    f, h = _rowdot_back(wc * cov.b1 * y2, X.P, SaQ)
    gX.P += f
    gX.Q += Sa @ h
    f, h = _rowdot_back(wc * cov.b1 * x2, Y.P, SbT)
    gY.P += f
    gY.Q += Sb @ h
    # t_pt = dX . g,  t_qs = dY . hh
    f, h = _rowdot_back(wc * cov.b2 * dX, SaR, SbT)
    gY.P += Sa @ f
    gY.Q += Sb @ h
    f, h = _rowdot_back(wc * cov.b2 * dY, SbP, SaQ)
    gX.P += Sb @ f
    gX.Q += Sa @ h
    f, h = _rowdot_back(l_dX, X.P, X.Q)
    gX.P += f
    gX.Q += h
    f, h = _rowdot_back(l_dY, Y.P, Y.Q)
    gY.P += f
    gY.Q += h
    if cov.e2:
        _had_back(cov.e2 * w, X, Y, kp.Sab, gX, gY, path)
    return gX, gY


# ---------------------------------------------------------------------------
# lifting between BS space and IRS space
# ---------------------------------------------------------------------------

def lift(G: np.ndarray, xp: np.ndarray, xq: np.ndarray) -> Lifted:
    """Lift BS-space factors ``X = xp xq^H`` (shape ``(B, M, r)``) to ``G^H X G``."""
    GH = np.conj(G.T)
    return Lifted(GH @ xp, GH @ xq)


def lift_back(G: np.ndarray, xp: np.ndarray, xq: np.ndarray, g: LiftedGrad):
    """Pull factor cogradients back through :func:`lift`.

    Returns ``(xp_bar, xq_bar, G_bar)``.
    """
    G_bar = np.einsum("bmr,bnr->mn", xp, np.conj(g.P)) + np.einsum("bmr,bnr->mn", xq, np.conj(g.Q))
    return G @ g.P, G @ g.Q, G_bar
