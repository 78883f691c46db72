"""Channel statistics, effective covariances and Monte-Carlo channel draws.

The overall channel of UE ``k`` is ``h_k = h_d,k + H1 Theta Theta~ h_2,k`` with
correlated Rayleigh fading on the direct and IRS-UE links, a deterministic
high-rank LoS matrix ``H1`` between BS and IRS, and i.i.d. random phase errors
``Theta~`` at the IRS. The phase errors belong to the IRS hardware, so one
realization of ``Theta~`` is shared by the reflected signals of all UEs.
"""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import ive

from .scenario import PhaseNoiseModel, Scenario, path_loss

log = logging.getLogger(__name__)

# Stream identifiers for np.random.SeedSequence([seed, stream, ...]).
STREAM_IRS_ANGLES = 1
STREAM_LOS_THETA = 2
STREAM_LOS_PSI = 3
STREAM_TRIALS = 4
STREAM_RANDOM_INIT = 5

_PSD_TOL = 1e-10


class NumericError(RuntimeError):
    """A numerical routine failed; ``op`` names the failing operation."""

    def __init__(self, op: str, message: str):
        self.op = op
        super().__init__(f"{op}: {message}")


def rng_for(seed: int, *stream: int) -> np.random.Generator:
    """Independent generator for ``(seed, *stream)``."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), *map(int, stream)]))


def trial_rng(seed: int, trial: int) -> np.random.Generator:
    """Per-trial stream; identical ``(seed, trial)`` always gives identical draws."""
    return rng_for(seed, STREAM_TRIALS, trial)


# ---------------------------------------------------------------------------
# phase noise
# ---------------------------------------------------------------------------

def circular_moment(model: PhaseNoiseModel, order: int = 1) -> float:
    """``E[exp(j*order*theta)]`` of the phase-error distribution (real, zero mean).

    Von Mises gives ``I_order(kappa)/I_0(kappa)``, computed with exponentially
    scaled Bessel functions so large concentrations do not overflow.
    """
    if order == 0 or model.kind == "none":
        return 1.0
    if model.kind == "uniform":
        return 0.0
    return float(ive(order, model.kappa_theta) / ive(0, model.kappa_theta))


def characteristic_factor(model: PhaseNoiseModel) -> float:
    """``m = |E[exp(j theta)]|``: 0 for uniform, 1 for no phase noise."""
    return circular_moment(model, 1)


def sample_phase_errors(model: PhaseNoiseModel, rng: np.random.Generator, size) -> np.ndarray:
    if model.kind == "none":
        return np.zeros(size)
    if model.kind == "uniform":
        return rng.uniform(-np.pi, np.pi, size)
    return rng.vonmises(0.0, model.kappa_theta, size)


# ---------------------------------------------------------------------------
# correlation matrices and LoS channel
# ---------------------------------------------------------------------------

def _toeplitz_hermitian(c: np.ndarray) -> np.ndarray:
    n = len(c)
    lag = np.subtract.outer(np.arange(n), np.arange(n))
    return np.where(lag >= 0, c[np.abs(lag)], np.conj(c[np.abs(lag)]))


def irs_lag_coefficients(scenario: Scenario, k: int, n_lags: int) -> np.ndarray:
    """``c_l = E[exp(j 2 pi d_IRS l sin(el) sin(az))]`` for ``l = 0..n_lags-1``.

    Seeded numerical expectation over the angle distributions of UE ``k``.
    The draws do not depend on ``n_lags``, so a smaller IRS sees a prefix of
    the same coefficients.
    """
    cm = scenario.correlation
    rng = rng_for(scenario.seed, STREAM_IRS_ANGLES, k)
    scale = np.deg2rad(cm.elevation_spread_deg) / np.sqrt(2.0)
    el = rng.laplace(np.deg2rad(cm.elevation_mean_deg), scale, cm.draws)
    el = np.clip(el, 0.0, np.pi)
    az = rng.vonmises(np.deg2rad(cm.azimuth_mean_deg), cm.azimuth_concentration, cm.draws)
    u = 2.0 * np.pi * scenario.geometry.spacing_irs * np.sin(el) * np.sin(az)
    lags = np.arange(n_lags)
    c = np.zeros(n_lags, dtype=complex)
    chunk = max(1, 4_000_000 // max(n_lags, 1))
    for start in range(0, cm.draws, chunk):
        c += np.exp(1j * np.outer(u[start:start + chunk], lags)).sum(axis=0)
    c /= cm.draws
    c[0] = 1.0
    return c


def build_irs_correlation(scenario: Scenario, k: int) -> np.ndarray:
    """N x N IRS spatial correlation of UE ``k`` (Hermitian Toeplitz, unit diagonal).

    Identity when correlation is disabled. The estimate is an average of
    rank-one terms and therefore PSD; a violation beyond tolerance raises.
    """
    N = scenario.N
    if not scenario.correlation.enabled:
        return np.eye(N, dtype=complex)
    R = _toeplitz_hermitian(irs_lag_coefficients(scenario, k, N))
    lam_min = np.linalg.eigvalsh(R).min()
    if lam_min < -_PSD_TOL * N:
        raise NumericError("build_irs_correlation",
                           f"integrated correlation not PSD (min eigenvalue {lam_min:.3e})")
    return R


def exponential_correlation(M: int, r: float) -> np.ndarray:
    """``[R]_{p,q} = r^{|p-q|}``."""
    idx = np.arange(M)
    return np.power(float(r), np.abs(np.subtract.outer(idx, idx))).astype(complex)


def build_bs_correlation(scenario: Scenario, k: int) -> np.ndarray:
    """M x M BS correlation of UE ``k``: exponential model, identity when disabled."""
    r = scenario.correlation.bs_coefficient if scenario.correlation.enabled else 0.0
    return exponential_correlation(scenario.M, r)


def draw_los_angles(scenario: Scenario) -> tuple[np.ndarray, np.ndarray]:
    """Departure angles ``theta1 ~ U[0, pi]`` and ``psi1 ~ U[0, 2 pi]``.

    Length ``max(M, N)``: the entry formula indexes the arrival angles
    ``theta2 = pi - theta1``, ``psi2 = pi + psi1`` by BS antenna and the
    departure angles by IRS element.
    """
    L = max(scenario.M, scenario.N)
    theta1 = rng_for(scenario.seed, STREAM_LOS_THETA).uniform(0.0, np.pi, L)
    psi1 = rng_for(scenario.seed, STREAM_LOS_PSI).uniform(0.0, 2 * np.pi, L)
    return theta1, psi1


def build_los_channel(M: int, N: int, beta1: float, theta1: np.ndarray, psi1: np.ndarray,
                      spacing_bs: float = 0.5, spacing_irs: float = 0.5) -> np.ndarray:
    """High-rank LoS matrix between IRS and BS.

    ``[H1]_{m,n} = sqrt(beta1) exp(j 2 pi [m d_BS sin(theta1_n) sin(psi1_n)
    + n d_IRS sin(theta2_m) sin(psi2_m)])`` with 0-based ``m, n`` and spacings
    in wavelengths.
    """
    theta2 = np.pi - theta1
    psi2 = np.pi + psi1
    m = np.arange(M)[:, None]
    n = np.arange(N)[None, :]
    dep = spacing_bs * np.sin(theta1[:N]) * np.sin(psi1[:N])
    arr = spacing_irs * np.sin(theta2[:M]) * np.sin(psi2[:M])
    return np.sqrt(beta1) * np.exp(2j * np.pi * (m * dep[None, :] + n * arr[:, None]))


# ---------------------------------------------------------------------------
# statistics container
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ChannelStatistics:
    """Everything needed to form the effective covariances.

    Attributes
    ----------
    R_irs : (K, N, N) complex
        IRS correlation per UE (unit diagonal).
    R_bs : (K, M, M) complex
        BS correlation per UE (unit diagonal).
    H1 : (M, N) complex
        LoS BS-IRS matrix.
    beta1 : float
    beta2, beta_d : (K,) float
        IRS-UE and direct-link gains.
    m, m2 : float
        First and second circular moments of the phase error.
    """

    R_irs: np.ndarray
    R_bs: np.ndarray
    H1: np.ndarray
    beta1: float
    beta2: np.ndarray
    beta_d: np.ndarray
    m: float
    m2: float

    @property
    def K(self) -> int:
        return self.R_irs.shape[0]

    @property
    def M(self) -> int:
        return self.H1.shape[0]

    @property
    def N(self) -> int:
        return self.H1.shape[1]

    def irs_covariance(self, k: int) -> np.ndarray:
        """``S_k = beta2_k R_IRS,k``, covariance of ``h_2,k``."""
        return self.beta2[k] * self.R_irs[k]

    def with_phase_noise(self, model: PhaseNoiseModel) -> "ChannelStatistics":
        """Same large-scale statistics under a different phase-error law."""
        return ChannelStatistics(self.R_irs, self.R_bs, self.H1, self.beta1, self.beta2,
                                 self.beta_d, characteristic_factor(model),
                                 circular_moment(model, 2))

    def save(self, path: str | Path) -> None:
        np.savez(path, R_irs=self.R_irs, R_bs=self.R_bs, H1=self.H1,
                 beta1=self.beta1, beta2=self.beta2, beta_d=self.beta_d,
                 m=self.m, m2=self.m2)

    @classmethod
    def load(cls, path: str | Path) -> "ChannelStatistics":
        with np.load(path) as z:
            return cls(z["R_irs"], z["R_bs"], z["H1"], float(z["beta1"]), z["beta2"],
                       z["beta_d"], float(z["m"]), float(z["m2"]))


def build_statistics(scenario: Scenario) -> ChannelStatistics:
    """Construct all channel statistics of ``scenario`` (deterministic given its seed)."""
    K = scenario.K
    gains = [path_loss(scenario.geometry, k) for k in range(K)]
    beta1 = gains[0][0]
    theta1, psi1 = draw_los_angles(scenario)
    H1 = build_los_channel(scenario.M, scenario.N, beta1, theta1, psi1,
                           scenario.geometry.spacing_bs, scenario.geometry.spacing_irs)
    R_irs = np.stack([build_irs_correlation(scenario, k) for k in range(K)])
    R_bs = np.stack([build_bs_correlation(scenario, k) for k in range(K)])
    return ChannelStatistics(
        R_irs=R_irs, R_bs=R_bs, H1=H1, beta1=beta1,
        beta2=np.array([g[1] for g in gains]), beta_d=np.array([g[2] for g in gains]),
        m=characteristic_factor(scenario.phase_noise),
        m2=circular_moment(scenario.phase_noise, 2))


def cached_statistics(scenario: Scenario, cache_dir: str | Path | None) -> ChannelStatistics:
    """:func:`build_statistics` memoized on disk under the scenario's statistics hash."""
    if cache_dir is None:
        return build_statistics(scenario)
    cache_dir = Path(cache_dir)
    cache_dir.mkdir(parents=True, exist_ok=True)
    path = cache_dir / f"stats-{scenario.statistics_key()}.npz"
    if path.exists():
        log.debug("loading statistics from %s", path)
        return ChannelStatistics.load(path)
    stats = build_statistics(scenario)
    tmp = path.with_suffix(f".{hashlib.sha1(str(path).encode()).hexdigest()[:6]}.tmp.npz")
    stats.save(tmp)
    tmp.replace(path)
    return stats


# ---------------------------------------------------------------------------
# reflection coefficients and effective covariance
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RbmPhases:
    """Unit-modulus IRS reflection coefficients ``phi_n`` (amplitude fixed at 1)."""

    phi: np.ndarray
    alpha: float = 1.0

    def __post_init__(self):
        phi = np.asarray(self.phi, dtype=complex).reshape(-1)
        if not np.all(np.isfinite(phi)):
            raise ValueError("reflection coefficients must be finite")
        if np.max(np.abs(np.abs(phi) - 1.0), initial=0.0) > 1e-9:
            raise ValueError("reflection coefficients must have unit modulus")
        object.__setattr__(self, "phi", phi)

    @classmethod
    def default(cls, N: int) -> "RbmPhases":
        """All elements at ``exp(j pi/2)``, the optimizer's starting point."""
        return cls(np.full(N, 1j))

    @classmethod
    def from_angles(cls, theta) -> "RbmPhases":
        return cls(np.exp(1j * np.asarray(theta, dtype=float)))

    @classmethod
    def random(cls, N: int, rng: np.random.Generator) -> "RbmPhases":
        return cls.from_angles(rng.uniform(0.0, 2 * np.pi, N))

    @property
    def N(self) -> int:
        return self.phi.size


def effective_irs_correlation(R_irs: np.ndarray, m: float) -> np.ndarray:
    """Phase-noise-averaged IRS correlation ``m^2 R + (1 - m^2) I``."""
    return m * m * R_irs + (1.0 - m * m) * np.eye(R_irs.shape[-1])


def effective_covariance(stats: ChannelStatistics, rbm: RbmPhases, k: int) -> np.ndarray:
    """Covariance ``R_k = E[h_k h_k^H]`` for reflection coefficients ``rbm``.

    Evaluated as ``beta_d R_BS + H1 (m^2 Theta S_off Theta^H + diag(S)) H1^H``,
    where ``S = beta2 R_IRS`` and ``S_off`` is its off-diagonal part. On the unit
    circle this equals ``beta2 H1 Theta R~ Theta^H H1^H + beta_d R_BS`` and makes
    the ``m = 0`` case exactly independent of ``Theta``.
    """
    if rbm.N != stats.N:
        raise ValueError(f"rbm has {rbm.N} elements, statistics expect {stats.N}")
    S = stats.irs_covariance(k)
    d = np.diag(S).copy()
    off = S - np.diag(d)
    inner = (stats.m ** 2) * (rbm.phi[:, None] * off * np.conj(rbm.phi)[None, :]) + np.diag(d)
    R = stats.beta_d[k] * stats.R_bs[k] + stats.H1 @ inner @ stats.H1.conj().T
    return 0.5 * (R + R.conj().T)


def effective_covariances(stats: ChannelStatistics, rbm: RbmPhases) -> np.ndarray:
    """Stack of :func:`effective_covariance` over all UEs, shape (K, M, M)."""
    return np.stack([effective_covariance(stats, rbm, k) for k in range(stats.K)])


def covariance_extension(stats: ChannelStatistics, phi: np.ndarray) -> np.ndarray:
    """``beta_d R_BS + G S~ G^H`` with ``G = H1 diag(phi)`` for arbitrary complex ``phi``.

    Equal to :func:`effective_covariances` on the unit circle. Off the circle it
    is the smooth extension whose Wirtinger derivatives the gradient code uses.
    """
    G = stats.H1 * phi[None, :]
    out = np.empty((stats.K, stats.M, stats.M), dtype=complex)
    for k in range(stats.K):
        St = effective_irs_correlation(stats.R_irs[k], stats.m) * stats.beta2[k]
        out[k] = stats.beta_d[k] * stats.R_bs[k] + G @ St @ G.conj().T
    return out


def psd_sqrt(R: np.ndarray) -> np.ndarray:
    """Factor ``L`` with ``L L^H = R`` via a clipped Hermitian eigendecomposition."""
    w, V = np.linalg.eigh(0.5 * (R + R.conj().T))
    return (V * np.sqrt(np.clip(w, 0.0, None))[..., None, :])


# ---------------------------------------------------------------------------
# sampling
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ChannelDraw:
    """One realization of every random quantity of the data phase.

    Arrays carry a leading trial axis when produced by :func:`sample_draws`.

    Attributes
    ----------
    h_d : (..., K, M)   direct channels
    h_2 : (..., K, N)   IRS-UE channels
    theta_tilde : (..., N)    IRS phase errors, common to all UEs
    h : (..., K, M)     overall channels ``h_d + H1 Theta Theta~ h_2``
    delta_t : (..., K)  UE transmit distortions
    delta_r : (..., M)  BS receive distortion
    """

    h_d: np.ndarray
    h_2: np.ndarray
    theta_tilde: np.ndarray
    h: np.ndarray
    delta_t: np.ndarray
    delta_r: np.ndarray


def _cn(rng: np.random.Generator, size) -> np.ndarray:
    """Standard circularly-symmetric complex Gaussian samples."""
    z = rng.standard_normal((*np.atleast_1d(size), 2))
    return (z[..., 0] + 1j * z[..., 1]) * np.sqrt(0.5)


@dataclass(frozen=True)
class _SqrtFactors:
    irs: np.ndarray   # (K, N, N)
    bs: np.ndarray    # (K, M, M)

    @classmethod
    def of(cls, stats: ChannelStatistics) -> "_SqrtFactors":
        irs = np.stack([np.sqrt(stats.beta2[k]) * psd_sqrt(stats.R_irs[k]) for k in range(stats.K)])
        bs = np.stack([np.sqrt(stats.beta_d[k]) * psd_sqrt(stats.R_bs[k]) for k in range(stats.K)])
        return cls(irs, bs)


def _standard_variates(rng: np.random.Generator, K: int, M: int, N: int,
                       model: PhaseNoiseModel) -> dict:
    """Raw variates of one trial, consumed in a fixed order."""
    return {
        "z_d": _cn(rng, (K, M)),
        "z_2": _cn(rng, (K, N)),
        "theta": sample_phase_errors(model, rng, N),
        "z_t": _cn(rng, K),
        "z_r": _cn(rng, M),
    }


def _compose(stats: ChannelStatistics, rbm: RbmPhases, scenario: Scenario,
             v: dict, sq: _SqrtFactors) -> ChannelDraw:
    h_d = np.einsum("kab,...kb->...ka", sq.bs, v["z_d"])
    h_2 = np.einsum("kab,...kb->...ka", sq.irs, v["z_2"])
    G = stats.H1 * rbm.phi[None, :]
    h = h_d + np.einsum("mn,...kn->...km", G, h_2 * np.exp(1j * v["theta"])[..., None, :])
    rho = scenario.rho_array
    delta_t = np.sqrt(scenario.kappa_ue * rho) * v["z_t"]
    ups = scenario.kappa_bs * np.einsum("k,...km->...m", rho, np.abs(h) ** 2)
    delta_r = np.sqrt(ups) * v["z_r"]
    return ChannelDraw(h_d, h_2, v["theta"], h, delta_t, delta_r)


def sample_draw(stats: ChannelStatistics, rbm: RbmPhases, scenario: Scenario,
                rng: np.random.Generator) -> ChannelDraw:
    """Sample one trial: channels, phase errors and data-phase distortions.

    ``h_2,k = sqrt(beta2_k) R_IRS,k^{1/2} z``, ``h_d,k = sqrt(beta_d,k) R_BS,k^{1/2} z``,
    ``delta_t,k ~ CN(0, kappa_UE rho_k)`` and ``delta_r ~ CN(0, Upsilon)`` with
    ``Upsilon = kappa_BS sum_i rho_i diag(|h_i|^2)`` given the drawn channels.
    """
    v = _standard_variates(rng, stats.K, stats.M, stats.N, scenario.phase_noise)
    return _compose(stats, rbm, scenario, v, _SqrtFactors.of(stats))


def sample_draws(stats: ChannelStatistics, rbm: RbmPhases, scenario: Scenario,
                 trials: range, seed: int | None = None, with_training: bool = True):
    """Draw a batch of trials, each from its own ``(seed, trial)`` stream.

    Returns the batched :class:`ChannelDraw` and, if ``with_training``, the
    standard variates of the training phase for every UE: a dict of arrays
    ``z_t (T, K, K)``, ``z_r (T, K, M)``, ``z_w (T, K, M)`` (indexed by trial,
    estimated UE, then element). The draws of trial ``t`` do not depend on
    which other trials are in the batch.
    """
    seed = scenario.seed if seed is None else seed
    K, M, N = stats.K, stats.M, stats.N
    keys = ("z_d", "z_2", "theta", "z_t", "z_r")
    acc = {key: [] for key in keys}
    tr = {"z_t": [], "z_r": [], "z_w": []}
    for t in trials:
        rng = trial_rng(seed, t)
        v = _standard_variates(rng, K, M, N, scenario.phase_noise)
        for key in keys:
            acc[key].append(v[key])
        if with_training:
            zt, zr, zw = zip(*(training_variates(rng, K, M) for _ in range(K)))
            tr["z_t"].append(np.stack(zt))
            tr["z_r"].append(np.stack(zr))
            tr["z_w"].append(np.stack(zw))
    v = {key: np.stack(val) for key, val in acc.items()}
    draw = _compose(stats, rbm, scenario, v, _SqrtFactors.of(stats))
    if not with_training:
        return draw
    return draw, {key: np.stack(val) for key, val in tr.items()}


def training_variates(rng: np.random.Generator, K: int, M: int):
    """Standard variates of one training observation: ``z_t`` (K), ``z_r`` (M), ``z_w`` (M)."""
    return _cn(rng, K), _cn(rng, M), _cn(rng, M)
