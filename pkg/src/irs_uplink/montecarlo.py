"""Monte-Carlo estimates of every expectation behind the NMSE and the UatF SINR.

Each trial draws the channels, the IRS phase errors and the training-phase
impairments from its own ``(seed, trial)`` stream, forms the training
observation and the LMMSE estimate, and records the sample quantities

    g_ki = v_k^H h_i,    z_ki = sum_m |v_km|^2 |h_im|^2,    |v_k|^2

with ``v_k = hhat_k``. Data-phase distortions enter through their conditional
expectations given the channels, which are exactly these quantities.
Per-trial samples are kept so results do not depend on how trials are chunked.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .channel import ChannelStatistics, RbmPhases, sample_draws
from .estimation import training_observation_from_variates
from .ioutil import write_csv
from .performance import SinrBreakdown, UatfModel
from .scenario import Scenario

log = logging.getLogger(__name__)

CSV_HEADER = ("term", "closed_form", "mc_mean", "mc_stderr", "rel_err", "trials")
MIN_TRIALS = 100


@dataclass(frozen=True)
class McRow:
    """One paired estimate. ``term`` carries the UE index, e.g. ``bu[0]``."""

    term: str
    closed_form: float
    mc_mean: float
    mc_stderr: float
    trials: int

    @property
    def rel_err(self) -> float:
        if self.closed_form == 0:
            return float("inf") if self.mc_mean else 0.0
        return abs(self.mc_mean - self.closed_form) / abs(self.closed_form)

    @property
    def z_score(self) -> float:
        if self.mc_stderr == 0:
            return 0.0 if self.mc_mean == self.closed_form else float("inf")
        return abs(self.mc_mean - self.closed_form) / self.mc_stderr


@dataclass
class McReport:
    """Monte-Carlo estimates paired with their closed forms."""

    rows: list[McRow] = field(default_factory=list)

    def get(self, term: str, k: int | None = None) -> McRow:
        name = term if k is None else f"{term}[{k}]"
        for r in self.rows:
            if r.term == name:
                return r
        raise KeyError(name)

    def select(self, prefix: str) -> list[McRow]:
        return [r for r in self.rows if r.term.split("[")[0] == prefix]

    def max_rel_err(self, terms=None) -> float:
        rows = self.rows if terms is None else [r for r in self.rows
                                                if r.term.split("[")[0] in terms]
        return max(r.rel_err for r in rows)

    def csv_rows(self):
        return [(r.term, r.closed_form, r.mc_mean, r.mc_stderr, r.rel_err, r.trials)
                for r in self.rows]

    def to_csv(self, path: str | Path) -> Path:
        return write_csv(path, CSV_HEADER, self.csv_rows())


@dataclass
class _Samples:
    """Per-trial samples for every receiver ``k``: shapes (T, K) or (T, K, K)."""

    g: np.ndarray      # g[t, k, i] = v_k^H h_i
    z: np.ndarray      # z[t, k, i]
    vnorm: np.ndarray  # |v_k|^2
    err: np.ndarray    # |hhat_k - h_k|^2
    hnorm: np.ndarray  # |h_k|^2


def _collect(stats: ChannelStatistics, rbm: RbmPhases, scenario: Scenario, A: np.ndarray,
             trials: int, seed: int, perfect_csi: bool, chunk: int) -> _Samples:
    K = stats.K
    parts = []
    for start in range(0, trials, chunk):
        draw, tr = sample_draws(stats, rbm, scenario, range(start, min(start + chunk, trials)),
                                seed=seed, with_training=True)
        h = draw.h
        T = h.shape[0]
        g = np.empty((T, K, K), dtype=complex)
        z = np.empty((T, K, K))
        vnorm = np.empty((T, K))
        err = np.empty((T, K))
        habs2 = np.abs(h) ** 2
        for k in range(K):
            if perfect_csi:
                v = h[:, k]
            else:
                r = training_observation_from_variates(h, scenario, k, tr["z_t"][:, k],
                                                       tr["z_r"][:, k], tr["z_w"][:, k])
                v = r @ np.conj(A[k])
            g[:, k] = np.einsum("tm,tim->ti", np.conj(v), h)
            z[:, k] = np.einsum("tm,tim->ti", np.abs(v) ** 2, habs2)
            vnorm[:, k] = np.sum(np.abs(v) ** 2, axis=-1)
            err[:, k] = np.sum(np.abs(v - h[:, k]) ** 2, axis=-1)
        parts.append(_Samples(g, z, vnorm, err, habs2.sum(axis=-1)))
    return _Samples(*(np.concatenate([getattr(p, f) for p in parts])
                      for f in ("g", "z", "vnorm", "err", "hnorm")))


def _term_estimates(s: _Samples, scenario: Scenario) -> dict[str, np.ndarray]:
    """UatF terms (arrays over UEs) from a block of samples."""
    rho = scenario.rho_array
    K = s.g.shape[1]
    idx = np.arange(K)
    ds = s.g[:, idx, idx].mean(axis=0)
    p = np.abs(s.g) ** 2 * rho[None, None, :]
    p_mean = p.mean(axis=0)
    own = p_mean[idx, idx]
    signal = rho * np.abs(ds) ** 2
    terms = {
        "ds": np.real(ds),
        "signal": signal,
        "bu": own - signal,
        "mui": p_mean.sum(axis=1) - own,
        "td": scenario.kappa_ue * p_mean.sum(axis=1),
        "rd": scenario.kappa_bs * (s.z * rho[None, None, :]).mean(axis=0).sum(axis=1),
        "rn": scenario.sigma2 * s.vnorm.mean(axis=0),
    }
    interference = terms["bu"] + terms["mui"] + terms["td"] + terms["rd"] + terms["rn"]
    terms["gamma"] = signal / interference
    terms["se"] = scenario.pre_log * np.log2(1.0 + terms["gamma"])
    return terms


def _linear_stderr(s: _Samples, scenario: Scenario) -> dict[str, np.ndarray]:
    """Standard errors of the terms that are plain sample means."""
    rho = scenario.rho_array
    K = s.g.shape[1]
    n = s.g.shape[0]
    idx = np.arange(K)
    p = np.abs(s.g) ** 2 * rho[None, None, :]
    own = p[:, idx, idx]
    se = lambda x: x.std(axis=0, ddof=1) / np.sqrt(n)
    return {
        "ds": se(np.real(s.g[:, idx, idx])),
        "mui": se(p.sum(axis=2) - own),
        "td": scenario.kappa_ue * se(p.sum(axis=2)),
        "rd": scenario.kappa_bs * se((s.z * rho[None, None, :]).sum(axis=2)),
        "rn": scenario.sigma2 * se(s.vnorm),
    }


def _batch_stderr(s: _Samples, scenario: Scenario, batches: int) -> dict[str, np.ndarray]:
    """Batch-means standard errors for the nonlinear estimators."""
    n = s.g.shape[0]
    edges = np.linspace(0, n, batches + 1).astype(int)
    ests = [_term_estimates(_Samples(*(getattr(s, f)[a:b] for f in
                                       ("g", "z", "vnorm", "err", "hnorm"))), scenario)
            for a, b in zip(edges[:-1], edges[1:])]
    return {key: np.std([e[key] for e in ests], axis=0, ddof=1) / np.sqrt(batches)
            for key in ("signal", "bu", "gamma", "se")}


def _check_trials(trials: int) -> None:
    if trials < MIN_TRIALS:
        raise ValueError(f"Monte-Carlo needs at least {MIN_TRIALS} trials, got {trials}")


def mc_sinr_terms(stats: ChannelStatistics, rbm: RbmPhases, scenario: Scenario, trials: int,
                  *, seed: int | None = None, form: str = "exact", perfect_csi: bool = False,
                  chunk: int = 2048, batches: int = 20) -> McReport:
    """Estimate every UatF term by simulation and pair it with the closed form.

    Rows are ``ds`` (``E[v_k^H h_k]`` against ``tr Psi_k``), the six
    :class:`SinrBreakdown` terms, ``gamma`` and ``se`` for each UE.
    """
    _check_trials(trials)
    seed = scenario.seed if seed is None else seed
    model = UatfModel(stats, rbm.phi, scenario, form=form, perfect_csi=perfect_csi)
    bd: SinrBreakdown = model.breakdown()
    s = _collect(stats, rbm, scenario, model.state.A, trials, seed, perfect_csi, chunk)
    est = _term_estimates(s, scenario)
    err = {**_linear_stderr(s, scenario), **_batch_stderr(s, scenario, batches)}
    closed = {name: bd.term(name) for name in SinrBreakdown.TERMS}
    closed.update(ds=model.moments.tau, gamma=bd.gamma, se=bd.se)
    report = McReport()
    for name in ("ds", *SinrBreakdown.TERMS, "gamma", "se"):
        for k in range(stats.K):
            report.rows.append(McRow(f"{name}[{k}]", float(closed[name][k]), float(est[name][k]),
                                     float(err[name][k]), trials))
    return report


def mc_nmse(stats: ChannelStatistics, rbm: RbmPhases, scenario: Scenario, trials: int,
            *, seed: int | None = None, chunk: int = 2048) -> McReport:
    """Empirical ``E|hhat_k - h_k|^2 / E|h_k|^2`` per UE against the analytic NMSE."""
    _check_trials(trials)
    seed = scenario.seed if seed is None else seed
    model = UatfModel(stats, rbm.phi, scenario, form="simplified")
    s = _collect(stats, rbm, scenario, model.state.A, trials, seed, False, chunk)
    closed = model.state.nmse()
    num, den = s.err.mean(axis=0), s.hnorm.mean(axis=0)
    ratio = num / den
    # delta-method standard error of a ratio of means
    n = s.err.shape[0]
    resid = (s.err - ratio[None, :] * s.hnorm) / den[None, :]
    stderr = resid.std(axis=0, ddof=1) / np.sqrt(n)
    return McReport([McRow(f"nmse[{k}]", float(closed[k]), float(ratio[k]), float(stderr[k]),
                           trials) for k in range(stats.K)])
