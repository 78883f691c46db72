"""Declarative parameter sweeps producing tidy CSV tables.

A sweep varies one scenario parameter (the axis) over a list of values and
evaluates every curve at every value. A curve is a labelled set of scenario
overrides in the configuration-file dialect, optionally with perfect CSI.
Each point can be optimised over the reflection coefficients and overlaid
with a Monte-Carlo estimate.

Sweep file layout::

    base: scenario.yaml          # path (relative to this file) or inline mapping
    axis: {name: N, values: [20, 40, 60]}
    curves:
      - {label: ideal, kappa_bs: 0.0, kappa_ue: 0.0}
      - {label: kappa 0.126^2, kappa_bs: 0.015876, kappa_ue: 0.015876}
    optimize_rbm: false
    form: exact
    trials: 0
    output: results/se_vs_n.csv
"""

from __future__ import annotations

import dataclasses
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

import numpy as np

from .channel import (ChannelStatistics, NumericError, RbmPhases, build_statistics,
                      cached_statistics, effective_covariances)
from .estimation import EstimatorState, perfect_csi_state
from .ioutil import write_csv
from .montecarlo import mc_sinr_terms
from .optimizer import OptimizerConfig, run_pga
from .performance import FORMS, evaluate
from .scenario import (Scenario, ScenarioError, dbm_to_mw, parse_config_text,
                       scenario_from_dict)

log = logging.getLogger(__name__)

#: Axes with special meaning; any other numeric :class:`Scenario` field is set directly.
SPECIAL_AXES = ("snr_db", "power_dbm", "kappa", "evm", "kappa_theta")
STRUCTURAL_AXES = ("M", "N", "K", "tau_c", "tau", "seed")

CSV_HEADER = ("axis", "value", "curve", "sum_se", "nmse_mean", "optimized", "iterations",
              "status", "mc_sum_se", "mc_stderr", "error")


def perfect_csi_mode(stats: ChannelStatistics, scenario: Scenario,
                     rbm: RbmPhases | None = None) -> EstimatorState:
    """Estimator state with ``Psi_k = R_k`` (zero estimation error)."""
    rbm = RbmPhases.default(stats.N) if rbm is None else rbm
    return perfect_csi_state(effective_covariances(stats, rbm))


@dataclass(frozen=True)
class Curve:
    """One labelled line of a sweep."""

    label: str
    overrides: Mapping[str, Any] = field(default_factory=dict)
    perfect_csi: bool = False


@dataclass(frozen=True)
class SweepSpec:
    """A one-axis sweep over a base scenario.

    Attributes
    ----------
    base : Scenario
    axis : str
        Scenario field or one of :data:`SPECIAL_AXES`. ``snr_db`` sets both
        powers so that ``P * g / sigma^2`` hits the value, where ``g`` is the
        mean per-antenna channel gain ``tr(R_k)/M`` at the default phases.
        ``kappa`` sets both distortion levels, ``evm`` sets them to ``evm^2``.
    values : tuple
    curves : tuple of Curve
    optimize_rbm : bool
        Run projected gradient ascent at every point.
    form : str
        Closed form used for evaluation and optimisation.
    trials : int
        Monte-Carlo trials for the overlay (0 disables it).
    output : Path, optional
    optimizer : OptimizerConfig
    cache_dir : Path, optional
        On-disk cache for channel statistics.
    """

    base: Scenario
    axis: str
    values: tuple
    curves: tuple = (Curve("default"),)
    optimize_rbm: bool = False
    form: str = "exact"
    trials: int = 0
    output: Path | None = None
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    cache_dir: Path | None = None

    def __post_init__(self):
        object.__setattr__(self, "values", tuple(self.values))
        object.__setattr__(self, "curves", tuple(self.curves))
        if not self.values:
            raise ScenarioError("axis.values", "at least one value is required")
        if not self.curves:
            raise ScenarioError("curves", "at least one curve is required")
        labels = [c.label for c in self.curves]
        if len(set(labels)) != len(labels):
            raise ScenarioError("curves", "curve labels must be unique")
        if self.form not in FORMS:
            raise ScenarioError("form", f"must be one of {FORMS}")
        if self.trials and self.trials < 100:
            raise ScenarioError("trials", "Monte-Carlo overlay needs at least 100 trials")
        fields = {f.name for f in dataclasses.fields(Scenario)}
        if self.axis not in SPECIAL_AXES and self.axis not in fields:
            raise ScenarioError("axis.name", f"unknown axis {self.axis!r}")
        # every point must be a valid scenario
        for curve in self.curves:
            sc = curve_scenario(self.base, curve)
            for v in self.values:
                if self.axis != "snr_db":
                    apply_axis(sc, self.axis, v)


def curve_scenario(base: Scenario, curve: Curve) -> Scenario:
    return scenario_from_dict(dict(curve.overrides), base=base) if curve.overrides else base


def apply_axis(scenario: Scenario, axis: str, value, stats: ChannelStatistics | None = None
               ) -> Scenario:
    """Scenario with the swept parameter set to ``value``."""
    if axis == "snr_db":
        if stats is None:
            raise ValueError("snr_db needs the channel statistics")
        R = effective_covariances(stats, RbmPhases.default(stats.N))
        g = float(np.mean(np.real(np.trace(R, axis1=-2, axis2=-1)))) / stats.M
        P = scenario.sigma2 * 10 ** (float(value) / 10) / g
        return scenario.replace(P=P, rho=(P,) * scenario.K)
    if axis == "power_dbm":
        P = float(dbm_to_mw(value))
        return scenario.replace(P=P, rho=(P,) * scenario.K)
    if axis == "kappa":
        return scenario.replace(kappa_bs=float(value), kappa_ue=float(value))
    if axis == "evm":
        return scenario.replace(kappa_bs=float(value) ** 2, kappa_ue=float(value) ** 2)
    if axis == "kappa_theta":
        return scenario.replace(phase_noise=dataclasses.replace(scenario.phase_noise,
                                                                kappa_theta=float(value)))
    if axis in STRUCTURAL_AXES:
        if int(value) != value:
            raise ScenarioError(axis, f"must be an integer, got {value!r}")
        value = int(value)
    return scenario.replace(**{axis: value})


def _statistics(spec: SweepSpec, scenario: Scenario) -> ChannelStatistics:
    return cached_statistics(scenario, spec.cache_dir) if spec.cache_dir else \
        build_statistics(scenario)


def _point(spec: SweepSpec, curve: Curve, value) -> tuple:
    row = {"axis": spec.axis, "value": value, "curve": curve.label, "optimized": spec.optimize_rbm}
    try:
        sc = curve_scenario(spec.base, curve)
        if spec.axis == "snr_db":
            sc = apply_axis(sc, spec.axis, value, _statistics(spec, sc))
        else:
            sc = apply_axis(sc, spec.axis, value)
        stats = _statistics(spec, sc)
        rbm = RbmPhases.default(stats.N)
        if spec.optimize_rbm:
            trace = run_pga(stats, sc, spec.optimizer, rbm, form=spec.form,
                            perfect_csi=curve.perfect_csi)
            rbm = trace.final_rbm
            row.update(iterations=trace.iterations, status=trace.status)
        ev = evaluate(stats, rbm, sc, form=spec.form, perfect_csi=curve.perfect_csi)
        row.update(sum_se=ev.sum_se, nmse_mean=float(np.mean(ev.nmse)))
        if spec.trials:
            rep = mc_sinr_terms(stats, rbm, sc, spec.trials, form=spec.form,
                                perfect_csi=curve.perfect_csi)
            se_rows = rep.select("se")
            row["mc_sum_se"] = math.fsum(r.mc_mean for r in se_rows)
            # sum of per-UE standard errors bounds the error of the sum for any correlation
            row["mc_stderr"] = math.fsum(r.mc_stderr for r in se_rows)
    except (NumericError, ScenarioError, ValueError, np.linalg.LinAlgError) as exc:
        log.warning("sweep point %s=%s (%s) failed: %s", spec.axis, value, curve.label, exc)
        row["error"] = f"{type(exc).__name__}: {exc}"
    return tuple(row.get(c) for c in CSV_HEADER)


def run_sweep(spec: SweepSpec, workers: int = 1) -> list[tuple]:
    """Evaluate every (value, curve) point; writes ``spec.output`` when set.

    Rows come out in (value, curve) order whatever ``workers`` is, so the CSV
    does not depend on the degree of parallelism. A failing point is recorded
    in the ``error`` column and the sweep carries on.
    """
    jobs = [(curve, v) for v in spec.values for curve in spec.curves]
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            rows = list(pool.map(_point, [spec] * len(jobs), *zip(*jobs)))
    else:
        rows = [_point(spec, c, v) for c, v in jobs]
    if spec.output is not None:
        write_csv(spec.output, CSV_HEADER, rows)
    return rows


# ---------------------------------------------------------------------------
# sweep files
# ---------------------------------------------------------------------------

_SWEEP_KEYS = {"base", "axis", "curves", "optimize_rbm", "form", "trials", "output",
               "optimizer", "cache_dir"}
_OPTIMIZER_KEYS = {f.name for f in dataclasses.fields(OptimizerConfig)}


def sweep_from_dict(cfg: Mapping[str, Any], root: Path = Path("."),
                    lines: Mapping[str, int] | None = None,
                    base: Scenario | None = None) -> SweepSpec:
    """Build a :class:`SweepSpec` from a parsed sweep file (paths relative to ``root``)."""
    lines = lines or {}

    def fail(key, msg):
        raise ScenarioError(key, msg, lines.get(key))

    if not isinstance(cfg, Mapping):
        raise ScenarioError("<root>", "sweep file must be a mapping")
    for key in cfg:
        if key not in _SWEEP_KEYS:
            fail(key, "unknown key")
    b = cfg.get("base")
    if isinstance(b, str):
        path = root / b
        if not path.exists():
            fail("base", f"scenario file {str(path)!r} not found")
        data, blines = parse_config_text(path.read_text())
        base = scenario_from_dict(data, blines, base)
    elif isinstance(b, Mapping):
        base = scenario_from_dict(b, {k[5:]: v for k, v in lines.items()
                                      if k.startswith("base.")}, base)
    elif b is None:
        base = base or Scenario.build()
    else:
        fail("base", "expected a file name or a mapping")
    axis = cfg.get("axis")
    if not isinstance(axis, Mapping) or "name" not in axis or "values" not in axis:
        fail("axis", "expected a mapping with 'name' and 'values'")
    if set(axis) - {"name", "values"}:
        fail("axis", f"unknown keys {sorted(set(axis) - {'name', 'values'})}")
    if not isinstance(axis["values"], list) or not all(
            isinstance(v, (int, float)) and not isinstance(v, bool) for v in axis["values"]):
        fail("axis.values", "expected a list of numbers")
    curves = []
    for i, c in enumerate(cfg.get("curves") or [{"label": "default"}]):
        if not isinstance(c, Mapping) or "label" not in c:
            fail("curves", f"curve {i} needs a label")
        over = {k: v for k, v in c.items() if k not in ("label", "perfect_csi")}
        pcsi = c.get("perfect_csi", False)
        if not isinstance(pcsi, bool):
            fail("curves", f"curve {i}: perfect_csi must be true/false")
        curves.append(Curve(str(c["label"]), over, pcsi))
    opt = cfg.get("optimizer") or {}
    if not isinstance(opt, Mapping) or set(opt) - _OPTIMIZER_KEYS:
        fail("optimizer", f"allowed keys: {sorted(_OPTIMIZER_KEYS)}")
    for key, typ in (("optimize_rbm", bool), ("trials", int), ("form", str)):
        if key in cfg and (not isinstance(cfg[key], typ) or
                           (typ is int and isinstance(cfg[key], bool))):
            fail(key, f"expected {typ.__name__}")
    try:
        return SweepSpec(
            base=base, axis=str(axis["name"]), values=tuple(axis["values"]),
            curves=tuple(curves), optimize_rbm=cfg.get("optimize_rbm", False),
            form=cfg.get("form", "exact"), trials=cfg.get("trials", 0),
            output=root / cfg["output"] if cfg.get("output") else None,
            optimizer=OptimizerConfig(**opt),
            cache_dir=root / cfg["cache_dir"] if cfg.get("cache_dir") else None)
    except ScenarioError as exc:
        raise ScenarioError(exc.field, exc.message,
                            lines.get(exc.field, exc.line)) from None
    except ValueError as exc:
        raise ScenarioError("optimizer", str(exc), lines.get("optimizer")) from None


def load_sweep(path: str | Path, base: Scenario | None = None) -> SweepSpec:
    path = Path(path)
    data, lines = parse_config_text(path.read_text())
    return sweep_from_dict(data, path.parent, lines, base)
