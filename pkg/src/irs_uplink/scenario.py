"""System parameters, unit conversions and scenario-file parsing.

Every other module consumes a validated :class:`Scenario`. All quantities are
stored in linear units (powers in mW); decibels only appear at the config and
reporting boundary, where every dB-valued key carries a ``_db`` suffix.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

import numpy as np
import yaml

PHASE_NOISE_KINDS = ("none", "uniform", "vonmises")


class ScenarioError(ValueError):
    """Invalid scenario or configuration file.

    Attributes
    ----------
    field : str
        Dotted name of the offending field.
    line : int or None
        1-based line in the configuration file, when known.
    """

    def __init__(self, field: str, message: str, line: int | None = None):
        self.field = field
        self.message = message
        self.line = line
        where = f"line {line}: " if line is not None else ""
        super().__init__(f"{where}{field}: {message}")


# ---------------------------------------------------------------------------
# unit conversions
# ---------------------------------------------------------------------------

def db_to_linear(x_db):
    """Return ``10**(x/10)``; works on scalars and arrays."""
    return np.power(10.0, np.asarray(x_db, dtype=float) / 10.0)[()]


def linear_to_db(x):
    """Return ``10*log10(x)``; inverse of :func:`db_to_linear`."""
    return (10.0 * np.log10(np.asarray(x, dtype=float)))[()]


def dbm_to_mw(p_dbm):
    """Convert a power in dBm to mW (same map as :func:`db_to_linear`)."""
    return db_to_linear(p_dbm)


def noise_power(bandwidth_hz: float) -> float:
    """Thermal noise power in dBm over ``bandwidth_hz`` at -174 dBm/Hz."""
    if bandwidth_hz <= 0:
        raise ValueError("bandwidth must be positive")
    return -174.0 + 10.0 * math.log10(bandwidth_hz)


def adc_kappa(bits: int) -> float:
    """Distortion proportionality of a ``bits``-bit quantizer.

    Uses the additive quantization-noise model, ``2^{-2b} / (1 - 2^{-2b})``.
    """
    if bits < 1 or int(bits) != bits:
        raise ValueError("bits must be a positive integer")
    q = 2.0 ** (-2 * int(bits))
    return q / (1.0 - q)


# ---------------------------------------------------------------------------
# configuration dataclasses
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PhaseNoiseModel:
    """Distribution of the residual IRS phase errors.

    ``kind`` is one of ``"none"`` (perfect phases), ``"uniform"`` on
    ``[-pi, pi)`` or ``"vonmises"`` with concentration ``kappa_theta``.
    """

    kind: str = "vonmises"
    kappa_theta: float = 2.0

    def validate(self) -> None:
        if self.kind not in PHASE_NOISE_KINDS:
            raise ScenarioError("phase_noise.kind",
                                f"must be one of {PHASE_NOISE_KINDS}, got {self.kind!r}")
        if not self.kappa_theta >= 0 or not math.isfinite(self.kappa_theta):
            raise ScenarioError("phase_noise.kappa_theta", "must be finite and >= 0")


@dataclass(frozen=True)
class Geometry:
    """Distances, path-loss laws and array spacings.

    Spacings are in wavelengths. ``d_irs_ue`` and ``d_bs_ue`` hold one
    distance per UE (a scalar is broadcast when the scenario is built);
    ``d_bs_ue = None`` makes the direct link use the IRS-UE distance.
    """

    d_bs_irs: float = 8.0              # m
    d_irs_ue: tuple = (60.0,)          # m, per UE
    d_bs_ue: tuple | None = None       # m, per UE; None -> d_irs_ue
    alpha1: float = 2.2                # BS-IRS path-loss exponent
    alpha2: float = 3.67               # IRS-UE (and direct) exponent
    c1: float = float(db_to_linear(26.0))
    c2: float = float(db_to_linear(28.0))
    penetration_loss: float = float(db_to_linear(15.0))  # extra direct-link loss
    spacing_bs: float = 0.5            # wavelengths
    spacing_irs: float = 0.5           # wavelengths

    def validate(self, K: int) -> None:
        for name in ("d_bs_irs", "c1", "c2", "penetration_loss"):
            v = getattr(self, name)
            if not (v > 0 and math.isfinite(v)):
                raise ScenarioError(f"geometry.{name}", "must be finite and > 0")
        for name in ("alpha1", "alpha2", "spacing_bs", "spacing_irs"):
            v = getattr(self, name)
            if not (v >= 0 and math.isfinite(v)):
                raise ScenarioError(f"geometry.{name}", "must be finite and >= 0")
        for name in ("d_irs_ue", "d_bs_ue"):
            v = getattr(self, name)
            if v is None:
                continue
            if len(v) != K:
                raise ScenarioError(f"geometry.{name}", f"needs {K} entries, got {len(v)}")
            if not all(d > 0 and math.isfinite(d) for d in v):
                raise ScenarioError(f"geometry.{name}", "distances must be finite and > 0")


@dataclass(frozen=True)
class CorrelationModel:
    """Spatial-correlation settings for the BS array and the IRS.

    The IRS correlation is the numerical expectation over random angles of
    arrival: elevation Laplace (mean, spread in degrees; the spread is its
    standard deviation), azimuth Von Mises (mean in degrees, concentration).
    """

    enabled: bool = True
    bs_coefficient: float = 0.5
    elevation_mean_deg: float = 90.0
    elevation_spread_deg: float = 8.0
    azimuth_mean_deg: float = 0.0
    azimuth_concentration: float = 0.2
    draws: int = 100_000

    def validate(self) -> None:
        if not 0 <= self.bs_coefficient < 1:
            raise ScenarioError("correlation.bs_coefficient", "must lie in [0, 1)")
        if self.elevation_spread_deg < 0 or self.azimuth_concentration < 0:
            raise ScenarioError("correlation", "spread and concentration must be >= 0")
        if self.draws < 1:
            raise ScenarioError("correlation.draws", "must be >= 1")


@dataclass(frozen=True)
class Scenario:
    """All scalar system constants of one simulated deployment.

    Powers are linear (mW). ``rho`` holds one data power per UE and
    ``geometry`` distances one entry per UE; :meth:`build` broadcasts scalars.
    """

    M: int = 16
    N: int = 60
    K: int = 5
    tau_c: int = 200
    tau: int = 5
    P: float = float(dbm_to_mw(6.0))        # pilot power per UE, mW
    rho: tuple = (float(dbm_to_mw(6.0)),) * 5  # data power per UE, mW
    sigma2: float = float(dbm_to_mw(-80.0))  # receiver noise, mW
    kappa_bs: float = 0.126 ** 2
    kappa_ue: float = 0.126 ** 2
    phase_noise: PhaseNoiseModel = field(default_factory=PhaseNoiseModel)
    geometry: Geometry = field(default_factory=lambda: Geometry(d_irs_ue=(60.0,) * 5))
    correlation: CorrelationModel = field(default_factory=CorrelationModel)
    seed: int = 1

    # -- construction -----------------------------------------------------
    @classmethod
    def build(cls, **kw) -> "Scenario":
        """Build and validate, broadcasting per-UE scalars and defaulting ``tau = K``."""
        K = int(kw.get("K", cls.K))
        kw.setdefault("tau", K)
        P = kw.setdefault("P", cls.P)
        rho = kw.get("rho", P)
        kw["rho"] = _per_ue(rho, K, "rho")
        geo = kw.get("geometry", Geometry())
        kw["geometry"] = _broadcast_geometry(geo, K)
        sc = cls(**kw)
        sc.validate()
        return sc

    def replace(self, **changes) -> "Scenario":
        """Copy with ``changes`` applied, re-broadcasting per-UE fields when K changes."""
        d = {f.name: getattr(self, f.name) for f in dataclasses.fields(self)}
        K_old = self.K
        d.update(changes)
        K = int(d["K"])
        if K != K_old:
            if "tau" not in changes:
                d["tau"] = K if self.tau == K_old else max(self.tau, K)
            if "rho" not in changes:
                d["rho"] = _per_ue(self.rho[0], K, "rho")
            if "geometry" not in changes:
                g = self.geometry
                d["geometry"] = dataclasses.replace(
                    g, d_irs_ue=(g.d_irs_ue[0],) * K,
                    d_bs_ue=None if g.d_bs_ue is None else (g.d_bs_ue[0],) * K)
        if "P" in changes and "rho" not in changes:
            d["rho"] = _per_ue(changes["P"], K, "rho")
        d["rho"] = _per_ue(d["rho"], K, "rho")
        d["geometry"] = _broadcast_geometry(d["geometry"], K)
        sc = Scenario(**d)
        sc.validate()
        return sc

    # -- validation -------------------------------------------------------
    def validate(self) -> None:
        for name in ("M", "N", "K", "tau_c", "tau"):
            v = getattr(self, name)
            if int(v) != v or v < 1:
                raise ScenarioError(name, f"must be a positive integer, got {v!r}")
        if self.tau < self.K:
            raise ScenarioError("tau", f"tau >= K is required for orthogonal pilots "
                                       f"(tau={self.tau}, K={self.K})")
        if self.tau >= self.tau_c:
            raise ScenarioError("tau", f"tau < tau_c is required (tau={self.tau}, "
                                       f"tau_c={self.tau_c})")
        for name in ("P", "sigma2"):
            v = getattr(self, name)
            if not (v > 0 and math.isfinite(v)):
                raise ScenarioError(name, "must be finite and > 0")
        if len(self.rho) != self.K or not all(r > 0 and math.isfinite(r) for r in self.rho):
            raise ScenarioError("rho", f"needs {self.K} finite positive powers")
        for name in ("kappa_bs", "kappa_ue"):
            v = getattr(self, name)
            if not (v >= 0 and math.isfinite(v)):
                raise ScenarioError(name, "must be finite and >= 0")
        if not 0 <= self.seed < 2 ** 64:
            raise ScenarioError("seed", "must be an unsigned 64-bit integer")
        self.phase_noise.validate()
        self.geometry.validate(self.K)
        self.correlation.validate()

    # -- derived quantities ----------------------------------------------
    @property
    def pre_log(self) -> float:
        """Fraction of the coherence block carrying data, ``(tau_c - tau)/tau_c``."""
        return (self.tau_c - self.tau) / self.tau_c

    @property
    def rho_array(self) -> np.ndarray:
        return np.asarray(self.rho, dtype=float)

    def to_dict(self) -> dict:
        """Plain nested dict (linear units) used for hashing and reports."""
        return _jsonable(dataclasses.asdict(self))

    def statistics_key(self) -> str:
        """Content hash of every field that influences the channel statistics."""
        d = self.to_dict()
        keep = {k: d[k] for k in ("M", "N", "K", "phase_noise", "geometry",
                                  "correlation", "seed")}
        blob = json.dumps(keep, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def path_loss(geometry: Geometry, k: int) -> tuple[float, float, float]:
    """Large-scale gains ``(beta1, beta2_k, beta_d_k)`` for UE ``k``.

    ``beta = C * d**(-alpha)``; the direct link reuses the IRS-UE law with its
    own distance and an extra penetration loss.
    """
    beta1 = geometry.c1 * geometry.d_bs_irs ** (-geometry.alpha1)
    d2 = geometry.d_irs_ue[k]
    beta2 = geometry.c2 * d2 ** (-geometry.alpha2)
    dd = d2 if geometry.d_bs_ue is None else geometry.d_bs_ue[k]
    beta_d = geometry.c2 * dd ** (-geometry.alpha2) / geometry.penetration_loss
    return float(beta1), float(beta2), float(beta_d)


def default_scenario(**overrides) -> Scenario:
    """The numerical-results deployment: M=16, N=60, K=5, 3-bit ADCs, Von Mises(2)."""
    return Scenario.build(**overrides)


# ---------------------------------------------------------------------------
# configuration files
# ---------------------------------------------------------------------------

_TOP_KEYS = {
    "M": int, "N": int, "K": int, "tau_c": int, "tau": int, "seed": int,
    "pilot_power_db": float, "data_power_db": None, "noise_db": float,
    "kappa_bs": float, "kappa_ue": float, "adc_bits_bs": int, "adc_bits_ue": int,
    "phase_noise": dict, "geometry": dict, "correlation": dict,
}
_GEOMETRY_KEYS = {
    "d_bs_irs": float, "d_irs_ue": None, "d_bs_ue": None, "alpha1": float,
    "alpha2": float, "c1_db": float, "c2_db": float, "penetration_loss_db": float,
    "spacing_bs": float, "spacing_irs": float,
}
_PHASE_KEYS = {"kind": str, "kappa_theta": float}
_CORR_KEYS = {
    "enabled": bool, "bs_coefficient": float, "elevation_mean_deg": float,
    "elevation_spread_deg": float, "azimuth_mean_deg": float,
    "azimuth_concentration": float, "draws": int,
}


def scenario_from_dict(cfg: Mapping[str, Any], lines: Mapping[str, int] | None = None,
                       base: Scenario | None = None) -> Scenario:
    """Build a validated scenario from the config-file dialect.

    Parameters
    ----------
    cfg : mapping
        Parsed configuration; unknown keys are rejected.
    lines : mapping, optional
        Dotted key -> 1-based line number, used to anchor error messages.
    base : Scenario, optional
        Values for keys absent from ``cfg`` (defaults to :func:`default_scenario`).
    """
    lines = lines or {}

    def fail(key, msg):
        raise ScenarioError(key, msg, lines.get(key))

    def check(section, allowed, prefix):
        for key, val in section.items():
            dotted = f"{prefix}{key}"
            if key not in allowed:
                fail(dotted, "unknown key")
            typ = allowed[key]
            if typ is float and not (isinstance(val, (int, float)) and not isinstance(val, bool)):
                fail(dotted, f"expected a number, got {val!r}")
            if typ is int and not (isinstance(val, int) and not isinstance(val, bool)):
                fail(dotted, f"expected an integer, got {val!r}")
            if typ is bool and not isinstance(val, bool):
                fail(dotted, f"expected true/false, got {val!r}")
            if typ is str and not isinstance(val, str):
                fail(dotted, f"expected a string, got {val!r}")
            if typ is dict and not isinstance(val, Mapping):
                fail(dotted, "expected a mapping")

    if not isinstance(cfg, Mapping):
        raise ScenarioError("<root>", "configuration must be a mapping")
    check(cfg, _TOP_KEYS, "")
    base = base or default_scenario()
    K = cfg.get("K", base.K)
    kw: dict[str, Any] = {}
    for key in ("M", "N", "K", "tau_c", "tau", "seed"):
        if key in cfg:
            kw[key] = cfg[key]
    if "tau" not in cfg and "K" in cfg:
        kw["tau"] = K
    if "pilot_power_db" in cfg:
        kw["P"] = float(dbm_to_mw(cfg["pilot_power_db"]))
    if "data_power_db" in cfg:
        v = cfg["data_power_db"]
        vals = v if isinstance(v, list) else [v]
        if not all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in vals):
            fail("data_power_db", "expected a number or a list of numbers")
        kw["rho"] = tuple(float(dbm_to_mw(x)) for x in vals)
        if len(kw["rho"]) == 1:
            kw["rho"] = kw["rho"] * K
    elif "pilot_power_db" in cfg:
        kw["rho"] = (kw["P"],) * K
    if "noise_db" in cfg:
        kw["sigma2"] = float(dbm_to_mw(cfg["noise_db"]))
    for side in ("bs", "ue"):
        if f"kappa_{side}" in cfg and f"adc_bits_{side}" in cfg:
            fail(f"kappa_{side}", f"give either kappa_{side} or adc_bits_{side}, not both")
        if f"kappa_{side}" in cfg:
            kw[f"kappa_{side}"] = float(cfg[f"kappa_{side}"])
        if f"adc_bits_{side}" in cfg:
            try:
                kw[f"kappa_{side}"] = adc_kappa(cfg[f"adc_bits_{side}"])
            except ValueError as exc:
                fail(f"adc_bits_{side}", str(exc))

    if "phase_noise" in cfg:
        sec = cfg["phase_noise"]
        check(sec, _PHASE_KEYS, "phase_noise.")
        kw["phase_noise"] = dataclasses.replace(base.phase_noise, **sec)

    if "geometry" in cfg:
        geo = base.geometry
        sec = dict(cfg["geometry"])
        check(sec, _GEOMETRY_KEYS, "geometry.")
        gkw: dict[str, Any] = {}
        for key in ("d_bs_irs", "alpha1", "alpha2", "spacing_bs", "spacing_irs"):
            if key in sec:
                gkw[key] = float(sec[key])
        for key, target in (("c1_db", "c1"), ("c2_db", "c2"),
                            ("penetration_loss_db", "penetration_loss")):
            if key in sec:
                gkw[target] = float(db_to_linear(sec[key]))
        for key in ("d_irs_ue", "d_bs_ue"):
            if key in sec:
                v = sec[key]
                vals = v if isinstance(v, list) else [v]
                if not all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in vals):
                    fail(f"geometry.{key}", "expected a number or a list of numbers")
                gkw[key] = tuple(float(x) for x in vals)
        if K != base.K:
            # per-UE distances not given here are re-broadcast to the new K
            gkw.setdefault("d_irs_ue", geo.d_irs_ue[:1])
            if geo.d_bs_ue is not None:
                gkw.setdefault("d_bs_ue", geo.d_bs_ue[:1])
        kw["geometry"] = dataclasses.replace(geo, **gkw)

    if "correlation" in cfg:
        sec = cfg["correlation"]
        check(sec, _CORR_KEYS, "correlation.")
        kw["correlation"] = dataclasses.replace(base.correlation, **sec)

    try:
        if "K" in kw and kw["K"] != base.K:
            return base.replace(**kw)
        return base.replace(**kw) if kw else base
    except ScenarioError as exc:
        raise ScenarioError(exc.field, exc.message,
                            lines.get(exc.field, lines.get(exc.field.split(".")[0]))) from None
    except TypeError as exc:
        raise ScenarioError("<root>", str(exc)) from None


def _line_map(node, prefix="") -> dict[str, int]:
    """Dotted key -> 1-based line number from a PyYAML node tree."""
    out: dict[str, int] = {}
    if isinstance(node, yaml.MappingNode):
        for knode, vnode in node.value:
            key = f"{prefix}{knode.value}"
            out[key] = knode.start_mark.line + 1
            out.update(_line_map(vnode, key + "."))
    return out


def parse_config_text(text: str) -> tuple[dict, dict[str, int]]:
    """Parse YAML text into ``(mapping, line_map)``; syntax errors become ScenarioError."""
    try:
        node = yaml.compose(text)
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        line = mark.line + 1 if mark is not None else None
        raise ScenarioError("<syntax>", str(getattr(exc, "problem", exc)), line) from None
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ScenarioError("<root>", "configuration must be a mapping", 1)
    return data, (_line_map(node) if node is not None else {})


def load_scenario(path: str | Path, base: Scenario | None = None) -> Scenario:
    """Read and validate a YAML scenario file."""
    text = Path(path).read_text()
    data, lines = parse_config_text(text)
    return scenario_from_dict(data, lines, base)


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------

def _per_ue(value, K: int, name: str) -> tuple:
    if np.ndim(value) == 0:
        return (float(value),) * K
    vals = tuple(float(v) for v in value)
    if len(vals) == 1:
        return vals * K
    if len(vals) != K:
        raise ScenarioError(name, f"needs {K} entries, got {len(vals)}")
    return vals


def _broadcast_geometry(geo: Geometry, K: int) -> Geometry:
    d2 = geo.d_irs_ue
    d2 = (float(d2),) * K if np.ndim(d2) == 0 else tuple(float(x) for x in d2)
    if len(d2) == 1:
        d2 = d2 * K
    dd = geo.d_bs_ue
    if dd is not None:
        dd = (float(dd),) * K if np.ndim(dd) == 0 else tuple(float(x) for x in dd)
        if len(dd) == 1:
            dd = dd * K
    return dataclasses.replace(geo, d_irs_ue=d2, d_bs_ue=dd)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    return obj
