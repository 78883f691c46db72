import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from irs_uplink.scenario import (Geometry, PhaseNoiseModel, Scenario, ScenarioError, adc_kappa,
                                 db_to_linear, dbm_to_mw, default_scenario, linear_to_db,
                                 load_scenario, noise_power, parse_config_text, path_loss,
                                 scenario_from_dict)


# -- unit conversions --------------------------------------------------------

def test_db_to_linear_examples():
    assert db_to_linear(0.0) == 1.0
    assert db_to_linear(26.0) == pytest.approx(398.107170553497, rel=1e-12)
    assert dbm_to_mw(-80.0) == pytest.approx(1e-8, rel=1e-12)


def test_db_to_linear_vectorised():
    out = db_to_linear(np.array([0.0, 10.0, 20.0]))
    np.testing.assert_allclose(out, [1.0, 10.0, 100.0], rtol=1e-14)


@given(st.floats(min_value=-200, max_value=200, allow_nan=False))
def test_db_round_trip(x):
    assert abs(linear_to_db(db_to_linear(x)) - x) <= 1e-12


def test_noise_power_examples():
    assert noise_power(200e3) == pytest.approx(-120.9897, abs=1e-4)
    assert noise_power(1.0) == -174.0
    assert noise_power(1e6) == pytest.approx(-114.0, abs=1e-12)
    with pytest.raises(ValueError):
        noise_power(0.0)


def test_adc_kappa_examples():
    assert adc_kappa(2) == pytest.approx(0.258 ** 2, rel=1e-2)
    assert adc_kappa(3) == pytest.approx(0.126 ** 2, rel=1e-2)
    assert adc_kappa(60) < 1e-30
    with pytest.raises(ValueError):
        adc_kappa(0)
    with pytest.raises(ValueError):
        adc_kappa(2.5)


def test_adc_kappa_strictly_decreasing():
    vals = [adc_kappa(b) for b in range(1, 25)]
    assert all(a > b for a, b in zip(vals, vals[1:]))


# -- path loss ---------------------------------------------------------------

def test_path_loss_beta1_example():
    geo = Geometry(d_bs_irs=8.0, alpha1=2.2, c1=float(db_to_linear(26.0)), d_irs_ue=(60.0,))
    beta1, _, _ = path_loss(geo, 0)
    assert beta1 == pytest.approx(398.107170553497 * 8.0 ** -2.2, rel=1e-12)


def test_path_loss_zero_exponent_is_distance_independent():
    geo = Geometry(alpha1=0.0, alpha2=0.0, d_irs_ue=(13.0, 97.0))
    b1, b2a, bda = path_loss(geo, 0)
    _, b2b, bdb = path_loss(geo, 1)
    assert b1 == geo.c1
    assert b2a == b2b == geo.c2
    assert bda == bdb


def test_path_loss_penetration():
    geo = Geometry(d_irs_ue=(60.0,))
    _, b2, bd = path_loss(geo, 0)
    assert bd == pytest.approx(b2 * 10 ** -1.5, rel=1e-12)


def test_path_loss_separate_direct_distance():
    geo = Geometry(d_irs_ue=(60.0,), d_bs_ue=(30.0,))
    _, b2, bd = path_loss(geo, 0)
    assert bd == pytest.approx(b2 * 2.0 ** geo.alpha2 * 10 ** -1.5, rel=1e-12)


# -- scenario ----------------------------------------------------------------

def test_default_scenario_values():
    sc = default_scenario()
    assert (sc.M, sc.N, sc.K, sc.tau_c, sc.tau) == (16, 60, 5, 200, 5)
    assert sc.sigma2 == pytest.approx(1e-8)
    assert sc.P == pytest.approx(10 ** 0.6)
    assert sc.rho == (sc.P,) * 5
    assert sc.pre_log == pytest.approx(0.975)
    assert sc.phase_noise == PhaseNoiseModel("vonmises", 2.0)


def test_tau_defaults_to_K():
    assert Scenario.build(K=3).tau == 3


def test_tau_below_K_rejected():
    with pytest.raises(ScenarioError) as exc:
        Scenario.build(K=4, tau=3)
    assert exc.value.field == "tau"
    assert "tau >= K" in str(exc.value)


@pytest.mark.parametrize("kw, field", [
    (dict(tau=200), "tau"),
    (dict(M=0), "M"),
    (dict(sigma2=0.0), "sigma2"),
    (dict(P=-1.0), "P"),
    (dict(kappa_bs=-0.1), "kappa_bs"),
    (dict(seed=-1), "seed"),
    (dict(phase_noise=PhaseNoiseModel("gauss", 1.0)), "phase_noise.kind"),
    (dict(phase_noise=PhaseNoiseModel("vonmises", -1.0)), "phase_noise.kappa_theta"),
    (dict(geometry=Geometry(d_irs_ue=(60.0, 50.0))), "geometry.d_irs_ue"),
    (dict(geometry=Geometry(alpha1=-1.0)), "geometry.alpha1"),
])
def test_invalid_fields_rejected(kw, field):
    with pytest.raises(ScenarioError) as exc:
        Scenario.build(**kw)
    assert exc.value.field == field


def test_replace_rebroadcasts_per_ue_fields():
    sc = default_scenario().replace(K=3)
    assert sc.tau == 3
    assert len(sc.rho) == 3
    assert len(sc.geometry.d_irs_ue) == 3
    sc2 = sc.replace(P=2.0)
    assert sc2.rho == (2.0,) * 3


def test_statistics_key_ignores_powers_and_tracks_seed():
    sc = default_scenario()
    assert sc.statistics_key() == sc.replace(P=1.0, kappa_bs=0.0).statistics_key()
    assert sc.statistics_key() != sc.replace(seed=2).statistics_key()
    assert sc.statistics_key() != sc.replace(N=20).statistics_key()


@settings(max_examples=30, deadline=None)
@given(M=st.integers(1, 64), N=st.integers(1, 200), K=st.integers(1, 10),
       extra=st.integers(0, 5), seed=st.integers(0, 2 ** 64 - 1))
def test_valid_dimensions_build(M, N, K, extra, seed):
    sc = Scenario.build(M=M, N=N, K=K, tau=K + extra, seed=seed)
    assert sc.tau >= sc.K and sc.tau < sc.tau_c
    assert len(sc.rho) == K


# -- configuration files -----------------------------------------------------

CONFIG = """\
M: 8
N: 16
K: 3
seed: 7
pilot_power_db: 10
noise_db: -90
kappa_bs: 0.01
kappa_ue: 0.02
phase_noise:
  kind: vonmises
  kappa_theta: 4
geometry:
  d_bs_irs: 10
  d_irs_ue: [50, 60, 70]
"""


def test_load_scenario(tmp_path):
    path = tmp_path / "sc.yaml"
    path.write_text(CONFIG)
    sc = load_scenario(path)
    assert (sc.M, sc.N, sc.K, sc.seed, sc.tau) == (8, 16, 3, 7, 3)
    assert sc.P == pytest.approx(10.0)
    assert sc.rho == pytest.approx((10.0,) * 3)
    assert sc.sigma2 == pytest.approx(1e-9)
    assert sc.phase_noise == PhaseNoiseModel("vonmises", 4.0)
    assert sc.geometry.d_irs_ue == (50.0, 60.0, 70.0)
    assert sc.geometry.d_bs_irs == 10.0


def test_config_error_is_line_anchored(tmp_path):
    path = tmp_path / "bad.yaml"
    path.write_text("M: 8\nK: 4\ntau: 2\n")
    with pytest.raises(ScenarioError) as exc:
        load_scenario(path)
    assert exc.value.line == 3
    assert str(exc.value).startswith("line 3: tau")


def test_unknown_key_rejected():
    cfg, lines = parse_config_text("M: 8\nbogus: 1\n")
    with pytest.raises(ScenarioError) as exc:
        scenario_from_dict(cfg, lines)
    assert exc.value.line == 2


def test_config_k_change_broadcasts_default_geometry():
    sc = scenario_from_dict({"K": 2})
    assert len(sc.geometry.d_irs_ue) == 2
    assert math.isclose(sc.geometry.d_irs_ue[0], 60.0)
