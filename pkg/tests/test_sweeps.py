import dataclasses

import numpy as np
import pytest

import irs_uplink.sweeps as sweeps
from irs_uplink.channel import (NumericError, RbmPhases, build_statistics,
                                effective_covariances)
from irs_uplink.scenario import PhaseNoiseModel, ScenarioError, parse_config_text
from irs_uplink.sweeps import (CSV_HEADER, Curve, SweepSpec, apply_axis, load_sweep,
                               perfect_csi_mode, run_sweep, sweep_from_dict)

from conftest import small_scenario

COL = {name: i for i, name in enumerate(CSV_HEADER)}


def column(rows, name, curve=None):
    return np.array([r[COL[name]] for r in rows if curve is None or r[COL["curve"]] == curve])


def base(**kw):
    return small_scenario(draws=1000, **kw)


# -- apply_axis ------------------------------------------------------------------

def test_apply_axis_special_axes():
    sc = base()
    assert apply_axis(sc, "kappa", 0.01).kappa_bs == apply_axis(sc, "kappa", 0.01).kappa_ue == 0.01
    ev = apply_axis(sc, "evm", 0.126)
    assert ev.kappa_bs == ev.kappa_ue == pytest.approx(0.126 ** 2)
    assert apply_axis(sc, "power_dbm", 6.0).rho == pytest.approx((10 ** 0.6,) * sc.K)
    assert apply_axis(sc, "kappa_theta", 0.5).phase_noise == PhaseNoiseModel("vonmises", 0.5)
    assert apply_axis(sc, "N", 8.0).N == 8
    with pytest.raises(ScenarioError):
        apply_axis(sc, "N", 8.5)
    with pytest.raises(ValueError):
        apply_axis(sc, "snr_db", 10.0)


def test_snr_axis_sets_receive_snr():
    sc = base()
    stats = build_statistics(sc)
    R = effective_covariances(stats, RbmPhases.default(stats.N))
    g = np.mean(np.real(np.trace(R, axis1=1, axis2=2))) / stats.M
    for snr in (0.0, 17.0):
        s = apply_axis(sc, "snr_db", snr, stats)
        assert 10 * np.log10(s.P * g / s.sigma2) == pytest.approx(snr, abs=1e-12)
        assert s.rho == (s.P,) * s.K


def test_perfect_csi_mode_has_zero_nmse(small):
    sc, stats = small
    st_ = perfect_csi_mode(stats, sc)
    np.testing.assert_array_equal(st_.nmse(), 0.0)


# -- spec validation -------------------------------------------------------------

def test_spec_rejects_invalid_points_up_front():
    with pytest.raises(ScenarioError) as exc:
        SweepSpec(base(), "tau", (2, 1))
    assert exc.value.field == "tau"
    with pytest.raises(ScenarioError):
        SweepSpec(base(), "bogus", (1,))
    with pytest.raises(ScenarioError):
        SweepSpec(base(), "N", ())
    with pytest.raises(ScenarioError):
        SweepSpec(base(), "N", (4,), curves=(Curve("a"), Curve("a")))
    with pytest.raises(ScenarioError):
        SweepSpec(base(), "N", (4,), trials=10)


SWEEP = """\
base:
  M: 4
  N: 4
  K: 2
  seed: 1
  correlation: {draws: 1000}
axis: {name: N, values: [4, 8]}
curves:
  - {label: ideal, kappa_bs: 0.0, kappa_ue: 0.0}
  - {label: impaired}
output: out.csv
"""


def test_load_sweep(tmp_path):
    path = tmp_path / "sweep.yaml"
    path.write_text(SWEEP)
    spec = load_sweep(path)
    assert spec.axis == "N" and spec.values == (4, 8)
    assert [c.label for c in spec.curves] == ["ideal", "impaired"]
    assert spec.output == tmp_path / "out.csv"
    assert spec.base.M == 4


def test_sweep_file_errors_are_line_anchored():
    text = SWEEP.replace("output: out.csv", "trials: 5")
    cfg, lines = parse_config_text(text)
    with pytest.raises(ScenarioError) as exc:
        sweep_from_dict(cfg, lines=lines)
    assert exc.value.field == "trials"
    assert exc.value.line == 11
    cfg, lines = parse_config_text(SWEEP + "colour: red\n")
    with pytest.raises(ScenarioError) as exc:
        sweep_from_dict(cfg, lines=lines)
    assert exc.value.line == 12


# -- running -----------------------------------------------------------------------

def test_rows_follow_value_then_curve_order():
    spec = SweepSpec(base(), "N", (4, 8), curves=(Curve("b"), Curve("a")))
    rows = run_sweep(spec)
    assert [(r[COL["value"]], r[COL["curve"]]) for r in rows] == [(4, "b"), (4, "a"),
                                                                   (8, "b"), (8, "a")]
    assert all(r[COL["error"]] is None for r in rows)


def test_csv_is_byte_identical_across_runs_and_workers(tmp_path):
    spec = SweepSpec(base(), "kappa", (0.0, 0.01), curves=(Curve("x"), Curve("y", {"M": 2})),
                     optimize_rbm=True, trials=200)
    outs = []
    for i, workers in enumerate((1, 1, 2)):
        out = tmp_path / f"s{i}.csv"
        run_sweep(dataclasses.replace(spec, output=out), workers=workers)
        outs.append(out.read_bytes())
    assert outs[0] == outs[1] == outs[2]
    header = outs[0].decode().splitlines()[0]
    assert header == ",".join(CSV_HEADER)


def test_failing_point_is_recorded_and_sweep_continues(monkeypatch):
    real = sweeps.evaluate

    def flaky(stats, rbm, sc, **kw):
        if sc.kappa_bs == 0.02:
            raise NumericError("performance.evaluate", "injected failure")
        return real(stats, rbm, sc, **kw)

    monkeypatch.setattr(sweeps, "evaluate", flaky)
    rows = run_sweep(SweepSpec(base(), "kappa", (0.01, 0.02, 0.03)))
    errors = column(rows, "error")
    assert errors[0] is None and errors[2] is None
    assert "injected failure" in errors[1]
    assert rows[1][COL["sum_se"]] is None


def test_mc_overlay_tracks_closed_form():
    rows = run_sweep(SweepSpec(base(), "kappa", (0.0, 0.02), trials=5000))
    for r in rows:
        assert abs(r[COL["mc_sum_se"]] - r[COL["sum_se"]]) < 5 * r[COL["mc_stderr"]]


def test_nmse_floor_ordering():
    kappas = (0.0, 0.062 ** 2, 0.126 ** 2, 0.258 ** 2)
    spec = SweepSpec(base(), "snr_db", (0, 10, 20, 30, 40),
                     curves=tuple(Curve(f"k{i}", {"kappa_bs": k, "kappa_ue": k})
                                  for i, k in enumerate(kappas)))
    rows = run_sweep(spec)
    curves = [column(rows, "nmse_mean", f"k{i}") for i in range(4)]
    for lo, hi in zip(curves, curves[1:]):
        assert np.all(hi > lo)
    assert np.all(np.diff(curves[0]) < 0)


def test_sum_se_versus_n_shapes():
    spec = SweepSpec(base(K=2, M=4), "N", (8, 16, 32, 64),
                     curves=(Curve("ideal", {"kappa_bs": 0.0, "kappa_ue": 0.0}),
                             Curve("impaired", {"kappa_bs": 0.258 ** 2, "kappa_ue": 0.258 ** 2})))
    rows = run_sweep(spec)
    ideal, impaired = column(rows, "sum_se", "ideal"), column(rows, "sum_se", "impaired")
    assert np.all(np.diff(ideal) > 0)
    assert np.all(ideal > impaired)
    inc = np.diff(impaired)
    assert np.all(inc[1:] < inc[:-1])


def test_phase_noise_curves():
    curves = (Curve("uniform", {"phase_noise": {"kind": "uniform"}}),
              Curve("vm0", {"phase_noise": {"kind": "vonmises", "kappa_theta": 0.0}}),
              Curve("vm2", {"phase_noise": {"kind": "vonmises", "kappa_theta": 2.0}}))
    for optimize in (False, True):
        rows = run_sweep(SweepSpec(base(), "N", (4, 8), curves=curves, optimize_rbm=optimize))
        uni, vm0, vm2 = (column(rows, "sum_se", c.label) for c in curves)
        np.testing.assert_allclose(vm0, uni, rtol=1e-9)
        assert np.all(uni <= vm2)


def test_perfect_csi_dominates_and_gap_grows_with_n():
    curves = (Curve("imperfect"), Curve("perfect", perfect_csi=True))
    rows = run_sweep(SweepSpec(base(), "N", (8, 16, 32, 64), curves=curves))
    imp, per = column(rows, "sum_se", "imperfect"), column(rows, "sum_se", "perfect")
    assert np.all(column(rows, "nmse_mean", "perfect") == 0)
    assert np.all(per >= imp)
    assert np.all(np.diff(per - imp) > 0)


def test_optimisation_never_hurts():
    spec = SweepSpec(base(), "N", (4, 8, 16))
    plain = run_sweep(spec)
    opt = run_sweep(dataclasses.replace(spec, optimize_rbm=True))
    assert np.all(column(opt, "sum_se") >= column(plain, "sum_se"))
    assert set(column(opt, "status")) <= {"converged", "stalled", "max_iters"}
    assert all(column(opt, "optimized"))
