import numpy as np
import pytest

from irs_uplink.channel import RbmPhases, build_statistics, effective_covariance
from irs_uplink.montecarlo import MIN_TRIALS, McReport, McRow, mc_nmse, mc_sinr_terms
from irs_uplink.performance import SinrBreakdown
from irs_uplink.scenario import PhaseNoiseModel
from irs_uplink.sweeps import apply_axis

from conftest import random_rbm, small_scenario

ALL_TERMS = ("ds", *SinrBreakdown.TERMS, "gamma", "se")


@pytest.fixture(scope="module")
def scalar():
    sc = small_scenario(M=1, N=1, K=1, tau=3, draws=100, kappa_bs=0.05, kappa_ue=0.08)
    return sc, build_statistics(sc)


@pytest.fixture(scope="module")
def small_mc(small):
    sc, stats = small
    return mc_sinr_terms(stats, random_rbm(stats.N, 1), sc, 20_000)


def test_report_has_every_term_for_every_ue(small, small_mc):
    sc, stats = small
    names = [r.term for r in small_mc.rows]
    assert names == [f"{t}[{k}]" for t in ALL_TERMS for k in range(stats.K)]


def test_scalar_terms_within_sampling_error(scalar):
    sc, stats = scalar
    rep = mc_sinr_terms(stats, RbmPhases.default(1), sc, 20_000)
    for row in rep.rows:
        assert row.z_score < 4, row


def test_small_instance_terms_within_sampling_error(small_mc):
    # 18 rows; 4.5 standard errors keeps the family-wise false-alarm rate below 1e-4
    for row in small_mc.rows:
        assert row.z_score < 4.5, row


@pytest.mark.parametrize("kw", [dict(perfect_csi=True),
                                dict(phase_noise=PhaseNoiseModel("uniform", 0.0)),
                                dict(phase_noise=PhaseNoiseModel("none", 0.0))])
def test_variants_within_sampling_error(kw):
    perfect = kw.pop("perfect_csi", False)
    sc = small_scenario(M=3, N=4, K=2, draws=500, **kw)
    stats = build_statistics(sc)
    rep = mc_sinr_terms(stats, random_rbm(4, 2), sc, 10_000, perfect_csi=perfect)
    for row in rep.rows:
        assert row.z_score < 4.5, row


def test_perfect_csi_direct_gain_is_channel_energy(small):
    sc, stats = small
    rbm = random_rbm(stats.N, 1)
    rep = mc_sinr_terms(stats, rbm, sc, 500, perfect_csi=True)
    for k in range(stats.K):
        assert rep.get("rd", k).closed_form > 0
        assert rep.get("ds", k).closed_form == pytest.approx(
            float(np.trace(effective_covariance(stats, rbm, k)).real), rel=1e-12)


def test_results_do_not_depend_on_chunking(small):
    sc, stats = small
    rbm = random_rbm(stats.N, 1)
    a = mc_sinr_terms(stats, rbm, sc, 700, chunk=2048)
    b = mc_sinr_terms(stats, rbm, sc, 700, chunk=97)
    assert a.csv_rows() == b.csv_rows()


def test_seed_controls_the_stream(small):
    sc, stats = small
    rbm = random_rbm(stats.N, 1)
    a = mc_sinr_terms(stats, rbm, sc, 300)
    assert a.csv_rows() == mc_sinr_terms(stats, rbm, sc, 300).csv_rows()
    assert a.csv_rows() == mc_sinr_terms(stats, rbm, sc, 300, seed=sc.seed).csv_rows()
    assert a.csv_rows() != mc_sinr_terms(stats, rbm, sc, 300, seed=sc.seed + 1).csv_rows()


def test_standard_error_halves_with_four_times_the_trials(small):
    sc, stats = small
    rbm = random_rbm(stats.N, 1)
    a = mc_sinr_terms(stats, rbm, sc, 4_000)
    b = mc_sinr_terms(stats, rbm, sc, 16_000)
    for term in ("ds", "mui", "rn"):
        for k in range(stats.K):
            ratio = b.get(term, k).mc_stderr / a.get(term, k).mc_stderr
            assert 0.5 * 0.7 < ratio < 0.5 * 1.3, (term, k, ratio)


def test_nmse_matches_closed_form(small):
    sc, stats = small
    rep = mc_nmse(stats, random_rbm(stats.N, 1), sc, 20_000)
    assert [r.term for r in rep.rows] == ["nmse[0]", "nmse[1]"]
    for row in rep.rows:
        assert 0 < row.closed_form < 1
        assert row.z_score < 4, row


def test_too_few_trials_rejected(small):
    sc, stats = small
    with pytest.raises(ValueError):
        mc_sinr_terms(stats, RbmPhases.default(stats.N), sc, MIN_TRIALS - 1)
    with pytest.raises(ValueError):
        mc_nmse(stats, RbmPhases.default(stats.N), sc, 10)


def test_csv_output(small, tmp_path):
    sc, stats = small
    rep = mc_sinr_terms(stats, RbmPhases.default(stats.N), sc, MIN_TRIALS)
    lines = rep.to_csv(tmp_path / "mc.csv").read_text().splitlines()
    assert lines[0] == "term,closed_form,mc_mean,mc_stderr,rel_err,trials"
    assert len(lines) == 1 + len(rep.rows)


def test_row_statistics():
    row = McRow("x[0]", 2.0, 2.2, 0.1, 100)
    assert row.rel_err == pytest.approx(0.1)
    assert row.z_score == pytest.approx(2.0)
    assert McRow("x[0]", 0.0, 0.0, 0.0, 100).rel_err == 0.0
    assert McRow("x[0]", 1.0, 1.0, 0.0, 100).z_score == 0.0
    assert McRow("x[0]", 1.0, 2.0, 0.0, 100).z_score == float("inf")
    rep = McReport([row, McRow("y[0]", 1.0, 1.5, 0.1, 100)])
    assert rep.max_rel_err() == pytest.approx(0.5)
    assert rep.max_rel_err(["x"]) == pytest.approx(0.1)
    assert rep.select("y") == [rep.rows[1]]
    with pytest.raises(KeyError):
        rep.get("z", 0)


def test_ideal_scalar_direct_gain_within_three_standard_errors():
    sc = small_scenario(M=1, N=1, K=1, tau=3, draws=100, kappa_bs=0.0, kappa_ue=0.0)
    stats = build_statistics(sc)
    row = mc_sinr_terms(stats, RbmPhases.default(1), sc, 20_000).get("ds", 0)
    assert row.z_score < 3, row


def test_nmse_vanishes_in_the_perfect_training_limit(small):
    sc, stats = small
    s = sc.replace(kappa_bs=0.0, kappa_ue=0.0, sigma2=sc.sigma2 * 1e-12)
    rep = mc_nmse(stats, random_rbm(stats.N, 1), s, 1000)
    for row in rep.rows:
        assert row.closed_form < 1e-9 and row.mc_mean < 1e-9


def test_nmse_floor_at_severe_distortion(desk):
    sc, stats = desk
    s = apply_axis(sc.replace(kappa_bs=0.258 ** 2, kappa_ue=0.258 ** 2), "snr_db", 40, stats)
    for row in mc_nmse(stats, RbmPhases.default(stats.N), s, 20_000).rows:
        assert row.z_score < 3, row


def test_closed_form_inside_99_percent_interval_on_desk_instance(desk):
    """Every UatF term on the desk instance sits inside its 99% interval (z < 2.576)."""
    sc, stats = desk
    rep = mc_sinr_terms(stats, RbmPhases.default(stats.N), sc, 20_000)
    outside = [(r.term, round(r.z_score, 2)) for r in rep.rows
               if r.term.split("[")[0] in ("ds", *SinrBreakdown.TERMS) and r.z_score >= 2.576]
    assert not outside, outside
