import numpy as np
import pytest

from blcb.balancing import (
    BalanceConfig,
    Sampler,
    balance_level1,
    balance_level2,
    balance_none,
    classify_level1,
    classify_level2,
    round_half_up,
    stratum_counts,
)
from blcb.errors import BalanceError, ConfigError, PreconditionError
from blcb.patching import STRATA, STRATUM, extract_dense


def _set(means, gt_flags, thin=None, thick=None):
    """A one-row image whose patch means are set directly."""
    n = len(means)
    ps = extract_dense(np.zeros((1, n)), np.array([gt_flags], bool), patch=1)
    ps.means[:] = means
    return ps


def _tally(ps):
    return {name: int(np.sum(ps.strata == code)) for name, code in STRATUM.items()}


def test_sampler_is_uniform_and_deterministic():
    a = Sampler([3, 1]).sample(100, 10)
    assert np.array_equal(a, Sampler([3, 1]).sample(100, 10))
    assert len(set(a.tolist())) == 10 and a.min() >= 0 and a.max() < 100
    assert sorted(Sampler(5).permutation(50).tolist()) == list(range(50))
    with pytest.raises(ValueError):
        Sampler(0).sample(3, 4)


def test_bounded_ints_are_unbiased():
    s = Sampler(11)
    draws = np.array([s.below(3) for _ in range(30000)])
    counts = np.bincount(draws, minlength=3)
    sigma = np.sqrt(30000 * (1 / 3) * (2 / 3))
    assert np.all(np.abs(counts - 10000) < 5 * sigma)


def test_round_half_up():
    assert [round_half_up(x) for x in (0.5, 1.5, 2.5, 2.49)] == [1, 2, 3, 2]


def test_classify_level1_branches():
    ps = _set([0.9, 0.5, 0.02], [True, False, False])
    s = classify_level1(ps, np.array([[True, False, False]]), 0.1)
    assert s.alpha.cols.tolist() == [0]
    assert s.beta.cols.tolist() == [1]
    assert s.gamma_full.cols.tolist() == [2]
    assert len(s.c_alpha) == 0 and len(s.n_alpha) == 0
    assert np.all(s.beta.strata == STRATUM["partial_bg"])
    assert np.all(s.gamma_full.strata == STRATUM["full_bg"])


def test_level1_default_ratio():
    n = 400
    gt = np.zeros(n, bool)
    gt[:100] = True
    means = np.where(np.arange(n) < 250, 0.5, 0.01)
    ps = _set(means, gt)
    s = classify_level1(ps, gt[None, :], 0.05)
    out = balance_level1(s, BalanceConfig(seed=1))
    t = _tally(out)
    assert (t["vessel"], t["partial_bg"], t["full_bg"]) == (100, 90, 10)
    assert len(out) == 200 and len(set(out.cols.tolist())) == 200
    again = balance_level1(classify_level1(ps, gt[None, :], 0.05), BalanceConfig(seed=1))
    assert np.array_equal(out.cols, again.cols)


def test_rho_one_uses_partial_only():
    gt = np.arange(60) < 10
    ps = _set(np.where(np.arange(60) < 40, 0.5, 0.0), gt)
    out = balance_level1(classify_level1(ps, gt[None], 0.05), BalanceConfig(rho=1.0))
    assert _tally(out)["full_bg"] == 0 and _tally(out)["partial_bg"] == 10


def test_short_stratum_is_clamped_with_warning():
    gt = np.arange(30) < 10
    ps = _set(np.full(30, 0.5), gt)  # no full background at all
    s = classify_level1(ps, gt[None], 0.05)
    out = balance_level1(s, BalanceConfig())
    assert _tally(out)["full_bg"] == 0
    assert any("full_bg" in w for w in s.warnings)


def test_empty_alpha_errors():
    ps = _set(np.full(5, 0.5), np.zeros(5, bool))
    with pytest.raises(BalanceError, match="no vessel patches"):
        balance_level1(classify_level1(ps, np.zeros((1, 5), bool), 0.05), BalanceConfig())


def _level2_fixture(n_thin, n_thick, n_bg=1000):
    n = n_thin + n_thick + n_bg
    thin = np.zeros(n, bool)
    thick = np.zeros(n, bool)
    thin[:n_thin] = True
    thick[n_thin:n_thin + n_thick] = True
    means = np.where(np.arange(n) < n - 100, 0.5, 0.0)
    ps = _set(means, thin | thick)
    return ps, (thin | thick)[None], thin[None], thick[None]


def test_classify_level2_branches():
    ps, gt, thin, thick = _level2_fixture(2, 3, 5)
    s = classify_level2(ps, gt, thin, thick, 0.05)
    assert s.c_alpha.cols.tolist() == [0, 1]
    assert s.n_alpha.cols.tolist() == [2, 3, 4]
    assert len(s.beta) + len(s.gamma_full) == 5
    with pytest.raises(PreconditionError):
        classify_level2(ps, gt, thin, thin, 0.05)


def test_level2_counts_by_independent_tally():
    ps, gt, thin, thick = _level2_fixture(50, 500)
    out = balance_level2(classify_level2(ps, gt, thin, thick, 0.05), BalanceConfig(seed=4))
    t = _tally(out)
    assert (t["thin_vessel"], t["thick_vessel"]) == (50, 50)
    assert t["partial_bg"] + t["full_bg"] == 100 and len(out) == 200
    # labels agree with the ground truth at every selected pixel
    assert np.array_equal(out.labels == 1, gt[0, out.cols])


def test_level2_clamps_thick():
    ps, gt, thin, thick = _level2_fixture(50, 10)
    s = classify_level2(ps, gt, thin, thick, 0.05)
    out = balance_level2(s, BalanceConfig())
    assert _tally(out)["thick_vessel"] == 10
    assert any("thick_vessel" in w for w in s.warnings)


def test_level2_literal_rule_and_errors():
    ps, gt, thin, thick = _level2_fixture(20, 100)
    s = classify_level2(ps, gt, thin, thick, 0.05)
    out = balance_level2(s, BalanceConfig(thick_rule="literal", rho=0.9))
    assert _tally(out)["thick_vessel"] == 90
    ps, gt, thin, thick = _level2_fixture(0, 10)
    with pytest.raises(BalanceError, match="no thin-vessel patches"):
        balance_level2(classify_level2(ps, gt, thin, thick, 0.05), BalanceConfig())


def test_max_patches_cap_keeps_parity():
    gt = np.arange(500) < 200
    ps = _set(np.where(np.arange(500) < 450, 0.5, 0.0), gt)
    out = balance_level1(classify_level1(ps, gt[None], 0.05), BalanceConfig(max_patches=100))
    c = stratum_counts(out)
    assert c["vessel_total"] == c["nonvessel_total"] == 50
    assert (c["partial_bg"], c["full_bg"]) == (45, 5)


def test_balance_none_passes_everything():
    gt = np.arange(40) < 5
    ps = _set(np.full(40, 0.5), gt)
    out = balance_none(ps, gt[None], BalanceConfig())
    assert sorted(out.cols.tolist()) == list(range(40))


def test_config_validation():
    for bad in (dict(rho=0), dict(rho=1.5), dict(v=-0.1), dict(r=0), dict(thick_rule="x"),
                dict(max_patches=-1)):
        with pytest.raises(ConfigError):
            BalanceConfig(**bad).validate()


def test_selection_frequency_is_uniform():
    """Each partial-background record is chosen ~ y/|beta| of the time (5 sigma)."""
    gt = np.arange(70) < 20
    ps = _set(np.where(np.arange(70) < 65, 0.5, 0.0), gt)
    s = classify_level1(ps, gt[None], 0.05)
    y, nb, runs = 18, 45, 2000
    hits = np.zeros(70)
    for seed in range(runs):
        out = balance_level1(s, BalanceConfig(seed=seed), warnings=[])
        sel = out.cols[out.strata == STRATUM["partial_bg"]]
        hits[sel] += 1
    p = y / nb
    sigma = np.sqrt(runs * p * (1 - p))
    assert np.all(np.abs(hits[20:65] - runs * p) < 5 * sigma)


def test_strata_names_are_stable():
    assert STRATA == ("unassigned", "vessel", "thin_vessel", "thick_vessel", "partial_bg",
                      "full_bg")
