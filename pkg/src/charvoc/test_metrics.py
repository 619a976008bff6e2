import numpy as np
import pytest

from src.charvoc.errors import DegenerateDistributionError
from src.charvoc.metrics import calibrate_threshold, compute_metrics, roc_table, unlinkability
from src.charvoc.models import ScoreLabel, ScoreSet


def _brute_force(genuine, impostor, fmr_target=0.001):
    g, imp = np.asarray(genuine), np.asarray(impostor)
    thresholds = [np.inf] + sorted(set(np.concatenate([g, imp]).tolist()), reverse=True)
    fmr = np.array([np.mean(imp >= t) for t in thresholds])
    fnmr = np.array([np.mean(g < t) for t in thresholds])
    tmr = 1.0 - fnmr

    eer = None
    for i in range(1, len(thresholds)):
        d0, d1 = fmr[i - 1] - fnmr[i - 1], fmr[i] - fnmr[i]
        if d1 >= 0:
            if d1 == 0:
                eer, at = fmr[i], thresholds[i]
            else:
                t = -d0 / (d1 - d0)
                eer, at = fmr[i - 1] + t * (fmr[i] - fmr[i - 1]), thresholds[i]
            break

    auc = sum((fmr[i] - fmr[i - 1]) * (tmr[i] + tmr[i - 1]) / 2 for i in range(1, len(thresholds)))
    tmr_at = max(tmr[j] for j in range(len(thresholds)) if fmr[j] <= fmr_target)
    return 100.0 * eer, auc, tmr_at, at


FIXTURE_GENUINE = [0.91, 0.85, 0.80, 0.77, 0.74, 0.70, 0.66, 0.62, 0.55, 0.41]
FIXTURE_IMPOSTOR = [0.72, 0.60, 0.52, 0.48, 0.45, 0.40, 0.38, 0.33, 0.30, 0.21]


def test_fixed_fixture_matches_enumeration():
    m = compute_metrics(ScoreSet(FIXTURE_GENUINE, FIXTURE_IMPOSTOR, ScoreLabel.SAME_KEY))
    eer, auc, tmr_at, at = _brute_force(FIXTURE_GENUINE, FIXTURE_IMPOSTOR)
    assert m.eer == pytest.approx(eer, abs=1e-12)
    assert m.auc == pytest.approx(auc, abs=1e-12)
    assert m.tmr_at_fmr == pytest.approx(tmr_at, abs=1e-12)
    assert m.threshold_at_eer == at
    assert (m.n_genuine, m.n_impostor) == (10, 10)
    # at 0.60 two genuine and two impostor scores are on the wrong side
    assert m.eer == pytest.approx(20.0)
    assert m.threshold_at_eer == 0.60


@pytest.mark.parametrize("seed", range(5))
def test_random_inputs_match_enumeration(seed):
    rng = np.random.default_rng(seed)
    ng, ni = rng.integers(1, 400), rng.integers(1, 600)
    # coarse rounding forces ties across and within the two lists
    g = np.round(rng.beta(5, 2, size=ng), 2)
    imp = np.round(rng.beta(2, 5, size=ni), 2)
    m = compute_metrics(ScoreSet(g, imp, ScoreLabel.STOLEN_KEY))
    eer, auc, tmr_at, at = _brute_force(g, imp)
    assert m.eer == pytest.approx(eer, abs=1e-12)
    assert m.auc == pytest.approx(auc, abs=1e-12)
    assert m.tmr_at_fmr == pytest.approx(tmr_at, abs=1e-12)
    assert m.threshold_at_eer == at


def test_perfect_separation():
    m = compute_metrics(ScoreSet([1.0] * 20, [0.0] * 30, ScoreLabel.SAME_KEY))
    assert m.eer == 0.0
    assert m.auc == 1.0
    assert m.tmr_at_fmr == 1.0


def test_identical_distributions_are_chance():
    rng = np.random.default_rng(1)
    m = compute_metrics(ScoreSet(rng.uniform(size=5000), rng.uniform(size=5000), ScoreLabel.SAME_KEY))
    assert m.eer == pytest.approx(50.0, abs=2.0)
    assert m.auc == pytest.approx(0.5, abs=0.02)


def test_eer_invariant_under_monotone_transform():
    rng = np.random.default_rng(2)
    g, imp = rng.beta(4, 2, size=300), rng.beta(2, 4, size=700)
    base = compute_metrics(ScoreSet(g, imp, ScoreLabel.SAME_KEY))
    for f in (np.sqrt, lambda s: s ** 3, lambda s: 0.2 + 0.5 * s):
        m = compute_metrics(ScoreSet(f(g), f(imp), ScoreLabel.SAME_KEY))
        assert m.eer == pytest.approx(base.eer, abs=1e-9)
        assert m.auc == pytest.approx(base.auc, abs=1e-12)


def test_metrics_need_both_lists():
    with pytest.raises(ValueError):
        compute_metrics(ScoreSet([], [0.1], ScoreLabel.SAME_KEY))
    with pytest.raises(ValueError):
        ScoreSet([1.2], [0.1], ScoreLabel.SAME_KEY)


def test_calibrated_threshold_and_roc_table():
    s = ScoreSet(FIXTURE_GENUINE, FIXTURE_IMPOSTOR, ScoreLabel.SAME_KEY)
    assert calibrate_threshold(s) == compute_metrics(s).threshold_at_eer
    df = roc_table(s)
    assert list(df.columns) == ["threshold", "fmr", "fnmr", "tmr"]
    assert len(df) == 1 + len(set(FIXTURE_GENUINE + FIXTURE_IMPOSTOR))
    assert df["fmr"].is_monotonic_increasing


def test_unlinkability_of_sample_against_itself_is_zero():
    x = np.random.default_rng(3).normal(0.4, 0.05, size=2000).clip(0, 1)
    u = unlinkability(x, x)
    assert u.d_sys == 0.0
    assert np.all(u.local == 0.0)


def test_unlinkability_of_disjoint_supports_is_one():
    rng = np.random.default_rng(4)
    u = unlinkability(rng.uniform(0.9, 1.0, size=5000), rng.uniform(0.0, 0.1, size=5000), bins=100)
    assert u.d_sys == pytest.approx(1.0, abs=0.02)
    assert len(u.to_frame()) == 100


def test_unlinkability_is_bounded():
    rng = np.random.default_rng(5)
    for _ in range(10):
        u = unlinkability(rng.beta(2, 3, size=500), rng.beta(3, 2, size=500), bins=int(rng.integers(10, 200)))
        assert 0.0 <= u.d_sys <= 1.0
        assert np.all((u.local >= 0.0) & (u.local <= 1.0))


def test_unlinkability_errors():
    with pytest.raises(ValueError):
        unlinkability([0.1, 0.2], [0.3], bins=5)
    with pytest.raises(ValueError):
        unlinkability([], [0.3])
    with pytest.raises(DegenerateDistributionError):
        unlinkability([0.5, 0.5], [0.5])
