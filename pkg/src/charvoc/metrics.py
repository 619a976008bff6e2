from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence, Tuple

import numpy as np
import pandas as pd
from sklearn.metrics import auc, roc_curve

from .errors import DegenerateDistributionError
from .models import MetricsReport, ScoreSet


def _roc(scores: ScoreSet) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    (fmr, tmr, thresholds) for every distinct score, thresholds descending and
    starting at +inf. FMR(t) = share of impostor >= t, TMR(t) = share of
    genuine >= t.
    """
    if scores.genuine.size == 0 or scores.impostor.size == 0:
        raise ValueError("need non-empty genuine and impostor scores")
    y = np.concatenate([np.ones(scores.genuine.size), np.zeros(scores.impostor.size)])
    s = np.concatenate([scores.genuine, scores.impostor])
    fmr, tmr, thresholds = roc_curve(y, s, drop_intermediate=False)
    return fmr, tmr, thresholds


def _eer(fmr: np.ndarray, fnmr: np.ndarray) -> Tuple[float, int]:
    """EER by linear interpolation at the FMR/FNMR crossing; also the crossing index."""
    d = fmr - fnmr
    i = int(np.argmax(d >= 0))
    if d[i] == 0 or i == 0:
        return float(fmr[i]), i
    t = -d[i - 1] / (d[i] - d[i - 1])
    return float(fmr[i - 1] + t * (fmr[i] - fmr[i - 1])), i


def compute_metrics(scores: ScoreSet, fmr_target: float = 0.001) -> MetricsReport:
    fmr, tmr, thresholds = _roc(scores)
    eer, i = _eer(fmr, 1.0 - tmr)
    return MetricsReport(
        eer=100.0 * eer,
        auc=float(auc(fmr, tmr)),
        tmr_at_fmr=float(tmr[fmr <= fmr_target].max()),
        threshold_at_eer=float(thresholds[i]),
        fmr_target=fmr_target,
        n_genuine=int(scores.genuine.size),
        n_impostor=int(scores.impostor.size),
    )


def calibrate_threshold(scores: ScoreSet) -> float:
    """Deployment threshold at the EER operating point."""
    return compute_metrics(scores).threshold_at_eer


def roc_table(scores: ScoreSet) -> pd.DataFrame:
    fmr, tmr, thresholds = _roc(scores)
    return pd.DataFrame({"threshold": thresholds, "fmr": fmr, "fnmr": 1.0 - tmr, "tmr": tmr})


@dataclass(frozen=True, eq=False)
class Unlinkability:
    edges: np.ndarray
    local: np.ndarray  # D(s) per bin
    d_sys: float

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.edges[:-1] + self.edges[1:])

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"score": self.centers, "d_local": self.local})


def unlinkability(
    mated: Sequence[float],
    non_mated: Sequence[float],
    bins: int = 100,
    omega: float = 1.0,
) -> Unlinkability:
    """
    Local linkability D(s) and global D_sys from histogram density estimates.

    Both samples share equal-width bin edges over their union support. Counts
    get add-one smoothing before the likelihood ratio is formed; D_sys weights
    D(s) by the unsmoothed mated histogram.
    """
    m = np.asarray(mated, dtype=np.float64)
    nm = np.asarray(non_mated, dtype=np.float64)
    if m.size == 0 or nm.size == 0:
        raise ValueError("need non-empty mated and non-mated scores")
    if bins < 10:
        raise ValueError(f"bins must be >= 10, got {bins}")

    lo = float(min(m.min(), nm.min()))
    hi = float(max(m.max(), nm.max()))
    if not hi > lo:
        raise DegenerateDistributionError("all scores identical; cannot form a histogram")

    edges = np.linspace(lo, hi, bins + 1)
    cm, _ = np.histogram(m, bins=edges)
    cn, _ = np.histogram(nm, bins=edges)

    pm = (cm + 1.0) / (cm.sum() + bins)
    pn = (cn + 1.0) / (cn.sum() + bins)
    lr = omega * pm / pn
    local = np.maximum(0.0, 2.0 * lr / (1.0 + lr) - 1.0)

    d_sys = float(np.sum(local * cm / cm.sum()))
    return Unlinkability(edges=edges, local=local, d_sys=d_sys)
