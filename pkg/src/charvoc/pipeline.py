from __future__ import annotations

import logging
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Union

import pandas as pd

from .config import EvalConfig
from .evaluation import COSINE, SchemeSelector, parse_scheme, score_pairs
from .metrics import compute_metrics, roc_table, unlinkability
from .models import KeyPolicy, SchemeName, SpeakerDataset

logger = logging.getLogger(__name__)

ALL_SCHEMES: List[SchemeName] = [SchemeName.CHARVOC, SchemeName.ROE, SchemeName.IOM, SchemeName.WTA]


def expand_schemes(selector: Union[str, Sequence[SchemeSelector]]) -> List[Union[SchemeName, str]]:
    """`all` -> the four protected schemes; otherwise a comma list or a sequence."""
    if isinstance(selector, str):
        items = [s for s in selector.split(",") if s.strip()]
    else:
        items = list(selector)
    out: List[Union[SchemeName, str]] = []
    for item in items:
        if isinstance(item, str) and item.strip().lower() == "all":
            out.extend(s for s in ALL_SCHEMES if s not in out)
            continue
        s = parse_scheme(item)
        if s not in out:
            out.append(s)
    if not out:
        raise ValueError("no scheme selected")
    return out


def _name(s: Union[SchemeName, str]) -> str:
    return s.value if isinstance(s, SchemeName) else str(s)


def run_evaluation(
    ds: SpeakerDataset,
    schemes: Union[str, Sequence[SchemeSelector]] = "all",
    key_policy: Union[KeyPolicy, str] = KeyPolicy.PER_USER_KEY,
    cfg: Optional[EvalConfig] = None,
    out_dir: Optional[Union[str, Path]] = None,
    include_reference: bool = True,
    with_unlinkability: bool = True,
) -> Dict[str, Any]:
    """
    Score every requested scheme under one key policy and collect metrics.

    Unlinkability is measured separately for each protected scheme on its
    fresh-key-per-template scores (mated vs non-mated). The unprotected cosine
    reference, when included, is scored on the same pairs. With `out_dir`,
    report.txt, summary.csv and the ROC / D(s) curves are written there.
    """
    cfg = cfg or EvalConfig(dim=ds.dim)
    policy = KeyPolicy(key_policy)
    selected = expand_schemes(schemes)
    if include_reference and COSINE not in selected:
        selected.append(COSINE)

    report: Dict[str, Any] = {
        "dataset": ds.provenance,
        "speakers": len(ds.speakers),
        "embeddings": sum(len(v) for v in ds.embeddings.values()),
        "dim": ds.dim,
        "key_policy": policy.value,
        "params": cfg.scheme_params(ds.dim).to_text(),
        "metrics": {},
        "unlinkability": {},
    }
    curves: Dict[str, pd.DataFrame] = {}
    dsys_curves: Dict[str, pd.DataFrame] = {}

    for scheme in selected:
        name = _name(scheme)
        logger.info("evaluating %s under %s", name, policy.value)
        scores = score_pairs(ds, scheme, policy, cfg=cfg)
        report["metrics"][name] = compute_metrics(scores, cfg.fmr_target)
        curves[name] = roc_table(scores)

        if with_unlinkability and scheme != COSINE:
            fresh = score_pairs(ds, scheme, KeyPolicy.FRESH_KEY, cfg=cfg)
            u = unlinkability(fresh.genuine, fresh.impostor, cfg.unlinkability_bins, cfg.omega)
            report["unlinkability"][name] = u.d_sys
            dsys_curves[name] = u.to_frame()

    if out_dir is not None:
        write_outputs(report, curves, dsys_curves, Path(out_dir))
    return report


def summary_frame(report: Dict[str, Any]) -> pd.DataFrame:
    rows = []
    for name, m in report["metrics"].items():
        rows.append({
            "scheme": name,
            "key_policy": report["key_policy"],
            "eer_pct": m.eer,
            "auc": m.auc,
            "tmr_at_fmr": m.tmr_at_fmr,
            "threshold_at_eer": m.threshold_at_eer,
            "n_genuine": m.n_genuine,
            "n_impostor": m.n_impostor,
            "d_sys": report["unlinkability"].get(name),
        })
    return pd.DataFrame(rows)


def format_report(report: Dict[str, Any]) -> str:
    """Plain-text report; one metrics block per scheme, stable across runs."""
    lines = [
        "===== CHARVOC EVALUATION =====",
        f"dataset: {report['dataset']}",
        f"speakers={report['speakers']} embeddings={report['embeddings']} dim={report['dim']}",
        f"key_policy={report['key_policy']} params={report['params']}",
    ]
    for name, m in report["metrics"].items():
        lines += [
            "",
            f"[{name}]",
            f"  eer_pct={m.eer:.4f}",
            f"  auc={m.auc:.6f}",
            f"  tmr_at_fmr_{m.fmr_target:g}={m.tmr_at_fmr:.6f}",
            f"  threshold_at_eer={m.threshold_at_eer:.6f}",
            f"  pairs genuine={m.n_genuine} impostor={m.n_impostor}",
        ]
        if name in report["unlinkability"]:
            lines.append(f"  d_sys={report['unlinkability'][name]:.6f}")
    return "\n".join(lines) + "\n"


def write_outputs(
    report: Dict[str, Any],
    curves: Dict[str, pd.DataFrame],
    dsys_curves: Dict[str, pd.DataFrame],
    out_dir: Path,
) -> List[Path]:
    out_dir.mkdir(parents=True, exist_ok=True)
    policy = report["key_policy"]
    written = []

    p = out_dir / "report.txt"
    p.write_text(format_report(report), encoding="utf-8")
    written.append(p)

    p = out_dir / "summary.csv"
    summary_frame(report).to_csv(p, index=False, float_format="%.10g")
    written.append(p)

    for name, df in curves.items():
        p = out_dir / f"roc_{name.lower()}_{policy}.csv"
        df.to_csv(p, index=False, float_format="%.10g")
        written.append(p)
    for name, df in dsys_curves.items():
        p = out_dir / f"dsys_{name.lower()}.csv"
        df.to_csv(p, index=False, float_format="%.10g")
        written.append(p)

    logger.info("wrote %d report files to %s", len(written), out_dir)
    return written
