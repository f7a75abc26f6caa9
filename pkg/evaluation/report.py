import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from evaluation.metrics import beat_alignment, gaze_pattern, mae, mee, sim_with_gt, style_cosine_error, vel_error

logger = logging.getLogger(__name__)

METRIC_KEYS = ["mae", "vel", "mee", "ce", "bas", "saccades", "fixation", "compScore", "simScore"]
GROUPS = ["all", "gaze", "head"]
GROUP_KEYS = ["mae", "vel", "mee"]

TABLE_COLUMNS = {
    "mae": "MAE",
    "vel": "Vel",
    "mee": "MEE",
    "ce": "CE",
    "bas": "BAS",
    "saccades": "Saccades %",
    "fixation": "Fixation %",
    "compScore": "CompScore",
    "simScore": "SimScore",
}


@dataclass
class EvalReport:
    session: str
    mae: float
    vel: float
    mee: float
    ce: float | None
    bas: float
    saccades: float
    fixation: float
    compScore: float
    simScore: float
    groups: dict = field(default_factory=dict)
    n_frames: int = 0

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in METRIC_KEYS}
        d.update({g: dict(self.groups[g]) for g in GROUPS})
        d["session"] = self.session
        d["n_frames"] = self.n_frames
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        return cls(
            session=d["session"],
            groups={g: dict(d[g]) for g in GROUPS},
            n_frames=int(d.get("n_frames", 0)),
            **{k: d[k] for k in METRIC_KEYS},
        )


def evaluate_sequence(session: str, pred: np.ndarray, gt: np.ndarray, feat_frames: np.ndarray,
                      encoder=None, normalize_head: bool = False) -> EvalReport:
    """Compare a generated T×7 sequence with its frame-aligned ground truth."""
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)

    groups = {g: {"mae": mae(pred, gt, g), "vel": vel_error(pred, gt, g), "mee": mee(pred, gt, g)} for g in GROUPS}
    pat_pred = gaze_pattern(pred, normalize_head)
    pat_gt = gaze_pattern(gt, normalize_head)

    ce = None
    if encoder is not None and len(pred) >= encoder.window:
        ce = style_cosine_error(pred, gt, encoder)

    return EvalReport(
        session=session,
        mae=groups["all"]["mae"],
        vel=groups["all"]["vel"],
        mee=groups["all"]["mee"],
        ce=ce,
        bas=beat_alignment(pred, feat_frames),
        saccades=pat_pred["saccades"],
        fixation=pat_pred["fixation"],
        compScore=pat_pred["compScore"],
        simScore=sim_with_gt(pat_gt["fixation"], pat_pred["fixation"], pat_gt["compScore"], pat_pred["compScore"]),
        groups=groups,
        n_frames=len(pred),
    )


def ground_truth_row(session: str, gt: np.ndarray, feat_frames: np.ndarray, normalize_head: bool = False) -> EvalReport:
    """Reference row: ground truth compared with itself."""
    return evaluate_sequence(session, gt, gt, feat_frames, encoder=None, normalize_head=normalize_head)


def aggregate(reports: list[EvalReport], name: str = "aggregate") -> EvalReport:
    """Unweighted mean over sequences; ce averages only the sequences that have one."""
    if not reports:
        raise ValueError("nothing to aggregate")

    def mean_of(values):
        values = [v for v in values if v is not None]
        return float(np.mean(values)) if values else None

    metrics = {k: mean_of([getattr(r, k) for r in reports]) for k in METRIC_KEYS}
    groups = {g: {k: mean_of([r.groups[g][k] for r in reports]) for k in GROUP_KEYS} for g in GROUPS}
    return EvalReport(session=name, groups=groups, n_frames=int(sum(r.n_frames for r in reports)), **metrics)


# ---------------------------
# Output
# ---------------------------
def report_table(rows: dict) -> pd.DataFrame:
    """rows: label -> EvalReport. Percent columns are scaled by 100."""
    records = []
    for label, r in rows.items():
        rec = {"Model": label}
        for k, col in TABLE_COLUMNS.items():
            v = getattr(r, k)
            if v is not None and k in ("saccades", "fixation"):
                v = 100.0 * v
            rec[col] = v
        records.append(rec)
    return pd.DataFrame(records).set_index("Model")


def format_table(rows: dict) -> str:
    return report_table(rows).to_string(float_format=lambda v: f"{v:.4f}", na_rep="-")


def write_report(out_dir, sequences: list[EvalReport], agg: EvalReport, warnings: list[str] | None = None,
                 reference: EvalReport | None = None) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    payload = {
        "aggregate": agg.to_dict(),
        "sequences": [r.to_dict() for r in sequences],
        "warnings": list(warnings or []),
    }
    if reference is not None:
        payload["ground_truth"] = reference.to_dict()

    path = out_dir / "report.json"
    with open(path, "w", encoding="utf-8") as f:
        json.dump(payload, f, indent=2, sort_keys=True)

    rows = {"GT": reference} if reference is not None else {}
    rows.update({r.session: r for r in sequences})
    rows["aggregate"] = agg
    (out_dir / "report.txt").write_text(format_table(rows) + "\n", encoding="utf-8")

    logger.info("evaluation report written to %s", path)
    return path


def read_report(path) -> dict:
    with open(path, "r", encoding="utf-8") as f:
        return json.load(f)
