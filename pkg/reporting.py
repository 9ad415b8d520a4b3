"""Plot-ready tables: creation rate by feedback level, sensitivity spreads, alpha trade-off."""
from typing import Sequence

import numpy as np
import pandas as pd
from scipy import stats

from datagen import TrainingExample
from ecosystem import Population
from errors import DataError
from sensitivity import Snapshot

Z_95 = float(stats.norm.ppf(0.975))

BOX_COLUMNS = ["segmentation", "cohort", "statistic", "n", "min", "q1", "median", "q3", "max", "mean"]


def wald_interval(successes: int, n: int, z: float = Z_95):
    """Normal-approximation interval for a proportion, clipped to [0, 1]."""
    if n <= 0:
        raise DataError("Wald interval needs n > 0")
    p = successes / n
    half = z * np.sqrt(p * (1 - p) / n)
    return p, max(0.0, p - half), min(1.0, p + half)


def creation_curve(examples: Sequence[TrainingExample]) -> pd.DataFrame:
    """Observed creation rate with 95% Wald bounds per activity cohort and feedback level."""
    if not examples:
        raise DataError("No examples to build the creation curve from")
    frame = pd.DataFrame({
        "cohort": [e.features.activity_level for e in examples],
        "feedback_level": [e.features.a_bucket for e in examples],
        "label": [e.label for e in examples],
    })
    groups = [("All", frame), *((cohort, part) for cohort, part in frame.groupby("cohort", sort=True))]
    rows = []
    for cohort, part in groups:
        for level, cell in part.groupby("feedback_level", sort=True):
            mean_p, ci_lo, ci_hi = wald_interval(int(cell["label"].sum()), len(cell))
            rows.append({"cohort": cohort, "feedback_level": int(level), "n": len(cell),
                         "mean_p": mean_p, "ci_lo": ci_lo, "ci_hi": ci_hi})
    return pd.DataFrame(rows, columns=["cohort", "feedback_level", "n", "mean_p", "ci_lo", "ci_hi"])


def _box_row(segmentation: str, cohort: str, statistic: str, values: np.ndarray) -> dict:
    q1, median, q3 = np.quantile(values, [0.25, 0.5, 0.75])
    return {"segmentation": segmentation, "cohort": cohort, "statistic": statistic, "n": int(values.size),
            "min": float(values.min()), "q1": float(q1), "median": float(median), "q3": float(q3),
            "max": float(values.max()), "mean": float(values.mean())}


def sensitivity_boxplots(snapshot: Snapshot, population: Population) -> pd.DataFrame:
    """Five-number summaries of first-level delta and tau per activity and contribution cohort."""
    profiles = {profile.user_id: profile for profile, _ in population}
    frame = pd.DataFrame([
        {"activity": profiles[u].activity_level.value, "contribution": profiles[u].contribution_level.value,
         "delta_1": curve.deltas[0], "tau": curve.tau}
        for u, curve in sorted(snapshot.curves.items()) if u in profiles
    ])
    if frame.empty:
        raise DataError("Snapshot and population share no users")
    rows = []
    for segmentation in ("activity", "contribution"):
        for cohort, part in frame.groupby(segmentation, sort=True):
            for statistic in ("delta_1", "tau"):
                rows.append(_box_row(segmentation, cohort, statistic, part[statistic].to_numpy()))
    return pd.DataFrame(rows, columns=BOX_COLUMNS)


def alpha_tradeoff(sweep: pd.DataFrame) -> pd.DataFrame:
    """Percent change of each sweep metric relative to the alpha = 1 row."""
    baseline = sweep[sweep["alpha"] == 1.0]
    if baseline.empty:
        raise DataError("Alpha sweep has no alpha = 1 baseline row")
    reference = baseline.iloc[0]
    table = sweep[["alpha", "policy"]].copy()
    for column in ("consumer_ctr", "viral_actions", "feedback_gini", "top_quartile_feedback_share"):
        table[column] = sweep[column]
        table[f"{column}_change_pct"] = 100.0 * (sweep[column] - reference[column]) / reference[column]
    return table.sort_values("alpha", ascending=False).reset_index(drop=True)
