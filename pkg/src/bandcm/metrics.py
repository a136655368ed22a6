"""Detection metrics for spoofing countermeasures.

Pooled EER is computed on the ROC convex hull (PAV / isotonic fit over the
sorted trial labels), the minimum normalized t-DCF by an exhaustive sweep
over decision thresholds, and score-distribution separation by the
Bhattacharyya distance between per-class Gaussian summaries.

This module also owns the plain-text score file format shared by the rest
of the package: one trial per line, ``utterance_id attack_id key score``,
where key is ``bonafide`` or ``spoof`` and attack_id is ``-`` for bona
fide trials.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, DataError

BONAFIDE = "bonafide"
SPOOF = "spoof"
NO_ATTACK = "-"


@dataclass(frozen=True)
class LabeledScores:
    """Scalar detection scores split by ground truth (high = bona fide)."""

    bona: np.ndarray
    spoof: np.ndarray

    def __post_init__(self):
        bona = np.asarray(self.bona, dtype=float)
        spoof = np.asarray(self.spoof, dtype=float)
        if bona.size == 0 or spoof.size == 0:
            raise DataError("both bona fide and spoof scores are required")
        if not (np.all(np.isfinite(bona)) and np.all(np.isfinite(spoof))):
            raise DataError("scores must be finite")
        object.__setattr__(self, "bona", bona)
        object.__setattr__(self, "spoof", spoof)


@dataclass(frozen=True)
class TdcfCosts:
    """Precomputed t-DCF cost weights for CM miss (c_miss) and CM false alarm (c_fa)."""

    c_miss: float = 1.0
    c_fa: float = 10.0

    def __post_init__(self):
        if not (self.c_miss > 0 and self.c_fa > 0):
            raise ConfigurationError("t-DCF cost weights must be positive")


def pav(y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Pool-adjacent-violators fit of a non-decreasing sequence.

    Returns (fitted values, block widths). The fit minimizes squared error
    among non-decreasing sequences; equal-mean runs are merged into blocks.
    """
    y = np.asarray(y, dtype=float)
    # each block: [sum, count]
    sums = []
    counts = []
    for value in y:
        sums.append(float(value))
        counts.append(1)
        while len(sums) > 1 and sums[-2] * counts[-1] >= sums[-1] * counts[-2]:
            s, c = sums.pop(), counts.pop()
            sums[-1] += s
            counts[-1] += c
    widths = np.array(counts, dtype=int)
    fitted = np.repeat(np.array(sums) / widths, widths)
    return fitted, widths


def rocch(scores: LabeledScores) -> tuple[np.ndarray, np.ndarray]:
    """Vertices (p_miss, p_fa) of the ROC convex hull.

    Trials are sorted by score (stable, so ties keep their original
    bona-before-spoof order) and the ideal 0/1 posterior is isotonically
    smoothed; block boundaries of the PAV fit are exactly the hull vertices.
    """
    nb, ns = len(scores.bona), len(scores.spoof)
    pooled = np.concatenate([scores.bona, scores.spoof])
    ideal = np.concatenate([np.ones(nb), np.zeros(ns)])
    order = np.argsort(pooled, kind="stable")
    ideal = ideal[order]

    _, widths = pav(ideal)
    n = nb + ns
    boundaries = np.concatenate([[0], np.cumsum(widths)])
    p_miss = np.empty(len(boundaries))
    p_fa = np.empty(len(boundaries))
    cum_targets = np.concatenate([[0.0], np.cumsum(ideal)])
    for i, left in enumerate(boundaries):
        missed = cum_targets[left]
        false_accepts = (n - left) - (cum_targets[-1] - missed)
        p_miss[i] = missed / nb
        p_fa[i] = false_accepts / ns
    return p_miss, p_fa


def eer(scores: LabeledScores) -> float:
    """Equal error rate at the crossing of the ROC convex hull with p_miss = p_fa.

    Interior hull segments always have both coordinates changing; for each
    one, the supporting line a*p_fa + b*p_miss = 1 meets the diagonal at
    1/(a+b). Axis-aligned segments occur only along the plot borders, where
    the crossing (if any) lies at a vertex shared with an interior segment,
    so they contribute nothing.
    """
    p_miss, p_fa = rocch(scores)
    best = 0.0
    for i in range(len(p_miss) - 1):
        points = np.array([[p_fa[i], p_miss[i]], [p_fa[i + 1], p_miss[i + 1]]])
        if np.min(np.abs(points[0] - points[1])) == 0.0:
            continue
        try:
            coeff = np.linalg.solve(points, np.ones(2))
        except np.linalg.LinAlgError:
            continue
        total = coeff.sum()
        if total > 0:
            best = max(best, 1.0 / total)
    return best


def det_curve(scores: LabeledScores) -> tuple[np.ndarray, np.ndarray]:
    """Empirical (p_fa, p_miss) staircase over all distinct thresholds."""
    thresholds = _threshold_sweep(scores)
    bona = np.sort(scores.bona)
    spoof = np.sort(scores.spoof)
    p_miss = np.searchsorted(bona, thresholds, side="left") / bona.size
    p_fa = (spoof.size - np.searchsorted(spoof, thresholds, side="left")) / spoof.size
    return p_fa, p_miss


def _threshold_sweep(scores: LabeledScores) -> np.ndarray:
    """All score midpoints plus -inf/+inf sentinels."""
    pooled = np.unique(np.concatenate([scores.bona, scores.spoof]))
    mids = (pooled[:-1] + pooled[1:]) / 2.0
    return np.concatenate([[-np.inf], mids, [np.inf]])


def min_tdcf(scores: LabeledScores, costs: TdcfCosts = TdcfCosts()) -> float:
    """Minimum normalized tandem detection cost.

    Sweeps the decision threshold over all score midpoints plus the two
    degenerate accept-all / reject-all operating points and returns

        min_s [c_miss * P_miss(s) + c_fa * P_fa(s)] / min(c_miss, c_fa)

    which is always <= 1 because one of the degenerate thresholds attains
    the default cost.
    """
    thresholds = _threshold_sweep(scores)
    bona = np.sort(scores.bona)
    spoof = np.sort(scores.spoof)
    p_miss = np.searchsorted(bona, thresholds, side="left") / bona.size
    p_fa = (spoof.size - np.searchsorted(spoof, thresholds, side="left")) / spoof.size
    dcf = costs.c_miss * p_miss + costs.c_fa * p_fa
    return float(dcf.min() / min(costs.c_miss, costs.c_fa))


def bhattacharyya(mu_b: float, sigma_b: float, mu_s: float, sigma_s: float) -> float:
    """Bhattacharyya distance between two univariate Gaussians."""
    if sigma_b <= 0 or sigma_s <= 0:
        raise DataError("standard deviations must be positive")
    vb, vs = sigma_b**2, sigma_s**2
    spread = 0.25 * np.log(0.25 * (vb / vs + vs / vb + 2.0))
    shift = 0.25 * (mu_b - mu_s) ** 2 / (vb + vs)
    return float(spread + shift)


def fit_score_gaussians(scores: LabeledScores) -> tuple[float, float, float, float]:
    """Per-class sample mean and unbiased standard deviation (mu_b, sigma_b, mu_s, sigma_s)."""
    if scores.bona.size < 2 or scores.spoof.size < 2:
        raise DataError("need at least two scores per class to fit Gaussians")
    mu_b = float(np.mean(scores.bona))
    mu_s = float(np.mean(scores.spoof))
    sigma_b = float(np.std(scores.bona, ddof=1))
    sigma_s = float(np.std(scores.spoof, ddof=1))
    if sigma_b == 0 or sigma_s == 0:
        raise DataError("degenerate class: constant scores have zero standard deviation")
    return mu_b, sigma_b, mu_s, sigma_s


# ---------------------------------------------------------------------------
# Score files
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ScoreRow:
    utterance_id: str
    attack_id: str
    key: str
    score: float


def write_score_file(path, rows, header_comment: str | None = None) -> None:
    """Write score rows as `utt attack key score` lines (optional # comment header)."""
    with open(path, "w") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        for row in rows:
            fh.write(f"{row.utterance_id} {row.attack_id} {row.key} {row.score:.6f}\n")


def read_score_file(path) -> list[ScoreRow]:
    """Parse a score file, skipping blank and comment lines."""
    rows = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 4:
                raise DataError(f"{path}:{lineno}: expected 4 fields, got {len(parts)}")
            utt, attack, key, score = parts
            if key not in (BONAFIDE, SPOOF):
                raise DataError(f"{path}:{lineno}: bad key {key!r}")
            try:
                value = float(score)
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: bad score {score!r}") from exc
            rows.append(ScoreRow(utt, attack, key, value))
    return rows


def labeled_scores(rows, attack_id: str | None = None) -> LabeledScores:
    """Pool score rows into LabeledScores.

    With attack_id set, spoof trials are restricted to that attack while
    every bona fide trial is kept (bona trials are shared across the
    per-attack evaluations).
    """
    bona = [r.score for r in rows if r.key == BONAFIDE]
    spoof = [
        r.score
        for r in rows
        if r.key == SPOOF and (attack_id is None or r.attack_id == attack_id)
    ]
    if not spoof:
        raise DataError(f"no spoof trials{' for attack ' + attack_id if attack_id else ''}")
    return LabeledScores(np.array(bona), np.array(spoof))


def attack_ids(rows) -> list[str]:
    """Sorted distinct attack identifiers present among spoof rows."""
    return sorted({r.attack_id for r in rows if r.key == SPOOF})
