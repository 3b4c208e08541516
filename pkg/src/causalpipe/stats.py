"""Paired tests, multiplicity correction, effect sizes, agreement and text shift."""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import stats as sps

from .payloads import INTENT, TOOL_CALL
from .scoring import tokenize

EXACT_MAX_N = 20


class DegenerateSampleError(ValueError):
    pass


@dataclass(frozen=True)
class PairedSample:
    baseline: tuple
    treated: tuple
    labels: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "baseline", tuple(float(x) for x in self.baseline))
        object.__setattr__(self, "treated", tuple(float(x) for x in self.treated))
        object.__setattr__(self, "labels", tuple(self.labels))
        if len(self.baseline) != len(self.treated):
            raise ValueError("paired sample needs equal lengths")
        if self.labels and len(self.labels) != len(self.baseline):
            raise ValueError("labels must align with the sample")

    @property
    def diffs(self) -> np.ndarray:
        return np.asarray(self.treated) - np.asarray(self.baseline)

    @classmethod
    def from_diffs(cls, diffs) -> "PairedSample":
        diffs = [float(d) for d in diffs]
        return cls([0.0] * len(diffs), diffs)


def _as_diffs(sample) -> np.ndarray:
    if isinstance(sample, PairedSample):
        return sample.diffs
    return np.asarray(sample, dtype=float)


@dataclass(frozen=True)
class WilcoxonResult:
    statistic: float  # W+, sum of ranks of positive differences
    p_value: float
    n: int  # nonzero differences used
    mode: str

    def __iter__(self):
        return iter((self.statistic, self.p_value))


def _null_counts(doubled_ranks: Sequence[int]) -> list:
    """Counts of each attainable doubled rank-sum over all 2^m sign patterns."""
    counts = [1]
    for r in doubled_ranks:
        nxt = counts + [0] * r
        for s, c in enumerate(counts):
            if c:
                nxt[s + r] += c
        counts = nxt
    return counts


def wilcoxon_signed_rank(sample, mode: str = "auto") -> WilcoxonResult:
    """Two-sided paired signed-rank test.

    Zero differences are dropped; tied magnitudes share average ranks.  The
    exact null distribution is the full 2^m sign-pattern distribution built by
    convolution; the normal approximation carries the tie correction and no
    continuity correction.
    """
    if mode not in ("auto", "exact", "normal-approx"):
        raise ValueError(f"unknown mode {mode!r}")
    d = _as_diffs(sample)
    d = d[d != 0]
    m = len(d)
    if m == 0:
        raise DegenerateSampleError("degenerate: no nonzero differences")
    ranks = sps.rankdata(np.abs(d))  # average ranks
    w_plus = float(ranks[d > 0].sum())
    use_exact = mode == "exact" or (mode == "auto" and m <= EXACT_MAX_N)
    if use_exact:
        doubled = [int(round(2 * r)) for r in ranks]
        counts = _null_counts(doubled)
        total = 2 ** m
        t = int(round(2 * w_plus))
        lower = sum(counts[: t + 1])
        upper = sum(counts[t:])
        p = min(1.0, 2 * min(lower, upper) / total)
        return WilcoxonResult(w_plus, p, m, "exact")
    mean = m * (m + 1) / 4
    _, tie_sizes = np.unique(np.abs(d), return_counts=True)
    var = m * (m + 1) * (2 * m + 1) / 24 - float(np.sum(tie_sizes ** 3 - tie_sizes)) / 48
    if var <= 0:
        raise DegenerateSampleError("degenerate: zero variance under the null")
    z = (w_plus - mean) / math.sqrt(var)
    return WilcoxonResult(w_plus, min(1.0, math.erfc(abs(z) / math.sqrt(2))), m, "normal-approx")


def holm_correction(raw_p: Sequence[float]) -> list:
    """Holm step-down adjusted p-values, returned in input order."""
    p = [float(x) for x in raw_p]
    if any(not 0.0 <= x <= 1.0 for x in p):
        raise ValueError("p-values must lie in [0, 1]")
    m = len(p)
    order = sorted(range(m), key=lambda j: p[j])
    adjusted = [0.0] * m
    running = 0.0
    for rank, j in enumerate(order):
        running = max(running, min(1.0, (m - rank) * p[j]))
        adjusted[j] = running
    return adjusted


def cohens_dz(sample) -> float:
    d = _as_diffs(sample)
    if len(d) < 2:
        raise DegenerateSampleError("d_z needs at least two pairs")
    sd = float(np.std(d, ddof=1))
    if sd == 0:
        raise DegenerateSampleError("d_z undefined: differences have zero variance")
    return float(np.mean(d)) / sd


def correlation(x, y, kind: str = "pearson") -> tuple:
    x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
    if len(x) != len(y):
        raise ValueError("x and y must be aligned")
    if len(x) < 3:
        raise ValueError("correlation needs n >= 3")
    if np.ptp(x) == 0 or np.ptp(y) == 0:
        raise DegenerateSampleError("correlation undefined for constant input")
    if kind == "pearson":
        r, p = sps.pearsonr(x, y)
    elif kind == "spearman":
        r, p = sps.spearmanr(x, y)
    else:
        raise ValueError(f"unknown correlation kind {kind!r}")
    return float(r), float(p)


def krippendorff_alpha_interval(*raters) -> float:
    """Interval-metric alpha for fully crossed ratings (no missing values).

    Pass two or more aligned rater lists, or one 2-D array of shape
    (raters, units).
    """
    data = np.asarray(raters[0] if len(raters) == 1 else raters, dtype=float)
    if data.ndim != 2 or data.shape[0] < 2:
        raise ValueError("need at least two raters")
    n_units = data.shape[1]
    if n_units < 2:
        raise ValueError("need at least two units")
    m = data.shape[0]
    pooled = data.ravel()
    n = pooled.size
    # within-unit disagreement, each unit normalised by (m_u - 1)
    within = sum(float(np.sum((col[:, None] - col[None, :]) ** 2)) / (m - 1) for col in data.T)
    between = float(np.sum((pooled[:, None] - pooled[None, :]) ** 2))
    if between == 0:
        raise DegenerateSampleError("alpha undefined: all ratings identical")
    d_obs = within / n
    d_exp = between / (n * (n - 1))
    return 1.0 - d_obs / d_exp


def bow_cosine(text_a: str, text_b: str) -> float:
    a, b = Counter(tokenize(text_a)), Counter(tokenize(text_b))
    if not a and not b:
        return 1.0
    if not a or not b:
        return 0.0
    dot = sum(a[t] * b[t] for t in a.keys() & b.keys())
    return min(1.0, dot / math.sqrt(sum(v * v for v in a.values()) * sum(v * v for v in b.values())))


def _vec_cosine(u, v) -> float:
    u, v = np.asarray(u, dtype=float), np.asarray(v, dtype=float)
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0 or nv == 0:
        return 1.0 if nu == nv else 0.0
    return float(u @ v / (nu * nv))


def _jaccard(a: set, b: set) -> float:
    return 1.0 if not a and not b else len(a & b) / len(a | b)


@dataclass
class ShiftTable:
    cosine: dict  # module -> mean BoW cosine to baseline
    intent_disagreement: Optional[float] = None
    tool_disagreement: Optional[float] = None
    slot_key_jaccard: Optional[float] = None
    embedding_cosine: dict = field(default_factory=dict)
    n: int = 0

    def to_json(self) -> dict:
        d = asdict(self)
        d["cosine"] = {str(k): v for k, v in self.cosine.items()}
        d["embedding_cosine"] = {str(k): v for k, v in self.embedding_cosine.items()}
        return d


def cascade_shift(baseline_episodes, treated_episodes,
                  embed: Optional[Callable[[str], Sequence[float]]] = None) -> ShiftTable:
    """Per-module distributional shift of treated outputs relative to baseline.

    ``embed`` is an optional host-supplied text -> vector hook; when given, a
    second per-module cosine table is computed on its vectors.
    """
    base = {e.task_id: e for e in baseline_episodes}
    treated = {e.task_id: e for e in treated_episodes}
    if set(base) != set(treated):
        raise ValueError("baseline and treated episodes cover different task sets")
    ids = sorted(base)
    if not ids:
        raise ValueError("no episodes")
    k = len(base[ids[0]].outputs)
    cos, emb = {}, {}
    for i in range(1, k + 1):
        pairs = [(base[t].payload(i).render(), treated[t].payload(i).render()) for t in ids]
        cos[i] = float(np.mean([bow_cosine(a, b) for a, b in pairs]))
        if embed is not None:
            emb[i] = float(np.mean([_vec_cosine(embed(a), embed(b)) for a, b in pairs]))
    table = ShiftTable(cos, embedding_cosine=emb, n=len(ids))
    kinds = [o.payload.kind for o in base[ids[0]].outputs]
    if INTENT in kinds:
        i = kinds.index(INTENT) + 1
        table.intent_disagreement = float(np.mean(
            [base[t].payload(i).intent != treated[t].payload(i).intent for t in ids]))
        table.slot_key_jaccard = float(np.mean(
            [_jaccard(set(base[t].payload(i).slots), set(treated[t].payload(i).slots)) for t in ids]))
    if TOOL_CALL in kinds:
        i = kinds.index(TOOL_CALL) + 1
        table.tool_disagreement = float(np.mean(
            [base[t].payload(i).tool != treated[t].payload(i).tool for t in ids]))
    return table


@dataclass
class StatReport:
    label: str
    raw_p: float
    holm_p: float
    d_z: float
    n: int
    statistic: float
    mean_diff: float = math.nan
    note: str = ""


def paired_comparisons(comparisons: Sequence[tuple]) -> list:
    """Wilcoxon + Holm + d_z over ``(label, PairedSample)`` pairs.

    A degenerate comparison (all differences zero) is kept with raw p = 1 and
    a note, so the family size seen by Holm stays fixed.
    """
    rows = []
    for label, sample in comparisons:
        d = sample.diffs
        note = ""
        try:
            w = wilcoxon_signed_rank(sample)
            stat, p, n = w.statistic, w.p_value, w.n
        except DegenerateSampleError as exc:
            stat, p, n, note = 0.0, 1.0, 0, str(exc)
        try:
            dz = cohens_dz(sample)
        except DegenerateSampleError:
            dz = 0.0 if np.all(d == 0) else math.nan
        rows.append(StatReport(label, p, p, dz, n, stat, float(np.mean(d)) if len(d) else math.nan, note))
    for row, adj in zip(rows, holm_correction([r.raw_p for r in rows])):
        row.holm_p = adj
    return rows
