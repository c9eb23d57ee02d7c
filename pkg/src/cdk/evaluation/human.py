"""Aggregation arithmetic for human ratings.

Record kinds:

* ``2afc``: rater chose the model image (``True``) or the reference.
* ``alignment``: ``yes`` / ``somewhat`` / ``no``, scored 100 / 50 / 0.
* ``pairwise``: ``A`` / ``indifferent`` / ``B``.
* ``control``: a control question answered correctly or not.

Confidence intervals are 95% normal approximations.
"""

from __future__ import annotations

import csv
import io
import math
from collections import Counter, defaultdict
from dataclasses import dataclass
from typing import Iterable, Sequence

from ..errors import ProtocolError

Z95 = 1.96
ALIGNMENT_SCORES = {"yes": 100.0, "somewhat": 50.0, "no": 0.0}
PAIRWISE_CHOICES = ("A", "indifferent", "B")
KINDS = ("2afc", "alignment", "pairwise", "control")
_TRUE = {"1", "true", "yes", "model", "correct"}
_FALSE = {"0", "false", "no", "reference", "incorrect"}


@dataclass(frozen=True)
class RaterResponse:
    rater_id: str
    item_id: str
    kind: str
    value: bool | str

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ProtocolError(f"unknown response kind {self.kind!r}")
        if self.kind in ("2afc", "control") and not isinstance(self.value, bool):
            raise ProtocolError(f"{self.kind} responses carry a boolean, got {self.value!r}")
        if self.kind == "alignment" and self.value not in ALIGNMENT_SCORES:
            raise ProtocolError(f"alignment answer must be yes/somewhat/no, got {self.value!r}")
        if self.kind == "pairwise" and self.value not in PAIRWISE_CHOICES:
            raise ProtocolError(f"pairwise answer must be A/indifferent/B, got {self.value!r}")


def _of_kind(responses: Iterable[RaterResponse], kind: str) -> list[RaterResponse]:
    return [r for r in responses if r.kind == kind]


def _proportion_ci(k: int, n: int) -> tuple[float, float]:
    p = k / n
    return 100.0 * p, 100.0 * Z95 * math.sqrt(p * (1.0 - p) / n)


def filter_raters(responses: Iterable[RaterResponse], threshold: float = 0.8) -> list[str]:
    """Raters whose control-question accuracy is at least ``threshold``."""
    responses = list(responses)
    totals: dict[str, int] = Counter()
    correct: dict[str, int] = Counter()
    for r in _of_kind(responses, "control"):
        totals[r.rater_id] += 1
        correct[r.rater_id] += r.value
    raters = sorted({r.rater_id for r in responses})
    missing = [rid for rid in raters if totals[rid] == 0]
    if missing:
        raise ProtocolError(f"raters without control questions: {missing}")
    # integer form of correct / total >= threshold, tolerant of float noise in threshold
    return [rid for rid in raters if correct[rid] >= threshold * totals[rid] - 1e-9]


def preference_rate(responses: Sequence[RaterResponse]) -> tuple[float, float]:
    """Percentage of 2AFC trials won by the model, with its 95% half-width."""
    trials = _of_kind(responses, "2afc")
    if not trials:
        raise ProtocolError("no 2afc responses")
    return _proportion_ci(sum(r.value for r in trials), len(trials))


def alignment_aggregate(responses: Sequence[RaterResponse]) -> tuple[float, float]:
    """Mean alignment score and 1.96 standard errors (sample std, ddof=1)."""
    scores = [ALIGNMENT_SCORES[r.value] for r in _of_kind(responses, "alignment")]
    if not scores:
        raise ProtocolError("no alignment responses")
    n = len(scores)
    mean = sum(scores) / n
    if n == 1:
        return mean, 0.0
    var = sum((s - mean) ** 2 for s in scores) / (n - 1)
    return mean, Z95 * math.sqrt(var / n)


def pairwise_aggregate(responses: Sequence[RaterResponse]) -> dict[str, tuple[float, float]]:
    """Share (percent) and 95% half-width of each pairwise choice; shares sum to 100."""
    votes = _of_kind(responses, "pairwise")
    if not votes:
        raise ProtocolError("no pairwise responses")
    counts = Counter(r.value for r in votes)
    return {c: _proportion_ci(counts[c], len(votes)) for c in PAIRWISE_CHOICES}


def parse_value(kind: str, raw: str) -> bool | str:
    raw = raw.strip()
    if kind in ("2afc", "control"):
        low = raw.lower()
        if low in _TRUE:
            return True
        if low in _FALSE:
            return False
        raise ProtocolError(f"cannot read {kind} value {raw!r}")
    if kind == "pairwise":
        return {"a": "A", "b": "B", "indifferent": "indifferent"}.get(raw.lower(), raw)
    return raw.lower()


def read_ratings(text: str) -> list[RaterResponse]:
    """Parse CSV text with header ``rater_id,item_id,kind,value``."""
    rows = csv.DictReader(io.StringIO(text))
    if rows.fieldnames is None or [f.strip() for f in rows.fieldnames] != ["rater_id", "item_id", "kind", "value"]:
        raise ProtocolError("ratings CSV header must be rater_id,item_id,kind,value")
    out = []
    for row in rows:
        kind = row["kind"].strip().lower()
        out.append(RaterResponse(row["rater_id"].strip(), row["item_id"].strip(), kind, parse_value(kind, row["value"])))
    return out


def aggregate_report(responses: Sequence[RaterResponse], threshold: float = 0.8) -> list[tuple[str, float, float, int]]:
    """Rows ``(metric, value, ci95, n)`` over raters that pass the control filter."""
    kept = set(filter_raters(responses, threshold))
    all_raters = {r.rater_id for r in responses}
    resp = [r for r in responses if r.rater_id in kept]
    rows = [("raters_kept", float(len(kept)), 0.0, len(all_raters))]
    by_kind = defaultdict(list)
    for r in resp:
        by_kind[r.kind].append(r)
    if by_kind["2afc"]:
        rate, ci = preference_rate(resp)
        rows.append(("preference_rate", rate, ci, len(by_kind["2afc"])))
    if by_kind["alignment"]:
        mean, ci = alignment_aggregate(resp)
        rows.append(("alignment_mean", mean, ci, len(by_kind["alignment"])))
    if by_kind["pairwise"]:
        for choice, (share, ci) in pairwise_aggregate(resp).items():
            rows.append((f"pairwise_{choice}", share, ci, len(by_kind["pairwise"])))
    return rows


def report_csv(rows) -> str:
    buf = io.StringIO()
    out = csv.writer(buf, lineterminator="\n")
    out.writerow(("metric", "value", "ci95", "n"))
    for metric, value, ci, n in rows:
        out.writerow((metric, f"{value:.4f}", f"{ci:.4f}", n))
    return buf.getvalue()
