"""Novelty metrics over the past/contemporary indexes.

All metrics consume embedding vectors, never raw text: the caller embeds
so the vector provenance stays explicit. Distances come from the exact
k-NN of the vector store.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import MetricError, ReviewError
from .llm import CallKey, UsageLedger, complete, make_request, reprompt_request
from .templates import join_sections
from .vecstore import EmbeddingVector, VectorIndex

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class DatabaseMeans:
    """Normalizers: self-excluded neighbor-distance means per database and
    the exact mean citation count of the contemporary database."""

    past_distance_mean: float
    con_distance_mean: float
    con_citation_mean: float

    def to_json(self) -> dict:
        return {
            "past_distance_mean": self.past_distance_mean,
            "con_distance_mean": self.con_distance_mean,
            "con_citation_mean": self.con_citation_mean,
        }


@dataclass(frozen=True)
class NoveltyScores:
    hd_raw: float
    cd_raw: float
    ci_raw: float
    hd: float
    cd: float
    ci: float
    on: float | None
    k_used: int
    db_means: DatabaseMeans

    def to_json(self) -> dict:
        return {
            "hd_raw": self.hd_raw,
            "cd_raw": self.cd_raw,
            "ci_raw": self.ci_raw,
            "hd": self.hd,
            "cd": self.cd,
            "ci": self.ci,
            "on": self.on,
            "k_used": self.k_used,
            "db_means": self.db_means.to_json(),
        }


@dataclass(frozen=True)
class ReviewScore:
    overall: float
    rationale: str

    def __post_init__(self):
        if not (1.0 <= self.overall <= 10.0):
            raise ReviewError(f"review score {self.overall} outside [1, 10]")


def _mean_neighbor_distance(index: VectorIndex, vector, k: int) -> float:
    if len(index) == 0:
        raise MetricError("cannot compute a distance metric over an empty index")
    neighbors = index.knn(vector, k)
    return float(sum(d for _, d in neighbors) / len(neighbors))


def historical_dissimilarity(abstract_vec, past_index: VectorIndex, k: int = 5) -> float:
    """Mean Euclidean distance to the k nearest past abstracts (raw)."""
    return _mean_neighbor_distance(past_index, abstract_vec, k)


def contemporary_dissimilarity(abstract_vec, con_index: VectorIndex, k: int = 5) -> float:
    """Mean Euclidean distance to the k nearest contemporary abstracts (raw)."""
    return _mean_neighbor_distance(con_index, abstract_vec, k)


def contemporary_impact(abstract_vec, con_index: VectorIndex, k: int = 5) -> float:
    """Mean citation count of the k nearest contemporary abstracts (raw)."""
    if len(con_index) == 0:
        raise MetricError("cannot compute impact over an empty index")
    neighbors = con_index.knn(abstract_vec, k)
    citations = []
    for entry_id, _ in neighbors:
        payload = con_index.payload(entry_id)
        try:
            citations.append(int(payload["citation_count"]))
        except (KeyError, TypeError, ValueError):
            raise MetricError(f"index payload for {entry_id!r} lacks a citation_count") from None
    return float(sum(citations) / len(citations))


def _self_excluded_distance_mean(index: VectorIndex, k: int, sample_size: int, seed: int) -> float:
    if len(index) < 2:
        raise MetricError("distance mean needs at least two database entries")
    ids = sorted(index.ids)
    if len(ids) > sample_size:
        rng = np.random.default_rng(seed)
        chosen = rng.choice(len(ids), size=sample_size, replace=False)
        ids = [ids[i] for i in sorted(chosen)]
    total = 0.0
    for entry_id in ids:
        neighbors = [(nid, d) for nid, d in index.knn(index.vector(entry_id), k + 1) if nid != entry_id]
        neighbors = neighbors[:k]
        total += sum(d for _, d in neighbors) / len(neighbors)
    return total / len(ids)


def database_means(
    past_index: VectorIndex,
    con_index: VectorIndex,
    sample_size: int = 1000,
    k: int = 5,
    seed: int = 0,
) -> DatabaseMeans:
    """Normalizers derived from the databases themselves.

    The distance means apply the same statistic the metrics compute, to
    each database abstract against its own database (self excluded),
    averaged over a seeded sample (or everything, when the database fits
    in the sample). The citation mean is exact over the whole
    contemporary database.
    """
    if len(con_index) == 0:
        raise MetricError("contemporary index is empty")
    citations = []
    for entry_id in con_index.ids:
        payload = con_index.payload(entry_id)
        try:
            citations.append(int(payload["citation_count"]))
        except (KeyError, TypeError, ValueError):
            raise MetricError(f"index payload for {entry_id!r} lacks a citation_count") from None
    return DatabaseMeans(
        past_distance_mean=_self_excluded_distance_mean(past_index, k, sample_size, seed),
        con_distance_mean=_self_excluded_distance_mean(con_index, k, sample_size, seed),
        con_citation_mean=float(sum(citations) / len(citations)),
    )


def overall_novelty(hd: float, ci: float, cd: float) -> float:
    """Composite proxy hd * ci / cd over the normalized components."""
    if cd == 0:
        raise MetricError(f"overall novelty undefined at cd=0 (hd={hd}, ci={ci})")
    return hd * ci / cd


def score_abstract(
    abstract_vec: EmbeddingVector,
    past_index: VectorIndex,
    con_index: VectorIndex,
    means: DatabaseMeans,
    k: int = 5,
) -> NoveltyScores:
    """All novelty scores for one abstract vector, with normalization
    provenance attached. `on` is None when normalized cd is zero."""
    hd_raw = historical_dissimilarity(abstract_vec, past_index, k)
    cd_raw = contemporary_dissimilarity(abstract_vec, con_index, k)
    ci_raw = contemporary_impact(abstract_vec, con_index, k)
    if means.past_distance_mean <= 0 or means.con_distance_mean <= 0 or means.con_citation_mean <= 0:
        raise MetricError(f"normalizers must be positive, got {means}")
    hd = hd_raw / means.past_distance_mean
    cd = cd_raw / means.con_distance_mean
    ci = ci_raw / means.con_citation_mean
    on = overall_novelty(hd, ci, cd) if cd > 0 else None
    return NoveltyScores(
        hd_raw=hd_raw,
        cd_raw=cd_raw,
        ci_raw=ci_raw,
        hd=hd,
        cd=cd,
        ci=ci,
        on=on,
        k_used=k,
        db_means=means,
    )


_OVERALL_PATTERNS = (
    r"\boverall\s*\**\s*(?:score)?\s*[:\-]\s*\**\s*(\d+(?:\.\d+)?)",
    r"\bscore\s*\**\s*[:\-]\s*\**\s*(\d+(?:\.\d+)?)",
)


def _extract_overall(text: str) -> float | None:
    import re

    for pattern in _OVERALL_PATTERNS:
        m = re.search(pattern, text, re.IGNORECASE)
        if m:
            return float(m.group(1))
    return None


def llm_review(
    abstract_text: str,
    backend,
    ledger: UsageLedger,
    review_template: str,
    model: str = "default",
    temperature: float = 0.2,
) -> ReviewScore:
    """Reviewer-rubric scoring of an abstract; range-checked, one retry."""
    content = join_sections([("Task", review_template), ("Abstract", abstract_text)])
    system = "You are a rigorous, fair conference reviewer."
    request = make_request(model, system, content, temperature)
    key = CallKey("llm_review", 1, 0)
    text = complete(backend, request, key, ledger)
    overall = _extract_overall(text)
    if overall is None or not (1.0 <= overall <= 10.0):
        retry = reprompt_request(
            request, text, "End your reply with a line 'Overall: <integer 1-10>'."
        )
        text = complete(backend, retry, key.retry(), ledger)
        overall = _extract_overall(text)
        if overall is None:
            raise ReviewError("review response carried no overall score after a re-prompt")
    if not (1.0 <= overall <= 10.0):
        raise ReviewError(f"review score {overall} outside [1, 10]")
    return ReviewScore(overall=overall, rationale=text)


def pearson(xs: Sequence[float], ys: Sequence[float]) -> float:
    """Sample Pearson correlation coefficient."""
    if len(xs) != len(ys):
        raise MetricError(f"length mismatch: {len(xs)} vs {len(ys)}")
    n = len(xs)
    if n < 2:
        raise MetricError("pearson needs at least two points")
    mx = sum(xs) / n
    my = sum(ys) / n
    dx = [x - mx for x in xs]
    dy = [y - my for y in ys]
    sxx = sum(d * d for d in dx)
    syy = sum(d * d for d in dy)
    if sxx == 0 or syy == 0:
        raise MetricError("pearson undefined for zero-variance input")
    r = sum(a * b for a, b in zip(dx, dy)) / math.sqrt(sxx * syy)
    return max(-1.0, min(1.0, r))
