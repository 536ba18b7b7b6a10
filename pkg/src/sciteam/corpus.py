"""Corpus ingestion, quality filtering, and research-ecosystem assembly.

The ecosystem splits papers at a boundary year into a past corpus and a
contemporary corpus, extracts the scientists who authored past papers,
masks their names, and builds the co-authorship count matrix used for
collaborator sampling.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Iterable, Mapping

import numpy as np

from .errors import CorpusError, EmptyCorpusError
from .util import sha256_text, stable_json

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class PaperRecord:
    id: str
    title: str
    abstract: str
    year: int
    citation_count: int
    author_ids: tuple[str, ...]


@dataclass(frozen=True)
class AuthorRecord:
    """Raw author row as ingested; still carries the real name.

    `paper_count` and `collaborations` hold the reported values until
    `build_author_set` recomputes them over the past corpus.
    """

    id: str
    name: str
    affiliations: tuple[str, ...]
    citation_count: int
    research_interests: tuple[str, ...]
    paper_count: int = 0
    collaborations: Mapping[str, int] = field(default_factory=dict)


@dataclass(frozen=True)
class AuthorProfile:
    """Masked scientist profile; never carries the original name."""

    id: str
    masked_name: str
    affiliations: tuple[str, ...]
    citation_count: int
    research_interests: tuple[str, ...]
    paper_count: int
    collaboration_history: Mapping[str, int]


@dataclass(eq=False)
class AdjacencyMatrix:
    """Pairwise co-authorship counts over an ordered scientist id list."""

    ids: tuple[str, ...]
    counts: np.ndarray

    def __post_init__(self):
        n = len(self.ids)
        if self.counts.shape != (n, n):
            raise CorpusError(f"adjacency shape {self.counts.shape} does not match {n} ids")

    def index_of(self, author_id: str) -> int:
        try:
            return self.ids.index(author_id)
        except ValueError:
            raise CorpusError(f"unknown author id {author_id!r}") from None


@dataclass
class IngestReport:
    papers_read: int = 0
    papers_ok: int = 0
    papers_malformed: int = 0
    authors_read: int = 0
    authors_ok: int = 0
    authors_malformed: int = 0

    def to_json(self) -> dict:
        return dict(self.__dict__)


@dataclass
class BuildReport:
    """Counts in/out per filter stage of the ecosystem build."""

    stages: list[dict] = field(default_factory=list)

    def add(self, stage: str, count_in: int, count_out: int) -> None:
        self.stages.append({"stage": stage, "in": count_in, "out": count_out})

    def to_json(self) -> dict:
        return {"stages": list(self.stages)}


def _parse_paper(obj: dict) -> PaperRecord:
    pid = obj["id"]
    year = obj["year"]
    cites = obj["n_citation"]
    authors = obj["authors"]
    if not isinstance(pid, str) or not pid:
        raise ValueError("id must be a non-empty string")
    if not isinstance(year, int) or isinstance(year, bool):
        raise ValueError("year must be an integer")
    if not isinstance(cites, int) or isinstance(cites, bool) or cites < 0:
        raise ValueError("n_citation must be a non-negative integer")
    if not isinstance(authors, list) or not all(isinstance(a, str) and a for a in authors):
        raise ValueError("authors must be a list of non-empty strings")
    return PaperRecord(
        id=pid,
        title=str(obj["title"]),
        abstract=str(obj["abstract"]),
        year=year,
        citation_count=cites,
        author_ids=tuple(authors),
    )


def _parse_author(obj: dict) -> AuthorRecord:
    aid = obj["id"]
    name = obj["name"]
    cites = obj["n_citation"]
    interests = obj["interests"]
    n_papers = obj["n_papers"]
    if not isinstance(aid, str) or not aid:
        raise ValueError("id must be a non-empty string")
    if not isinstance(name, str) or not name:
        raise ValueError("name must be a non-empty string")
    if not isinstance(cites, int) or isinstance(cites, bool) or cites < 0:
        raise ValueError("n_citation must be a non-negative integer")
    if not isinstance(interests, list) or not interests:
        raise ValueError("interests must be a non-empty list")
    if not isinstance(n_papers, int) or isinstance(n_papers, bool) or n_papers < 0:
        raise ValueError("n_papers must be a non-negative integer")
    affiliations = obj.get("affiliations", [])
    if not isinstance(affiliations, list):
        raise ValueError("affiliations must be a list")
    return AuthorRecord(
        id=aid,
        name=name,
        affiliations=tuple(str(a) for a in affiliations),
        citation_count=cites,
        research_interests=tuple(str(t) for t in interests),
        paper_count=n_papers,
    )


def _read_jsonl(path: str | Path, parse: Callable[[dict], object]) -> tuple[list, int, int]:
    """Parse one record per line; malformed lines are counted, not fatal.

    Duplicate ids count as malformed (first occurrence wins).
    """
    records: list = []
    seen: set[str] = set()
    read = 0
    malformed = 0
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            read += 1
            try:
                obj = json.loads(line)
                if not isinstance(obj, dict):
                    raise ValueError("line is not a JSON object")
                record = parse(obj)
            except (ValueError, KeyError, TypeError) as exc:
                malformed += 1
                log.warning("%s:%d skipped: %s", path, lineno, exc)
                continue
            if record.id in seen:  # type: ignore[attr-defined]
                malformed += 1
                log.warning("%s:%d skipped: duplicate id %r", path, lineno, record.id)  # type: ignore[attr-defined]
                continue
            seen.add(record.id)  # type: ignore[attr-defined]
            records.append(record)
    return records, read, malformed


def ingest_corpus(
    papers_path: str | Path, authors_path: str | Path
) -> tuple[list[PaperRecord], list[AuthorRecord], IngestReport]:
    """Read the two line-delimited JSON corpus files.

    Raises OSError when a file cannot be read, EmptyCorpusError when a
    file contains no valid record at all.
    """
    report = IngestReport()
    papers, report.papers_read, report.papers_malformed = _read_jsonl(papers_path, _parse_paper)
    report.papers_ok = len(papers)
    if not papers:
        raise EmptyCorpusError(f"no valid paper records in {papers_path}")
    authors, report.authors_read, report.authors_malformed = _read_jsonl(authors_path, _parse_author)
    report.authors_ok = len(authors)
    if not authors:
        raise EmptyCorpusError(f"no valid author records in {authors_path}")
    return papers, authors, report


def filter_and_split(
    papers: Iterable[PaperRecord],
    y_bound: int,
    past_min_citations: int,
    con_min_citations: int,
) -> tuple[list[PaperRecord], list[PaperRecord]]:
    """Split papers at the boundary year after the quality filters.

    A paper published in the boundary year itself counts as contemporary,
    so the partition is total over papers passing the filters.
    """
    if past_min_citations < 0 or con_min_citations < 0:
        raise CorpusError("citation thresholds must be non-negative")
    past: list[PaperRecord] = []
    con: list[PaperRecord] = []
    for p in papers:
        if not p.abstract:
            continue
        if p.year < y_bound:
            if p.citation_count >= past_min_citations:
                past.append(p)
        else:
            if p.citation_count >= con_min_citations:
                con.append(p)
    return past, con


def build_author_set(
    past_papers: list[PaperRecord],
    authors: list[AuthorRecord],
    min_papers: int,
    min_coauthors: int,
) -> list[AuthorRecord]:
    """Retain authors meeting the paper and distinct-co-author thresholds.

    Both statistics are computed over the past corpus, and the returned
    records carry `paper_count` and `collaborations` recomputed there;
    collaboration counts are restricted to co-authors that were themselves
    retained. Authors without a single past paper are never retained. The
    result is ordered by author id.
    """
    known = {a.id: a for a in authors}
    paper_counts: dict[str, int] = {}
    coauthors: dict[str, set[str]] = {}
    for p in past_papers:
        present = [aid for aid in p.author_ids if aid in known]
        for aid in present:
            paper_counts[aid] = paper_counts.get(aid, 0) + 1
            others = coauthors.setdefault(aid, set())
            others.update(x for x in present if x != aid)
    retained_ids = sorted(
        aid
        for aid in paper_counts
        if paper_counts[aid] >= max(min_papers, 1) and len(coauthors.get(aid, ())) >= min_coauthors
    )
    retained_set = set(retained_ids)

    collabs: dict[str, dict[str, int]] = {aid: {} for aid in retained_ids}
    for p in past_papers:
        present = sorted(set(aid for aid in p.author_ids if aid in retained_set))
        for i, a in enumerate(present):
            for b in present[i + 1 :]:
                collabs[a][b] = collabs[a].get(b, 0) + 1
                collabs[b][a] = collabs[b].get(a, 0) + 1

    return [
        replace(known[aid], paper_count=paper_counts[aid], collaborations=dict(sorted(collabs[aid].items())))
        for aid in retained_ids
    ]


def build_adjacency(scientists: list, past_papers: list[PaperRecord]) -> AdjacencyMatrix:
    """Count, for every pair of scientists, the past papers they share."""
    if not scientists:
        raise CorpusError("cannot build an adjacency matrix for an empty scientist set")
    ids = tuple(s.id for s in scientists)
    pos = {aid: i for i, aid in enumerate(ids)}
    counts = np.zeros((len(ids), len(ids)), dtype=np.int64)
    for p in past_papers:
        present = sorted({pos[aid] for aid in p.author_ids if aid in pos})
        for i, a in enumerate(present):
            for b in present[i + 1 :]:
                counts[a, b] += 1
                counts[b, a] += 1
    return AdjacencyMatrix(ids=ids, counts=counts)


def smooth_adjacency(adj: AdjacencyMatrix) -> AdjacencyMatrix:
    """Add 1 to every off-diagonal entry so unseen pairs keep sampling mass.

    The diagonal stays 0: self-selection is excluded at sampling time.
    """
    n = len(adj.ids)
    smoothed = adj.counts + np.ones((n, n), dtype=np.int64) - np.eye(n, dtype=np.int64)
    return AdjacencyMatrix(ids=adj.ids, counts=smoothed)


def mask_names(authors: list[AuthorRecord], seed: int) -> list[AuthorProfile]:
    """Assign deterministic pseudonyms and drop the original names.

    The pseudonym is a pure function of (id, seed). All pseudonyms in a
    run share one digest length, so no pseudonym is a substring of
    another; on the astronomically rare collision the length is grown for
    the whole set, keeping that property.
    """
    length = 8
    while True:
        names = {a.id: "S-" + sha256_text(f"{seed}:{a.id}")[:length] for a in authors}
        if len(set(names.values())) == len(names):
            break
        length += 4
    for a in authors:
        if names[a.id] == a.name:
            raise CorpusError(f"pseudonym for {a.id!r} collides with the original name")
    return [
        AuthorProfile(
            id=a.id,
            masked_name=names[a.id],
            affiliations=a.affiliations,
            citation_count=a.citation_count,
            research_interests=a.research_interests,
            paper_count=a.paper_count,
            collaboration_history=dict(a.collaborations),
        )
        for a in authors
    ]


def profile_text(profile: AuthorProfile, name_by_id: Mapping[str, str] | None = None) -> str:
    """Canonical textual serialization of a profile.

    Used both for embedding into the knowledge bank and for describing
    scientists inside prompts. Collaborators are rendered with their
    masked names when a name map is given.
    """
    name_by_id = name_by_id or {}
    if profile.collaboration_history:
        ordered = sorted(profile.collaboration_history.items(), key=lambda kv: (-kv[1], kv[0]))
        collab = "; ".join(f"{name_by_id.get(cid, cid)} ({cnt} joint papers)" for cid, cnt in ordered)
    else:
        collab = "none"
    affiliations = ", ".join(profile.affiliations) if profile.affiliations else "unaffiliated"
    return (
        f"Name: {profile.masked_name}\n"
        f"Affiliations: {affiliations}\n"
        f"Citations: {profile.citation_count}\n"
        f"Research interests: {', '.join(profile.research_interests)}\n"
        f"Past papers: {profile.paper_count}\n"
        f"Collaborations: {collab}"
    )


@dataclass
class ResearchEcosystem:
    y_start: int
    y_bound: int
    y_end: int
    past_papers: list[PaperRecord]
    contemporary_papers: list[PaperRecord]
    scientists: list[AuthorProfile]
    adjacency: AdjacencyMatrix
    raw_adjacency: AdjacencyMatrix

    def __post_init__(self):
        self._by_id = {s.id: s for s in self.scientists}

    def profile(self, author_id: str) -> AuthorProfile:
        try:
            return self._by_id[author_id]
        except KeyError:
            raise CorpusError(f"unknown scientist id {author_id!r}") from None

    @property
    def name_by_id(self) -> dict[str, str]:
        return {s.id: s.masked_name for s in self.scientists}

    def to_json(self) -> dict:
        return {
            "version": 1,
            "y_start": self.y_start,
            "y_bound": self.y_bound,
            "y_end": self.y_end,
            "past_papers": [_paper_json(p) for p in self.past_papers],
            "contemporary_papers": [_paper_json(p) for p in self.contemporary_papers],
            "scientists": [_profile_json(s) for s in self.scientists],
            "raw_adjacency": {
                "ids": list(self.raw_adjacency.ids),
                "counts": self.raw_adjacency.counts.tolist(),
            },
        }

    @classmethod
    def from_json(cls, obj: dict) -> "ResearchEcosystem":
        if obj.get("version") != 1:
            raise CorpusError(f"unsupported ecosystem file version {obj.get('version')!r}")
        raw = AdjacencyMatrix(
            ids=tuple(obj["raw_adjacency"]["ids"]),
            counts=np.asarray(obj["raw_adjacency"]["counts"], dtype=np.int64),
        )
        return cls(
            y_start=obj["y_start"],
            y_bound=obj["y_bound"],
            y_end=obj["y_end"],
            past_papers=[_paper_from_json(p) for p in obj["past_papers"]],
            contemporary_papers=[_paper_from_json(p) for p in obj["contemporary_papers"]],
            scientists=[_profile_from_json(s) for s in obj["scientists"]],
            adjacency=smooth_adjacency(raw),
            raw_adjacency=raw,
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(stable_json(self.to_json(), indent=2) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "ResearchEcosystem":
        return cls.from_json(json.loads(Path(path).read_text(encoding="utf-8")))


def _paper_json(p: PaperRecord) -> dict:
    return {
        "id": p.id,
        "title": p.title,
        "abstract": p.abstract,
        "year": p.year,
        "citation_count": p.citation_count,
        "author_ids": list(p.author_ids),
    }


def _paper_from_json(obj: dict) -> PaperRecord:
    return PaperRecord(
        id=obj["id"],
        title=obj["title"],
        abstract=obj["abstract"],
        year=obj["year"],
        citation_count=obj["citation_count"],
        author_ids=tuple(obj["author_ids"]),
    )


def _profile_json(s: AuthorProfile) -> dict:
    return {
        "id": s.id,
        "masked_name": s.masked_name,
        "affiliations": list(s.affiliations),
        "citation_count": s.citation_count,
        "research_interests": list(s.research_interests),
        "paper_count": s.paper_count,
        "collaboration_history": dict(sorted(s.collaboration_history.items())),
    }


def _profile_from_json(obj: dict) -> AuthorProfile:
    return AuthorProfile(
        id=obj["id"],
        masked_name=obj["masked_name"],
        affiliations=tuple(obj["affiliations"]),
        citation_count=obj["citation_count"],
        research_interests=tuple(obj["research_interests"]),
        paper_count=obj["paper_count"],
        collaboration_history=dict(obj["collaboration_history"]),
    )


def build_ecosystem(
    papers: list[PaperRecord],
    authors: list[AuthorRecord],
    *,
    y_start: int,
    y_bound: int,
    y_end: int,
    past_min_citations: int = 10,
    con_min_citations: int = 5,
    min_papers: int = 50,
    min_coauthors: int = 50,
    mask_seed: int = 0,
) -> tuple[ResearchEcosystem, BuildReport]:
    """Assemble the full ecosystem from ingested records.

    Papers outside [y_start, y_end] are dropped before the split. Fails
    when no scientist survives the author filters, because the pipeline
    needs at least one leader candidate.
    """
    if not (y_start <= y_bound <= y_end):
        raise CorpusError(f"year bounds must satisfy start <= bound <= end, got {(y_start, y_bound, y_end)}")
    report = BuildReport()
    in_range = [p for p in papers if y_start <= p.year <= y_end]
    report.add("year_range", len(papers), len(in_range))
    past, con = filter_and_split(in_range, y_bound, past_min_citations, con_min_citations)
    report.add("past_filter", len(in_range), len(past))
    report.add("contemporary_filter", len(in_range), len(con))
    retained = build_author_set(past, authors, min_papers, min_coauthors)
    report.add("author_filter", len(authors), len(retained))
    if not retained:
        raise CorpusError(
            "author filters retained no scientist "
            f"(min_papers={min_papers}, min_coauthors={min_coauthors})"
        )
    scientists = mask_names(retained, mask_seed)
    raw = build_adjacency(scientists, past)
    eco = ResearchEcosystem(
        y_start=y_start,
        y_bound=y_bound,
        y_end=y_end,
        past_papers=past,
        contemporary_papers=con,
        scientists=scientists,
        adjacency=smooth_adjacency(raw),
        raw_adjacency=raw,
    )
    return eco, report
