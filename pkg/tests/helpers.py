"""Shared fixture builders: synthetic corpora, manual ecosystems, and
complete scripted-backend scripts for pipeline runs.
"""
from __future__ import annotations

import json

import numpy as np

from sciteam.corpus import (
    AdjacencyMatrix,
    AuthorProfile,
    PaperRecord,
    ResearchEcosystem,
    smooth_adjacency,
)
from sciteam.pipeline import StageTurns

TAG_POOL = [f"topic-{j}" for j in range(6)]

GOLDEN_RAW_ADJACENCY = [
    [0, 3, 1, 2, 1, 1, 2, 1],
    [3, 0, 2, 0, 0, 1, 0, 0],
    [1, 2, 0, 1, 0, 0, 0, 0],
    [2, 0, 1, 0, 1, 0, 0, 0],
    [1, 0, 0, 1, 0, 2, 0, 0],
    [1, 1, 0, 0, 2, 0, 1, 0],
    [2, 0, 0, 0, 0, 1, 0, 1],
    [1, 0, 0, 0, 0, 0, 1, 0],
]


def golden_setup():
    """The frozen end-to-end scenario: n=4, two turns per stage, one guest
    mention in topic turn 1, clean parses, self-review passes."""
    from sciteam.llm import ScriptedBackend
    from sciteam.pipeline import Pipeline, PipelineConfig, StageTurns
    from sciteam.templates import load_templates
    from sciteam.vecstore import MockEmbeddingProvider, build_paper_index

    eco = manual_ecosystem(GOLDEN_RAW_ADJACENCY)
    provider = MockEmbeddingProvider(dims=8, seed=0)
    templates = load_templates()
    # a0007 stays outside the deterministically sampled team, so naming it
    # in topic turn 1 spawns a guest
    outsider = eco.scientists[7]
    config = PipelineConfig(n=4, turns=StageTurns.uniform(2), leader_id="a0000")
    script = build_script(n=4, turns=config.turns, mention=("topic", 1, 1, outsider.masked_name))
    past_index = build_paper_index(eco.past_papers, provider)
    pipe = Pipeline(eco, past_index, templates, ScriptedBackend(script), provider, config, seed=2024)
    return pipe, eco, provider, templates, script, config, past_index


def synth_papers(n_papers, author_ids, seed=1, y_start=2000, y_end=2014, max_team=4, max_citations=40):
    rng = np.random.default_rng(seed)
    papers = []
    for i in range(n_papers):
        team_size = int(rng.integers(1, max_team + 1))
        team = list(rng.choice(author_ids, size=min(team_size, len(author_ids)), replace=False))
        tag = TAG_POOL[int(rng.integers(len(TAG_POOL)))]
        papers.append(
            PaperRecord(
                id=f"p{i:05d}",
                title=f"Study {i} of {tag}",
                abstract=f"We examine {tag} using procedure {i} and report effect sizes under varying loads.",
                year=int(rng.integers(y_start, y_end + 1)),
                citation_count=int(rng.integers(0, max_citations + 1)),
                author_ids=tuple(team),
            )
        )
    return papers


def synth_author_rows(n_authors, seed=1):
    """Raw author dicts in the ingest schema; names are distinctive tokens
    that never occur in any abstract, so leak scans are meaningful."""
    rng = np.random.default_rng(seed + 7)
    rows = []
    for i in range(n_authors):
        n_tags = int(rng.integers(1, 4))
        tags = list(rng.choice(TAG_POOL, size=n_tags, replace=False))
        rows.append(
            {
                "id": f"a{i:04d}",
                "name": f"Zq-Origname-{i:04d}",
                "affiliations": [f"Institute {i % 5}"],
                "n_citation": int(rng.integers(0, 5000)),
                "interests": tags,
                "n_papers": int(rng.integers(1, 200)),
            }
        )
    return rows


def write_corpus_files(tmp_path, papers, author_rows):
    papers_path = tmp_path / "papers.jsonl"
    authors_path = tmp_path / "authors.jsonl"
    with open(papers_path, "w", encoding="utf-8") as fh:
        for p in papers:
            fh.write(
                json.dumps(
                    {
                        "id": p.id,
                        "title": p.title,
                        "abstract": p.abstract,
                        "year": p.year,
                        "n_citation": p.citation_count,
                        "authors": list(p.author_ids),
                    }
                )
                + "\n"
            )
    with open(authors_path, "w", encoding="utf-8") as fh:
        for row in author_rows:
            fh.write(json.dumps(row) + "\n")
    return papers_path, authors_path


def manual_ecosystem(raw_counts, interests=None, n_past_papers=6):
    """Ecosystem built directly from a raw co-authorship matrix.

    Profiles get fixed-length masked names (no original names involved),
    and a small synthetic past/contemporary corpus for retrieval."""
    raw_counts = np.asarray(raw_counts, dtype=np.int64)
    n = len(raw_counts)
    ids = tuple(f"a{i:04d}" for i in range(n))
    profiles = []
    for i in range(n):
        tags = interests[i] if interests is not None else [TAG_POOL[i % len(TAG_POOL)]]
        collab = {ids[j]: int(raw_counts[i, j]) for j in range(n) if raw_counts[i, j] > 0}
        profiles.append(
            AuthorProfile(
                id=ids[i],
                masked_name=f"S-{i:08x}",
                affiliations=(f"Institute {i % 3}",),
                citation_count=100 + i,
                research_interests=tuple(tags),
                paper_count=5 + i,
                collaboration_history=collab,
            )
        )
    past = [
        PaperRecord(
            id=f"pp{i:03d}",
            title=f"Archive study {i}",
            abstract=f"Archived result {i} on {TAG_POOL[i % len(TAG_POOL)]} with replication notes.",
            year=2005 + (i % 5),
            citation_count=12 + i,
            author_ids=(ids[i % n],),
        )
        for i in range(n_past_papers)
    ]
    con = [
        PaperRecord(
            id=f"cp{i:03d}",
            title=f"Recent study {i}",
            abstract=f"Recent finding {i} on {TAG_POOL[(i + 2) % len(TAG_POOL)]} at larger scale.",
            year=2011 + (i % 3),
            citation_count=6 + 3 * i,
            author_ids=(ids[(i + 1) % n],),
        )
        for i in range(n_past_papers)
    ]
    raw = AdjacencyMatrix(ids=ids, counts=raw_counts)
    return ResearchEcosystem(
        y_start=2000,
        y_bound=2010,
        y_end=2014,
        past_papers=past,
        contemporary_papers=con,
        scientists=profiles,
        adjacency=smooth_adjacency(raw),
        raw_adjacency=raw,
    )


def scripted_idea(k, i, scores=(5, 5, 5), action="new", extra=""):
    return (
        f"Action: {action}\n"
        f"Idea: concept d{k}.{i}{extra}\n"
        f"Experiment: protocol e{k}.{i}\n"
        f"Novelty: {scores[0]}\n"
        f"Feasibility: {scores[1]}\n"
        f"Clarity: {scores[2]}"
    )


def scripted_abstract(tag):
    return (
        f"Evaluation: solid draft ({tag})\n"
        f"Modifications: tightened wording ({tag})\n"
        f"Introduction: background {tag}\n"
        f"Objective: goal {tag}\n"
        f"Methods: procedure {tag}\n"
        f"Expected Results: findings {tag}\n"
        f"Conclusion: impact {tag}"
    )


def _stage_turn_list(adaptive, k_max, turns, adaptive_stops, stage):
    if not adaptive:
        return getattr(turns, stage)
    stops = adaptive_stops or {}
    return min(stops.get(stage, k_max), k_max)


def build_script(
    n=4,
    turns=None,
    *,
    adaptive=False,
    k_max=5,
    adaptive_stops=None,
    invite_decisions=None,
    mention=None,
    idea_scores=None,
    idea_actions=None,
    votes=None,
    reviews=("NOVEL: YES. Clearly distinct from the related papers.",),
    llm_review_response=None,
):
    """A complete scripted-backend script for one pipeline run.

    mention: (stage, turn, agent_index, masked_name) injects an outsider's
    pseudonym into that response, triggering one guest reply that turn.
    idea_scores / idea_actions / votes: dicts keyed by (turn, agent_index).
    """
    turns = turns or StageTurns()
    script = {}

    decisions = invite_decisions or ["DECISION: ACCEPT\nREASONING: strong overlap with my interests."] * (n - 1)
    for attempt, text in enumerate(decisions, 1):
        script[f"invite/{attempt}/0"] = text

    def mentioned(stage, k, i):
        if mention and mention[0] == stage and mention[1] == k and mention[2] == i:
            return f" I would value input from {mention[3]} here."
        return ""

    topic_turns = _stage_turn_list(adaptive, k_max, turns, adaptive_stops, "topic")
    for k in range(1, topic_turns + 1):
        for i in range(n):
            script[f"topic/{k}/{i}"] = f"topic view turn {k} seat {i} [tp{k}.{i}]{mentioned('topic', k, i)}"
        script[f"topic_summary/{k}/0"] = f"turn {k} convergence notes [ts{k}]"
        if mention and mention[0] == "topic" and mention[1] == k:
            script[f"guest_topic/{k}/0"] = f"guest perspective on the topic [gt{k}]"
    script[f"topic_final/{topic_turns}/0"] = "Adaptive spectral methods for sparse collaboration networks [topic-final]"

    idea_turns = _stage_turn_list(adaptive, k_max, turns, adaptive_stops, "idea")
    scores = idea_scores or {}
    actions = idea_actions or {}
    for k in range(1, idea_turns + 1):
        for i in range(n):
            script[f"idea/{k}/{i}"] = scripted_idea(
                k,
                i,
                scores=scores.get((k, i), (5, 5, 5)),
                action=actions.get((k, i), "new"),
                extra=mentioned("idea", k, i),
            )
        script[f"idea_summary/{k}/0"] = f"idea-turn {k} recap [is{k}]"
        if mention and mention[0] == "idea" and mention[1] == k:
            script[f"guest_idea/{k}/0"] = f"guest idea commentary [gi{k}]"

    check_turns = _stage_turn_list(adaptive, k_max, turns, adaptive_stops, "check")
    vote_map = votes or {}
    for k in range(1, check_turns + 1):
        for i in range(n):
            v = vote_map.get((k, i), 1)
            script[f"check/{k}/{i}"] = f"CHOICE: {v}\nReasoning: idea {v} is most distinct from the retrieved papers."

    abstract_turns = _stage_turn_list(adaptive, k_max, turns, adaptive_stops, "abstract")
    for k in range(1, abstract_turns + 1):
        for i in range(n):
            script[f"abstract/{k}/{i}"] = scripted_abstract(f"r{k}.{i}")

    for round_index, text in enumerate(reviews, 1):
        script[f"review/{round_index}/0"] = text

    if adaptive:
        for stage, actual in (
            ("topic", topic_turns),
            ("idea", idea_turns),
            ("check", check_turns),
            ("abstract", abstract_turns),
        ):
            for k in range(1, actual + 1):
                if k < actual:
                    script[f"adaptive_{stage}/{k}/0"] = "DECISION: CONTINUE. Open questions remain."
                elif actual < k_max:
                    script[f"adaptive_{stage}/{k}/0"] = "DECISION: STOP. The goal is met."

    if llm_review_response is not None:
        script["llm_review/1/0"] = llm_review_response
    return script
