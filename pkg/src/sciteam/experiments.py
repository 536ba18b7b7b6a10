"""Sweeps over team settings, constrained team composition for the
freshness and diversity experiments, and CSV/report aggregation.
"""
from __future__ import annotations

import csv
import io
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .agents import make_agent
from .corpus import AuthorProfile, ResearchEcosystem
from .errors import InfeasibleTeamError, MetricError, SciteamError
from .llm import UsageLedger
from .metrics import DatabaseMeans, llm_review, score_abstract
from .pipeline import Pipeline, PipelineConfig, PipelineResult, StageTurns, Team, sample_index, selection_probabilities
from .templates import PromptTemplates
from .util import derive_seed, half_up, stable_json
from .vecstore import VectorIndex, embed_text

log = logging.getLogger(__name__)

DIMENSIONS = ("team_size", "turns", "freshness", "diversity", "ablation", "pattern")

ABLATION_VALUES = ("full", "no_invitation", "no_novelty_assessment", "no_self_review")

CSV_COLUMNS = (
    "cell_id",
    "dimension",
    "value",
    "run_id",
    "seed",
    "hd",
    "cd",
    "ci",
    "on",
    "review_score",
    "cost",
    "turns_topic",
    "turns_idea",
    "turns_check",
    "turns_abstract",
    "flags",
)

METRIC_COLUMNS = ("hd", "cd", "ci", "on", "review_score", "cost")


@dataclass
class SweepSpec:
    dimension: str
    values: list
    runs_per_cell: int = 20
    base_config: PipelineConfig = field(default_factory=PipelineConfig)
    master_seed: int = 0
    max_reseeds: int = 3

    def __post_init__(self):
        if self.dimension not in DIMENSIONS:
            raise SciteamError(f"unknown sweep dimension {self.dimension!r}; pick one of {DIMENSIONS}")
        if not self.values:
            raise SciteamError("sweep values must be non-empty")
        if self.runs_per_cell < 1:
            raise SciteamError("runs_per_cell must be at least 1")


@dataclass
class CellResult:
    cell_id: str
    dimension: str
    value: object
    rows: list[dict]
    means: dict[str, float]
    stds: dict[str, float]
    failures: int
    incomplete: bool

    def to_json(self) -> dict:
        return {
            "cell_id": self.cell_id,
            "dimension": self.dimension,
            "value": self.value,
            "runs": len(self.rows),
            "means": self.means,
            "stds": self.stds,
            "failures": self.failures,
            "incomplete": self.incomplete,
        }


@dataclass
class MetricsContext:
    """Everything a run needs to turn its abstract into score columns."""

    provider: object
    past_index: VectorIndex
    con_index: VectorIndex
    means: DatabaseMeans
    k: int = 5
    llm_review_enabled: bool = False
    review_template: str = ""
    model: str = "default"


# ---------------------------------------------------------------------------
# constrained team composition


def count_fresh_members(member_ids: Sequence[str], leader_id: str, ecosystem: ResearchEcosystem) -> int:
    """Independent freshness check: a member is fresh when it shares zero
    raw (pre-smoothing) collaborations with everyone selected before it."""
    raw = ecosystem.raw_adjacency
    selected = [leader_id]
    fresh = 0
    for mid in member_ids:
        i = raw.index_of(mid)
        if all(raw.counts[i, raw.index_of(x)] == 0 for x in selected):
            fresh += 1
        selected.append(mid)
    return fresh


def count_unique_primary_tags(profiles: Sequence[AuthorProfile]) -> int:
    """Independent diversity check: members whose first interest tag is
    shared with nobody else on the team."""
    tags = [p.research_interests[0] for p in profiles]
    return sum(1 for t in tags if tags.count(t) == 1)


def compose_team_with_freshness(
    ecosystem: ResearchEcosystem,
    leader_id: str,
    n: int,
    fraction: float,
    seed: int,
    templates: PromptTemplates,
) -> Team:
    """Assemble a team with exactly round(fraction * (n-1)) fresh members.

    Fresh means zero raw collaborations with every previously selected
    participant. Non-fresh slots are filled first from the leader's
    standard smoothed distribution restricted to connected candidates,
    then fresh slots from the same distribution restricted to unconnected
    candidates. The invitation accept/reject step is bypassed: the sweep
    needs exact fractions.
    """
    if not (0.0 <= fraction <= 1.0):
        raise InfeasibleTeamError(f"freshness fraction {fraction} outside [0, 1]")
    target_fresh = half_up(fraction * (n - 1))
    rng = np.random.default_rng(derive_seed(seed, "freshness", fraction))
    raw = ecosystem.raw_adjacency
    adjacency = ecosystem.adjacency
    leader_idx = adjacency.index_of(leader_id)
    name_by_id = ecosystem.name_by_id

    selected_idx = [leader_idx]
    member_profiles: list[AuthorProfile] = []
    excluded = {leader_idx}

    def is_fresh(j: int) -> bool:
        return all(raw.counts[j, s] == 0 for s in selected_idx)

    for slot in range(n - 1):
        want_fresh = slot >= (n - 1 - target_fresh)
        candidates, probs = selection_probabilities(adjacency, leader_idx, excluded)
        keep = [pos for pos, j in enumerate(candidates) if is_fresh(j) == want_fresh]
        if not keep:
            kind = "fresh" if want_fresh else "previously collaborating"
            raise InfeasibleTeamError(
                f"no {kind} candidate left for slot {slot + 1} of {n - 1} "
                f"(target {target_fresh} fresh members)"
            )
        sub = probs[keep]
        j = sample_index([candidates[pos] for pos in keep], sub / sub.sum(), rng)
        selected_idx.append(j)
        excluded.add(j)
        member_profiles.append(ecosystem.profile(adjacency.ids[j]))

    got = count_fresh_members([p.id for p in member_profiles], leader_id, ecosystem)
    if got != target_fresh:
        raise InfeasibleTeamError(f"composed {got} fresh members, target was {target_fresh}")
    leader = make_agent(ecosystem.profile(leader_id), templates, name_by_id)
    return Team(leader=leader, members=tuple(make_agent(p, templates, name_by_id) for p in member_profiles))


def compose_team_with_diversity(
    ecosystem: ResearchEcosystem,
    leader_id: str,
    n: int,
    fraction: float,
    seed: int,
    templates: PromptTemplates,
    attempts: int = 200,
) -> Team:
    """Assemble a team where exactly round(fraction * n) participants
    (leader included) hold a primary interest tag unique within the team.

    Randomized constructive search, verified by the independent tag
    checker; raises when no satisfying roster is found.
    """
    if not (0.0 <= fraction <= 1.0):
        raise InfeasibleTeamError(f"diversity fraction {fraction} outside [0, 1]")
    target_unique = half_up(fraction * n)
    if n - target_unique == 1:
        # a lone shared-tag participant is impossible: sharing needs a partner
        raise InfeasibleTeamError(
            f"exactly {target_unique} unique tags in a team of {n} is unsatisfiable"
        )
    rng = np.random.default_rng(derive_seed(seed, "diversity", fraction))
    leader_profile = ecosystem.profile(leader_id)
    candidates = [p for p in ecosystem.scientists if p.id != leader_id]
    name_by_id = ecosystem.name_by_id

    for attempt in range(attempts):
        shuffled = list(candidates)
        rng.shuffle(shuffled)
        members = _try_diversity_roster(leader_profile, shuffled, n, target_unique, pair_leader=attempt % 2 == 1)
        if members is None:
            continue
        team_profiles = [leader_profile] + members
        if count_unique_primary_tags(team_profiles) != target_unique:
            continue
        leader = make_agent(leader_profile, templates, name_by_id)
        return Team(leader=leader, members=tuple(make_agent(p, templates, name_by_id) for p in members))
    raise InfeasibleTeamError(
        f"no roster of size {n} with exactly {target_unique} unique primary tags found "
        f"after {attempts} attempts"
    )


def _try_diversity_roster(
    leader: AuthorProfile, shuffled: list[AuthorProfile], n: int, target_unique: int, pair_leader: bool
) -> list[AuthorProfile] | None:
    """One greedy attempt to land exactly the target tag-uniqueness count.

    With pair_leader the leader becomes non-unique by recruiting same-tag
    members; otherwise every member avoids the leader's tag and the
    non-unique quota is met with shared-tag member groups of two or three.
    """
    by_tag: dict[str, list[AuthorProfile]] = {}
    for p in shuffled:
        by_tag.setdefault(p.research_interests[0], []).append(p)
    leader_tag = leader.research_interests[0]
    members: list[AuthorProfile] = []
    used_tags = {leader_tag: 1}

    def take(tag: str) -> AuthorProfile | None:
        pool = by_tag.get(tag, [])
        return pool.pop(0) if pool else None

    slots = n - 1
    remaining = n - target_unique
    if remaining > 0 and pair_leader:
        # the leader's group absorbs two or (for an odd quota) three
        group = 3 if remaining % 2 == 1 else 2
        for _ in range(group - 1):
            partner = take(leader_tag)
            if partner is None:
                return None
            members.append(partner)
            used_tags[leader_tag] += 1
            slots -= 1
        remaining -= group
    if remaining == 1 or remaining < 0:
        return None
    while remaining > 0:
        group_tag = next((t for t, pool in by_tag.items() if len(pool) >= 2 and t not in used_tags), None)
        if group_tag is None:
            return None
        size = 3 if remaining == 3 else 2
        for _ in range(size):
            p = take(group_tag)
            if p is None:
                return None
            members.append(p)
            used_tags[group_tag] = used_tags.get(group_tag, 0) + 1
        remaining -= size
        slots -= size
    for _ in range(slots):
        tag = next((t for t, pool in by_tag.items() if pool and t not in used_tags), None)
        if tag is None:
            return None
        members.append(take(tag))
        used_tags[tag] = 1
    return members if len(members) == n - 1 else None


# ---------------------------------------------------------------------------
# the sweep runner


def _cell_config(spec: SweepSpec, value) -> PipelineConfig:
    cfg = replace(spec.base_config)
    if spec.dimension == "team_size":
        cfg = replace(cfg, n=int(value))
    elif spec.dimension == "turns":
        cfg = replace(cfg, turns=StageTurns.uniform(int(value)))
    elif spec.dimension == "ablation":
        if value not in ABLATION_VALUES:
            raise SciteamError(f"unknown ablation value {value!r}; pick one of {ABLATION_VALUES}")
        cfg = replace(
            cfg,
            invitation=cfg.invitation and value != "no_invitation",
            novelty_assessment=cfg.novelty_assessment and value != "no_novelty_assessment",
            self_review=cfg.self_review and value != "no_self_review",
        )
    elif spec.dimension == "pattern":
        if value not in ("fixed", "adaptive"):
            raise SciteamError(f"unknown pattern value {value!r}")
        cfg = replace(cfg, adaptive=(value == "adaptive"))
    # freshness / diversity keep the base config; they change composition
    return cfg


def _compose_cell_team(
    spec: SweepSpec,
    value,
    ecosystem: ResearchEcosystem,
    templates: PromptTemplates,
    config: PipelineConfig,
    seed: int,
) -> Team | None:
    if spec.dimension not in ("freshness", "diversity"):
        return None
    leader_id = config.leader_id
    if leader_id is None:
        rng = np.random.default_rng(derive_seed(seed, "leader"))
        leader_id = ecosystem.scientists[int(rng.integers(len(ecosystem.scientists)))].id
    if spec.dimension == "freshness":
        return compose_team_with_freshness(ecosystem, leader_id, config.n, float(value), seed, templates)
    return compose_team_with_diversity(ecosystem, leader_id, config.n, float(value), seed, templates)


def _run_row(
    spec: SweepSpec,
    cell_id: str,
    value,
    run_id: int,
    ecosystem: ResearchEcosystem,
    templates: PromptTemplates,
    backend,
    ctx: MetricsContext,
) -> dict:
    config = _cell_config(spec, value)
    failures = 0
    last_error: Exception | None = None
    while failures <= spec.max_reseeds:
        seed = derive_seed(spec.master_seed, cell_id, run_id, failures)
        try:
            team = _compose_cell_team(spec, value, ecosystem, templates, config, seed)
            pipe = Pipeline(ecosystem, ctx.past_index, templates, backend, ctx.provider, config, seed)
            result = pipe.run(team=team)
            return _score_row(cell_id, spec.dimension, value, run_id, seed, result, backend, ctx, failures)
        except SciteamError as exc:
            failures += 1
            last_error = exc
            log.warning("run %s/%d failed (attempt %d): %s", cell_id, run_id, failures, exc)
    return {
        "cell_id": cell_id,
        "dimension": spec.dimension,
        "value": value,
        "run_id": run_id,
        "seed": "",
        "failed": True,
        "flags": f"failed_after_{failures}_attempts:{last_error}",
    }


def _score_row(
    cell_id: str,
    dimension: str,
    value,
    run_id: int,
    seed: int,
    result: PipelineResult,
    backend,
    ctx: MetricsContext,
    reseeds: int,
) -> dict:
    vec = embed_text(ctx.provider, result.abstract.full_text)
    scores = score_abstract(vec, ctx.past_index, ctx.con_index, ctx.means, ctx.k)
    review = ""
    if ctx.llm_review_enabled:
        review = llm_review(
            result.abstract.full_text, backend, UsageLedger(), ctx.review_template, ctx.model
        ).overall
    flags = list(result.flags)
    if reseeds:
        flags.append(f"reseeded_{reseeds}x")
    return {
        "cell_id": cell_id,
        "dimension": dimension,
        "value": value,
        "run_id": run_id,
        "seed": seed,
        "hd": scores.hd,
        "cd": scores.cd,
        "ci": scores.ci,
        "on": scores.on if scores.on is not None else "",
        "review_score": review,
        "cost": result.inference_cost(),
        "turns_topic": result.turn_counts["topic"],
        "turns_idea": result.turn_counts["idea"],
        "turns_check": result.turn_counts["check"],
        "turns_abstract": result.turn_counts["abstract"],
        "flags": ";".join(flags),
        "failed": False,
    }


def run_sweep(
    spec: SweepSpec,
    ecosystem: ResearchEcosystem,
    templates: PromptTemplates,
    backend,
    ctx: MetricsContext,
    workers: int = 1,
) -> list[CellResult]:
    """Run every cell of the sweep; failed runs are re-seeded up to
    max_reseeds times, then recorded as missing with the cell flagged
    incomplete. Row order (and therefore the CSV) is deterministic
    regardless of worker count."""
    jobs = [
        (str(value), value, run_id)
        for value in spec.values
        for run_id in range(spec.runs_per_cell)
    ]

    def job(args):
        cell_id, value, run_id = args
        return _run_row(spec, cell_id, value, run_id, ecosystem, templates, backend, ctx)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(job, jobs))
    else:
        rows = [job(a) for a in jobs]

    cells: list[CellResult] = []
    for value in spec.values:
        cell_id = str(value)
        cell_rows = [r for r in rows if r["cell_id"] == cell_id]
        ok_rows = [r for r in cell_rows if not r["failed"]]
        failures = len(cell_rows) - len(ok_rows)
        means, stds = aggregate(ok_rows)
        cells.append(
            CellResult(
                cell_id=cell_id,
                dimension=spec.dimension,
                value=value,
                rows=cell_rows,
                means=means,
                stds=stds,
                failures=failures,
                incomplete=failures > 0,
            )
        )
    return cells


def aggregate(rows: list[dict]) -> tuple[dict[str, float], dict[str, float]]:
    """Mean and sample std per metric column over rows carrying a value."""
    means: dict[str, float] = {}
    stds: dict[str, float] = {}
    for col in METRIC_COLUMNS:
        values = [float(r[col]) for r in rows if r.get(col) not in ("", None)]
        if not values:
            continue
        mean = sum(values) / len(values)
        means[col] = mean
        if len(values) > 1:
            stds[col] = float(np.sqrt(sum((v - mean) ** 2 for v in values) / (len(values) - 1)))
        else:
            stds[col] = 0.0
    return means, stds


def sweep_csv(cells: list[CellResult]) -> str:
    """Render all per-run rows as the documented CSV."""
    buffer = io.StringIO()
    writer = csv.DictWriter(buffer, fieldnames=list(CSV_COLUMNS), extrasaction="ignore", lineterminator="\n")
    writer.writeheader()
    for cell in cells:
        for row in cell.rows:
            writer.writerow(row)
    return buffer.getvalue()


def sweep_report(cells: list[CellResult]) -> dict:
    return {"cells": [c.to_json() for c in cells]}


def write_sweep_outputs(cells: list[CellResult], out_dir: str | Path) -> tuple[Path, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / "sweep.csv"
    report_path = out / "sweep_report.json"
    csv_path.write_text(sweep_csv(cells), encoding="utf-8")
    report_path.write_text(stable_json(sweep_report(cells), indent=2) + "\n", encoding="utf-8")
    return csv_path, report_path
