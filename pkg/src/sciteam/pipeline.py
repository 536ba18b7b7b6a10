"""Five-stage team pipeline: collaborator selection, topic discussion,
idea generation, novelty assessment, and abstract generation, plus the
leader's self-review loop and fixed/adaptive turn control.

Every prompt is assembled by a module-level compose_* function from its
recorded constituents, so a transcript can be replayed and re-composed
exactly. A run is strictly sequential: each completion depends on the
previous one.
"""
from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .agents import ScientistAgent, decide_invitation, detect_mentions, make_agent
from .corpus import AdjacencyMatrix, AuthorProfile, ResearchEcosystem
from .errors import InfeasibleTeamError, ParseError, PipelineError
from .llm import (
    CallKey,
    ChatRequest,
    FieldSpec,
    UsageLedger,
    complete,
    make_request,
    parse_continue,
    parse_novelty_verdict,
    parse_structured,
    parse_vote,
    reprompt_request,
)
from .templates import PromptTemplates, format_references, join_sections
from .util import derive_seed, stable_json
from .vecstore import VectorIndex, retrieve_papers

log = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# configuration and result types


@dataclass(frozen=True)
class StageTurns:
    topic: int = 5
    idea: int = 5
    check: int = 5
    abstract: int = 5

    @classmethod
    def uniform(cls, k: int) -> "StageTurns":
        return cls(topic=k, idea=k, check=k, abstract=k)

    def __post_init__(self):
        for name in ("topic", "idea", "check", "abstract"):
            if getattr(self, name) < 1:
                raise PipelineError(f"turns.{name} must be at least 1")


@dataclass
class PipelineConfig:
    """Knobs for one pipeline run; team size counts the leader."""

    n: int = 4
    turns: StageTurns = field(default_factory=StageTurns)
    adaptive: bool = False
    k_max: int = 5
    retrieval_k: int = 5
    invitation: bool = True
    novelty_assessment: bool = True
    self_review: bool = True
    max_regenerations: int = 1
    model: str = "default"
    temperature_discussion: float = 1.0
    temperature_decision: float = 0.2
    request_seed: int | None = None  # forwarded to chat backends that honor it
    leader_id: str | None = None


@dataclass(frozen=True)
class Idea:
    description: str
    experiment_plan: str
    novelty: int
    feasibility: int
    clarity: int
    proposer_id: str

    @property
    def confidence(self) -> float:
        return (self.novelty + self.feasibility + self.clarity) / 3.0

    def to_json(self) -> dict:
        return {
            "description": self.description,
            "experiment_plan": self.experiment_plan,
            "self_scores": {"novelty": self.novelty, "feasibility": self.feasibility, "clarity": self.clarity},
            "confidence": self.confidence,
            "proposer_id": self.proposer_id,
        }


ABSTRACT_SECTIONS = ("introduction", "objective", "methods", "expected_results", "conclusion")
_SECTION_LABELS = {
    "introduction": "Introduction",
    "objective": "Objective",
    "methods": "Methods",
    "expected_results": "Expected Results",
    "conclusion": "Conclusion",
}


@dataclass(frozen=True)
class AbstractDoc:
    introduction: str
    objective: str
    methods: str
    expected_results: str
    conclusion: str
    revision: int

    @property
    def full_text(self) -> str:
        return "\n".join(f"{_SECTION_LABELS[s]}: {getattr(self, s)}" for s in ABSTRACT_SECTIONS)

    def to_json(self) -> dict:
        doc = {s: getattr(self, s) for s in ABSTRACT_SECTIONS}
        doc["revision"] = self.revision
        doc["full_text"] = self.full_text
        return doc


@dataclass
class SelfReviewOutcome:
    round: int
    verdict: str  # "pass" | "revise" | "discard"
    review_text: str
    parse_failed: bool = False

    def to_json(self) -> dict:
        return {
            "round": self.round,
            "verdict": self.verdict,
            "review_text": self.review_text,
            "parse_failed": self.parse_failed,
        }


@dataclass(frozen=True)
class Team:
    leader: ScientistAgent
    members: tuple[ScientistAgent, ...]

    @property
    def roster(self) -> tuple[ScientistAgent, ...]:
        return (self.leader,) + self.members

    @property
    def size(self) -> int:
        return len(self.members) + 1

    @property
    def ids(self) -> frozenset[str]:
        return frozenset(a.profile.id for a in self.roster)


@dataclass
class DiscussionState:
    """Per-stage ledger of turn responses and leader summaries."""

    stage: str
    turn: int = 0
    responses: dict[tuple[int, int], str] = field(default_factory=dict)
    summaries: list[str] = field(default_factory=list)


GUEST_INDEX = -1


@dataclass(frozen=True)
class TranscriptEvent:
    seq: int
    stage: str
    turn: int
    agent: int
    name: str
    kind: str  # prompt | response | summary | vote | review
    text: str

    def to_json(self) -> dict:
        return {
            "seq": self.seq,
            "stage": self.stage,
            "turn": self.turn,
            "agent": self.agent,
            "name": self.name,
            "kind": self.kind,
            "text": self.text,
        }


class Transcript:
    """Append-only, replayable event log for one run.

    The `seq` field is a logical timestamp: wall-clock times would break
    the guarantee that identical runs produce byte-identical transcripts.
    """

    def __init__(self):
        self.events: list[TranscriptEvent] = []

    def record(self, stage: str, turn: int, agent: int, name: str, kind: str, text: str) -> TranscriptEvent:
        event = TranscriptEvent(
            seq=len(self.events), stage=stage, turn=turn, agent=agent, name=name, kind=kind, text=text
        )
        self.events.append(event)
        return event

    def select(self, *, stage: str | None = None, kind: str | None = None) -> list[TranscriptEvent]:
        return [
            e
            for e in self.events
            if (stage is None or e.stage == stage) and (kind is None or e.kind == kind)
        ]

    def to_jsonl(self) -> str:
        return "".join(stable_json(e.to_json()) + "\n" for e in self.events)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_jsonl(), encoding="utf-8")


@dataclass
class PipelineResult:
    seed: int
    team: dict
    topic: str
    ideas: list[Idea]
    idea: Idea
    abstract: AbstractDoc
    transcript: Transcript
    usage: UsageLedger
    turn_counts: dict[str, int]
    self_review_outcomes: list[SelfReviewOutcome]
    flags: list[str]

    @property
    def team_size(self) -> int:
        return 1 + len(self.team["members"])

    def inference_cost(self) -> float:
        return compute_inference_cost(self.team_size, list(self.turn_counts.values()))

    def to_json(self) -> dict:
        return {
            "seed": self.seed,
            "team": self.team,
            "topic": self.topic,
            "ideas": [i.to_json() for i in self.ideas],
            "idea": self.idea.to_json(),
            "abstract": self.abstract.to_json(),
            "usage": self.usage.to_json(),
            "turn_counts": dict(self.turn_counts),
            "inference_cost": self.inference_cost(),
            "self_review_outcomes": [o.to_json() for o in self.self_review_outcomes],
            "flags": list(self.flags),
        }


# ---------------------------------------------------------------------------
# prompt composition (each mirrors one stage's documented prompt structure)


def compose_topic_prompt(
    team_desc: str, task: str, summaries: Sequence[str], prior: Sequence[tuple[str, str]]
) -> str:
    """Discussion prompt: team description, task, all earlier-turn
    summaries, then the responses already given this turn, in that order."""
    parts = [("Team", team_desc), ("Task", task)]
    parts += [(f"Summary of turn {t}", s) for t, s in enumerate(summaries, 1)]
    parts += [(f"Response this turn from {name}", text) for name, text in prior]
    return join_sections(parts)


def compose_final_topic_prompt(task: str, summaries: Sequence[str], final_turn: Sequence[tuple[str, str]]) -> str:
    """Concluding call: task, summaries of all turns before the last, and
    every roster response from the final turn."""
    parts = [("Task", task)]
    parts += [(f"Summary of turn {t}", s) for t, s in enumerate(summaries, 1)]
    parts += [(f"Final-turn response from {name}", text) for name, text in final_turn]
    return join_sections(parts)


def compose_idea_prompt(
    task: str,
    topic: str,
    references: str,
    summaries: Sequence[str],
    prior: Sequence[tuple[str, str]],
) -> str:
    """Idea prompt: task, the agreed topic, papers retrieved for the
    previous response (or for the topic on the very first call), then the
    discussion context. The first call of the stage has no context."""
    parts = [("Task", task), ("Research topic", topic), ("Related past papers", references)]
    parts += [(f"Summary of turn {t}", s) for t, s in enumerate(summaries, 1)]
    parts += [(f"Response this turn from {name}", text) for name, text in prior]
    return join_sections(parts)


def compose_check_prompt(task: str, entries: Sequence[tuple[int, str, str]]) -> str:
    """Blind voting prompt: the task plus every candidate idea with the
    papers retrieved for it. Carries no dialogue memory whatsoever."""
    parts = [("Task", task)]
    for j, idea_text, references in entries:
        parts.append((f"Idea {j}", idea_text))
        parts.append((f"Related past papers for idea {j}", references))
    return join_sections(parts)


def compose_abstract_first_prompt(task: str, idea_text: str) -> str:
    return join_sections([("Task", task), ("Selected idea", idea_text)])


def compose_abstract_revision_prompt(task: str, judgement: str, current_abstract: str) -> str:
    """Revision prompt: only the immediately previous abstract is shown;
    earlier revisions and dialogue history are deliberately absent."""
    return join_sections(
        [("Task", task), ("Evaluation instructions", judgement), ("Current abstract", current_abstract)]
    )


def compose_post_review_prompt(
    task: str, judgement: str, review_text: str, references: str, current_abstract: str
) -> str:
    """Seed prompt for the revision pass after a failed self-review."""
    return join_sections(
        [
            ("Task", task),
            ("Evaluation instructions", judgement),
            ("Novelty review", review_text),
            ("Related past papers", references),
            ("Current abstract", current_abstract),
        ]
    )


def compose_self_review_prompt(check_task: str, abstract_text: str, references: str) -> str:
    return join_sections(
        [("Task", check_task), ("Abstract under review", abstract_text), ("Related past papers", references)]
    )


def compose_turn_summary_prompt(task: str, turn: int, dialogue: Sequence[tuple[str, str]]) -> str:
    body = "\n".join(f"{name}: {text}" for name, text in dialogue)
    return join_sections([("Task", task), (f"Dialogue from turn {turn}", body)])


def compose_adaptive_prompt(task: str, stage_goal: str, progress: str) -> str:
    return join_sections([("Task", task), ("Stage goal", stage_goal), ("Latest progress", progress)])


def format_idea(idea: Idea) -> str:
    return (
        f"Idea: {idea.description}\n"
        f"Experiment: {idea.experiment_plan}\n"
        f"Novelty: {idea.novelty}\n"
        f"Feasibility: {idea.feasibility}\n"
        f"Clarity: {idea.clarity}"
    )


def describe_team(team: Team, template: str) -> str:
    """Render the team-description block that opens discussion prompts."""
    roster = "\n".join(
        f"- {a.name}: interests {', '.join(a.profile.research_interests)}; "
        f"affiliations {', '.join(a.profile.affiliations) if a.profile.affiliations else 'unaffiliated'}"
        for a in team.roster
    )
    return template.format(leader=team.leader.name, roster=roster)


STAGE_GOALS = {
    "topic": "agree on a single research topic the team can commit to",
    "idea": "produce strong, well-differentiated candidate research ideas",
    "check": "assess the novelty of the candidate ideas and converge on a vote",
    "abstract": "refine the abstract until all five sections are strong",
}


IDEA_SCHEMA = (
    FieldSpec("action", label="Action", required=False),
    FieldSpec("description", label="Idea"),
    FieldSpec("experiment_plan", label="Experiment"),
    FieldSpec("novelty", label="Novelty", kind="int", minimum=1, maximum=10),
    FieldSpec("feasibility", label="Feasibility", kind="int", minimum=1, maximum=10),
    FieldSpec("clarity", label="Clarity", kind="int", minimum=1, maximum=10),
)

ABSTRACT_SCHEMA = tuple(FieldSpec(name, label=_SECTION_LABELS[name]) for name in ABSTRACT_SECTIONS)


def parse_idea_response(text: str, proposer_id: str) -> tuple[Idea, bool]:
    """Parse one idea response; returns (idea, is_refinement)."""
    parsed = parse_structured(text, IDEA_SCHEMA)
    if not parsed["description"] or not parsed["experiment_plan"]:
        raise ParseError("idea description and experiment plan must be non-empty", raw=text)
    refine = parsed.get("action", "").strip().lower().startswith("refine")
    idea = Idea(
        description=parsed["description"],
        experiment_plan=parsed["experiment_plan"],
        novelty=parsed["novelty"],
        feasibility=parsed["feasibility"],
        clarity=parsed["clarity"],
        proposer_id=proposer_id,
    )
    return idea, refine


def parse_abstract_response(text: str, revision: int) -> AbstractDoc:
    parsed = parse_structured(text, ABSTRACT_SCHEMA)
    for section in ABSTRACT_SECTIONS:
        if not parsed[section]:
            raise ParseError(f"abstract section {section!r} is empty", raw=text)
    return AbstractDoc(revision=revision, **parsed)


def compute_inference_cost(team_size: int, turns_per_stage: Sequence[float]) -> float:
    """Cost proxy: team size times the total discussion turns across stages."""
    if team_size < 1:
        raise PipelineError("team size must be positive")
    if any(t < 0 for t in turns_per_stage):
        raise PipelineError("stage turn counts must be non-negative")
    return float(team_size * sum(turns_per_stage))


def selection_probabilities(
    adjacency: AdjacencyMatrix, row_index: int, excluded: set[int]
) -> tuple[list[int], np.ndarray]:
    """Candidate indices and their normalized selection probabilities.

    Uses the smoothed co-authorship row of `row_index`; the row owner and
    all excluded indices carry no mass, everything else must be strictly
    positive (the smoothing guarantee).
    """
    weights = adjacency.counts[row_index].astype(np.float64)
    candidates = [j for j in range(len(adjacency.ids)) if j != row_index and j not in excluded]
    if not candidates:
        return [], np.zeros(0)
    w = weights[candidates]
    if (w <= 0).any():
        raise PipelineError("every candidate must have strictly positive selection mass; smooth the adjacency first")
    probs = w / w.sum()
    return candidates, probs


def sample_index(candidates: list[int], probs: np.ndarray, rng: np.random.Generator) -> int:
    """Inverse-CDF draw; stable given identical probs and rng state."""
    u = rng.random()
    cum = np.cumsum(probs)
    pos = int(np.searchsorted(cum, u, side="right"))
    return candidates[min(pos, len(candidates) - 1)]


# ---------------------------------------------------------------------------
# the pipeline itself


class Pipeline:
    """One sequential end-to-end run over a fixed ecosystem and index."""

    def __init__(
        self,
        ecosystem: ResearchEcosystem,
        past_index: VectorIndex,
        templates: PromptTemplates,
        backend,
        provider,
        config: PipelineConfig,
        seed: int,
    ):
        if config.n < 2:
            raise PipelineError("a team needs at least two participants")
        if config.n > len(ecosystem.scientists):
            raise PipelineError(
                f"team size {config.n} exceeds the {len(ecosystem.scientists)} available scientists"
            )
        self.eco = ecosystem
        self.past_index = past_index
        self.templates = templates
        self.backend = backend
        self.provider = provider
        self.config = config
        self.seed = seed
        self.name_by_id = ecosystem.name_by_id
        self.transcript = Transcript()
        self.ledger = UsageLedger()
        self.flags: list[str] = []
        self.turn_counts: dict[str, int] = {"topic": 0, "idea": 0, "check": 0, "abstract": 0}

    # -- low-level helpers ---------------------------------------------------

    def _temperature(self, kind: str) -> float:
        if kind in ("vote", "review", "decision"):
            return self.config.temperature_decision
        return self.config.temperature_discussion

    def _exchange(
        self,
        agent: ScientistAgent,
        key: CallKey,
        content: str,
        *,
        kind: str = "response",
        transcript_agent: int | None = None,
        temperature_kind: str = "discussion",
    ) -> tuple[str, ChatRequest]:
        idx = key.agent if transcript_agent is None else transcript_agent
        self.transcript.record(key.stage, key.turn, idx, agent.name, "prompt", content)
        request = make_request(
            self.config.model,
            agent.system_prompt,
            content,
            self._temperature(temperature_kind),
            seed=self.config.request_seed,
        )
        text = complete(self.backend, request, key, self.ledger)
        self.transcript.record(key.stage, key.turn, idx, agent.name, kind, text)
        return text, request

    def _reprompt(
        self,
        agent: ScientistAgent,
        key: CallKey,
        request: ChatRequest,
        previous: str,
        instruction: str,
        *,
        kind: str = "response",
        transcript_agent: int | None = None,
        temperature_kind: str = "discussion",
    ) -> str:
        retry_key = key.retry()
        retry = reprompt_request(request, previous, instruction)
        idx = key.agent if transcript_agent is None else transcript_agent
        self.transcript.record(retry_key.stage, retry_key.turn, idx, agent.name, "prompt", instruction)
        text = complete(self.backend, retry, retry_key, self.ledger)
        self.transcript.record(retry_key.stage, retry_key.turn, idx, agent.name, kind, text)
        return text

    def _retrieve(self, query_text: str):
        return retrieve_papers(self.past_index, query_text, self.config.retrieval_k, self.provider)

    def _team_desc(self, team: Team) -> str:
        return describe_team(team, self.templates.team)

    def _stage_limit(self, stage: str) -> int:
        if self.config.adaptive:
            return self.config.k_max
        return getattr(self.config.turns, stage)

    def _summarize(self, team: Team, stage: str, turn: int, dialogue: list[tuple[str, str]]) -> str:
        content = compose_turn_summary_prompt(self.templates.turn_summary, turn, dialogue)
        key = CallKey(f"{stage}_summary", turn, 0)
        self.transcript.record(key.stage, turn, 0, team.leader.name, "prompt", content)
        request = make_request(
            self.config.model,
            team.leader.system_prompt,
            content,
            self._temperature("discussion"),
            seed=self.config.request_seed,
        )
        text = complete(self.backend, request, key, self.ledger)
        self.transcript.record(key.stage, turn, 0, team.leader.name, "summary", text)
        return text

    def _ask_continue(self, team: Team, stage: str, turn: int, progress: str) -> bool:
        content = compose_adaptive_prompt(self.templates.adaptive, STAGE_GOALS[stage], progress)
        text, _ = self._exchange(
            team.leader, CallKey(f"adaptive_{stage}", turn, 0), content, temperature_kind="decision"
        )
        decision = parse_continue(text)
        if decision is None:
            self.flags.append(f"adaptive_{stage}_unparseable_turn_{turn}")
            return False
        return decision

    def _maybe_guest(
        self,
        stage: str,
        turn: int,
        team: Team,
        source_text: str,
        compose_guest_prompt,
    ) -> tuple[str, str] | None:
        """Invitation mechanism: the first mentioned outsider this turn
        responds once as a transient guest; the team itself never grows."""
        mentioned = detect_mentions(source_text, self.eco.scientists, exclude_ids=team.ids)
        if not mentioned:
            return None
        profile = self.eco.profile(mentioned[0])
        guest = make_agent(profile, self.templates, self.name_by_id, is_guest=True)
        content = compose_guest_prompt()
        text, _ = self._exchange(
            guest, CallKey(f"guest_{stage}", turn, 0), content, transcript_agent=GUEST_INDEX
        )
        return guest.name, text

    # -- stage 1: collaborator selection --------------------------------------

    def pick_leader(self) -> AuthorProfile:
        if self.config.leader_id is not None:
            return self.eco.profile(self.config.leader_id)
        rng = np.random.default_rng(derive_seed(self.seed, "leader"))
        return self.eco.scientists[int(rng.integers(len(self.eco.scientists)))]

    def select_collaborators(self, leader_id: str) -> Team:
        """Sample candidates from the leader's smoothed co-authorship row
        and invite them one at a time until the team reaches size n.

        A rejected scientist is final for the run; the remaining mass is
        renormalized after every exclusion.
        """
        rng = np.random.default_rng(derive_seed(self.seed, "collab"))
        leader_profile = self.eco.profile(leader_id)
        leader_agent = make_agent(leader_profile, self.templates, self.name_by_id)
        adjacency = self.eco.adjacency
        leader_idx = adjacency.index_of(leader_id)
        members: list[AuthorProfile] = []
        excluded: set[int] = set()
        attempt = 0
        while len(members) < self.config.n - 1:
            candidates, probs = selection_probabilities(adjacency, leader_idx, excluded)
            if not candidates:
                raise InfeasibleTeamError(
                    f"candidate pool exhausted with {len(members) + 1} of {self.config.n} participants"
                )
            j = sample_index(candidates, probs, rng)
            candidate = self.eco.profile(adjacency.ids[j])
            attempt += 1
            agent = make_agent(candidate, self.templates, self.name_by_id)
            decision = decide_invitation(
                agent,
                leader_profile,
                members,
                self.backend,
                self.ledger,
                self.templates,
                self.name_by_id,
                attempt,
                self.config.model,
                self.config.temperature_decision,
                recorder=self.transcript.record,
            )
            if decision.parse_failed:
                self.flags.append(f"invitation_unparseable_attempt_{attempt}")
            excluded.add(j)
            if decision.accept:
                members.append(candidate)
        return Team(
            leader=leader_agent,
            members=tuple(make_agent(p, self.templates, self.name_by_id) for p in members),
        )

    # -- stage 2: topic discussion --------------------------------------------

    def run_topic_discussion(self, team: Team) -> str:
        """Turn-structured discussion ending in the leader's topic call."""
        team_desc = self._team_desc(team)
        state = DiscussionState(stage="topic")
        limit = self._stage_limit("topic")
        prior: list[tuple[str, str]] = []
        while True:
            state.turn += 1
            k = state.turn
            if len(state.summaries) != k - 1:
                raise PipelineError(f"summary ledger out of sync at topic turn {k}")
            prior = []
            dialogue: list[tuple[str, str]] = []
            guest_done = False
            for i, agent in enumerate(team.roster):
                content = compose_topic_prompt(team_desc, self.templates.topic, state.summaries, prior)
                text, _ = self._exchange(agent, CallKey("topic", k, i), content)
                state.responses[(k, i)] = text
                prior.append((agent.name, text))
                dialogue.append((agent.name, text))
                if self.config.invitation and not guest_done:
                    guest = self._maybe_guest(
                        "topic",
                        k,
                        team,
                        text,
                        lambda: compose_topic_prompt(team_desc, self.templates.topic, state.summaries, prior),
                    )
                    if guest is not None:
                        dialogue.append(guest)
                        guest_done = True
            if self.config.adaptive:
                state.summaries.append(self._summarize(team, "topic", k, dialogue))
                if k >= limit or not self._ask_continue(team, "topic", k, state.summaries[-1]):
                    break
            else:
                if k >= limit:
                    break
                state.summaries.append(self._summarize(team, "topic", k, dialogue))
        self.turn_counts["topic"] += state.turn
        final_content = compose_final_topic_prompt(
            self.templates.topic, state.summaries[: state.turn - 1], prior
        )
        topic, _ = self._exchange(team.leader, CallKey("topic_final", state.turn, 0), final_content)
        return topic

    # -- stage 3: idea generation ----------------------------------------------

    def run_idea_generation(self, team: Team, topic: str) -> tuple[list[Idea], Idea]:
        """Each response contributes one idea (new, or refining the one it
        was shown); keeps the three highest-confidence ideas.

        Returns (top ideas by confidence, the last scientist's idea).
        """
        state = DiscussionState(stage="idea")
        limit = self._stage_limit("idea")
        pool: list[tuple[int, Idea]] = []
        prev_idea: Idea | None = None
        prev_text: str | None = None
        last_idea: Idea | None = None
        generated = 0
        while True:
            state.turn += 1
            k = state.turn
            if len(state.summaries) != k - 1:
                raise PipelineError(f"summary ledger out of sync at idea turn {k}")
            prior: list[tuple[str, str]] = []
            dialogue: list[tuple[str, str]] = []
            guest_done = False
            for i, agent in enumerate(team.roster):
                if k == 1 and i == 0:
                    references = format_references(self._retrieve(topic))
                    content = compose_idea_prompt(self.templates.idea, topic, references, [], [])
                else:
                    references = format_references(self._retrieve(prev_text))
                    content = compose_idea_prompt(
                        self.templates.idea, topic, references, state.summaries, prior
                    )
                key = CallKey("idea", k, i)
                text, request = self._exchange(agent, key, content)
                idea = self._parse_idea_with_retry(agent, key, request, text)
                state.responses[(k, i)] = text
                prev_text = text
                prior.append((agent.name, text))
                dialogue.append((agent.name, text))
                if idea is not None:
                    parsed, refine = idea
                    generated += 1
                    if refine and prev_idea is not None:
                        pool = [(g, cand) for g, cand in pool if cand is not prev_idea]
                    pool.append((generated, parsed))
                    prev_idea = parsed
                    last_idea = parsed
                else:
                    prev_idea = None
                if self.config.invitation and not guest_done:
                    guest = self._maybe_guest(
                        "idea",
                        k,
                        team,
                        text,
                        lambda: compose_idea_prompt(
                            self.templates.idea,
                            topic,
                            format_references(self._retrieve(prev_text)),
                            state.summaries,
                            prior,
                        ),
                    )
                    if guest is not None:
                        dialogue.append(guest)
                        guest_done = True
            if self.config.adaptive:
                state.summaries.append(self._summarize(team, "idea", k, dialogue))
                if k >= limit or not self._ask_continue(team, "idea", k, state.summaries[-1]):
                    break
            else:
                if k >= limit:
                    break
                state.summaries.append(self._summarize(team, "idea", k, dialogue))
        self.turn_counts["idea"] += state.turn
        if not pool or last_idea is None:
            raise PipelineError("idea generation produced no parseable idea")
        ranked = sorted(pool, key=lambda entry: (-entry[1].confidence, -entry[1].novelty, entry[0]))
        return [idea for _, idea in ranked[:3]], last_idea

    def _parse_idea_with_retry(
        self, agent: ScientistAgent, key: CallKey, request: ChatRequest, text: str
    ) -> tuple[Idea, bool] | None:
        try:
            return parse_idea_response(text, agent.profile.id)
        except ParseError:
            retry_text = self._reprompt(
                agent,
                key,
                request,
                text,
                "Respond again using exactly the labeled format: Action, Idea, Experiment, "
                "Novelty, Feasibility, Clarity (scores are integers 1-10).",
            )
            try:
                return parse_idea_response(retry_text, agent.profile.id)
            except ParseError:
                self.flags.append(f"idea_skipped_{key.path()}")
                return None

    # -- stage 4: novelty assessment -------------------------------------------

    def run_novelty_assessment(self, team: Team, ideas: list[Idea]) -> Idea:
        """Blind vote over the candidate ideas and their retrieved related
        papers; every roster member (leader included) votes each turn, and
        votes aggregate across all turns.

        A single candidate wins immediately, with no backend call.
        """
        if not ideas:
            raise PipelineError("novelty assessment needs at least one idea")
        if len(ideas) == 1:
            return ideas[0]
        entries = []
        for j, idea in enumerate(ideas, 1):
            references = format_references(self._retrieve(idea.description))
            entries.append((j, format_idea(idea), references))
        content = compose_check_prompt(self.templates.check, entries)
        votes: Counter = Counter()
        leader_votes: list[int] = []
        limit = self._stage_limit("check")
        k = 0
        while True:
            k += 1
            for i, agent in enumerate(team.roster):
                key = CallKey("check", k, i)
                text, request = self._exchange(agent, key, content, kind="vote", temperature_kind="vote")
                choice = parse_vote(text, len(ideas))
                if choice is None:
                    retry_text = self._reprompt(
                        agent,
                        key,
                        request,
                        text,
                        f"Reply with 'CHOICE: <idea number>' (1-{len(ideas)}) and your reasoning.",
                        kind="vote",
                        temperature_kind="vote",
                    )
                    choice = parse_vote(retry_text, len(ideas))
                if choice is None:
                    self.flags.append(f"check_abstention_turn_{k}_agent_{i}")
                    continue
                votes[choice] += 1
                if i == 0:
                    leader_votes.append(choice)
            if self.config.adaptive:
                tally = ", ".join(f"idea {j}: {votes[j]} votes" for j in sorted(votes)) or "no votes yet"
                if k >= limit or not self._ask_continue(team, "check", k, tally):
                    break
            else:
                if k >= limit:
                    break
        self.turn_counts["check"] += k
        if not votes:
            self.flags.append("check_no_votes")
            return ideas[0]
        top = max(votes.values())
        tied = sorted(j for j, count in votes.items() if count == top)
        if len(tied) == 1:
            winner = tied[0]
        elif leader_votes and leader_votes[-1] in tied:
            winner = leader_votes[-1]
        else:
            winner = tied[0]
        return ideas[winner - 1]

    # -- stage 5: abstract generation -------------------------------------------

    def run_abstract_generation(
        self, team: Team, idea: Idea, seed_prompt: str | None = None, start_revision: int = 0
    ) -> AbstractDoc:
        """Leader drafts, then the roster cycles; each participant sees
        only the immediately previous abstract, never the dialogue."""
        current: AbstractDoc | None = None
        revision = start_revision
        limit = self._stage_limit("abstract")
        k = 0
        while True:
            k += 1
            for i, agent in enumerate(team.roster):
                if k == 1 and i == 0:
                    content = (
                        seed_prompt
                        if seed_prompt is not None
                        else compose_abstract_first_prompt(self.templates.abstract, format_idea(idea))
                    )
                else:
                    assert current is not None
                    content = compose_abstract_revision_prompt(
                        self.templates.abstract, self.templates.judgement, current.full_text
                    )
                key = CallKey("abstract", k, i)
                text, request = self._exchange(agent, key, content)
                try:
                    doc = parse_abstract_response(text, revision + 1)
                except ParseError:
                    retry_text = self._reprompt(
                        agent,
                        key,
                        request,
                        text,
                        "Respond again with all five labeled sections: Introduction, Objective, "
                        "Methods, Expected Results, Conclusion. Every section must be non-empty.",
                    )
                    try:
                        doc = parse_abstract_response(retry_text, revision + 1)
                    except ParseError:
                        if current is None:
                            raise PipelineError("the first abstract draft was unusable after a re-prompt")
                        self.flags.append(f"abstract_carried_forward_{key.path()}")
                        doc = None
                if doc is not None:
                    current = doc
                    revision += 1
            if self.config.adaptive:
                assert current is not None
                if k >= limit or not self._ask_continue(team, "abstract", k, current.full_text):
                    break
            else:
                if k >= limit:
                    break
        self.turn_counts["abstract"] += k
        assert current is not None
        return current

    # -- self-review ---------------------------------------------------------------

    def run_self_review(self, team: Team, abstract: AbstractDoc, round_index: int) -> SelfReviewOutcome:
        """Leader's post-hoc novelty check of the finished abstract; an
        unparseable verdict counts as a pass, flagged."""
        references = format_references(self._retrieve(abstract.full_text))
        content = compose_self_review_prompt(self.templates.check, abstract.full_text, references)
        text, _ = self._exchange(
            team.leader, CallKey("review", round_index, 0), content, kind="review", temperature_kind="review"
        )
        verdict = parse_novelty_verdict(text)
        if verdict is None:
            self.flags.append(f"self_review_unparseable_round_{round_index}")
            return SelfReviewOutcome(round=round_index, verdict="pass", review_text=text, parse_failed=True)
        return SelfReviewOutcome(round=round_index, verdict="pass" if verdict else "revise", review_text=text)

    # -- full run ---------------------------------------------------------------

    def run(self, team: Team | None = None) -> PipelineResult:
        """Execute every stage; self-review failures trigger one revision
        pass, a second failure discards the abstract and regenerates from
        the idea stage at most `max_regenerations` times."""
        if team is None:
            leader = self.pick_leader()
            team = self.select_collaborators(leader.id)
        topic = self.run_topic_discussion(team)
        outcomes: list[SelfReviewOutcome] = []
        regenerations = 0
        review_round = 0
        while True:
            ideas, last_idea = self.run_idea_generation(team, topic)
            if self.config.novelty_assessment:
                idea = self.run_novelty_assessment(team, ideas)
            else:
                # without the assessment stage the pipeline keeps the idea
                # from the last scientist rather than a ranked list
                idea = last_idea
                ideas = [last_idea]
            abstract = self.run_abstract_generation(team, idea)
            if not self.config.self_review:
                break
            review_round += 1
            first = self.run_self_review(team, abstract, review_round)
            outcomes.append(first)
            if first.verdict == "pass":
                break
            references = format_references(self._retrieve(abstract.full_text))
            seed_prompt = compose_post_review_prompt(
                self.templates.abstract,
                self.templates.judgement,
                first.review_text,
                references,
                abstract.full_text,
            )
            abstract = self.run_abstract_generation(
                team, idea, seed_prompt=seed_prompt, start_revision=abstract.revision
            )
            review_round += 1
            second = self.run_self_review(team, abstract, review_round)
            outcomes.append(second)
            if second.verdict == "pass":
                break
            second.verdict = "discard"
            if regenerations < self.config.max_regenerations:
                regenerations += 1
                self.flags.append(f"abstract_discarded_regeneration_{regenerations}")
                continue
            self.flags.append("self_review_exhausted_best_effort_accept")
            break
        return PipelineResult(
            seed=self.seed,
            team={
                "leader": {"id": team.leader.profile.id, "name": team.leader.name},
                "members": [{"id": a.profile.id, "name": a.name} for a in team.members],
            },
            topic=topic,
            ideas=ideas,
            idea=idea,
            abstract=abstract,
            transcript=self.transcript,
            usage=self.ledger,
            turn_counts=self.turn_counts,
            self_review_outcomes=outcomes,
            flags=self.flags,
        )
