import csv
import io

import numpy as np
import pytest

from sciteam.errors import InfeasibleTeamError, SciteamError
from sciteam.experiments import (
    CSV_COLUMNS,
    MetricsContext,
    SweepSpec,
    aggregate,
    compose_team_with_diversity,
    compose_team_with_freshness,
    count_fresh_members,
    count_unique_primary_tags,
    run_sweep,
    sweep_csv,
)
from sciteam.llm import ScriptedBackend
from sciteam.metrics import database_means
from sciteam.pipeline import PipelineConfig, StageTurns
from sciteam.vecstore import build_paper_index

from helpers import build_script, manual_ecosystem


@pytest.fixture()
def collab_graph_ecosystem():
    # leader a0000 is linked to 1..3; scientists 4..9 have no links at all
    n = 10
    raw = np.zeros((n, n), dtype=int)
    for j in (1, 2, 3):
        raw[0, j] = raw[j, 0] = 2
    raw[1, 2] = raw[2, 1] = 1
    return manual_ecosystem(raw)


@pytest.fixture()
def tagged_ecosystem():
    # tag multiset: t0 x3 (leader included), t1 x2, t2 x2, t3 x2, then singles
    tags = [
        ["t0"], ["t0"], ["t0"],
        ["t1"], ["t1"],
        ["t2"], ["t2"],
        ["t3"], ["t3"],
        ["t4"], ["t5"], ["t6"], ["t7"], ["t8"], ["t9"], ["t10"],
    ]
    raw = np.zeros((len(tags), len(tags)), dtype=int)
    return manual_ecosystem(raw, interests=tags)


class TestFreshnessComposer:
    def test_zero_freshness(self, collab_graph_ecosystem, templates):
        eco = collab_graph_ecosystem
        team = compose_team_with_freshness(eco, "a0000", 4, 0.0, seed=3, templates=templates)
        member_ids = [a.profile.id for a in team.members]
        assert count_fresh_members(member_ids, "a0000", eco) == 0

    def test_full_freshness(self, collab_graph_ecosystem, templates):
        eco = collab_graph_ecosystem
        team = compose_team_with_freshness(eco, "a0000", 4, 1.0, seed=3, templates=templates)
        member_ids = [a.profile.id for a in team.members]
        assert count_fresh_members(member_ids, "a0000", eco) == 3
        # full freshness means zero raw adjacency to every other selection
        raw = eco.raw_adjacency
        for mid in member_ids:
            i = raw.index_of(mid)
            assert raw.counts[i, raw.index_of("a0000")] == 0

    def test_half_freshness_exact_count(self, collab_graph_ecosystem, templates):
        eco = collab_graph_ecosystem
        team = compose_team_with_freshness(eco, "a0000", 5, 0.5, seed=9, templates=templates)
        member_ids = [a.profile.id for a in team.members]
        assert count_fresh_members(member_ids, "a0000", eco) == 2  # round(0.5 * 4)

    def test_deterministic_given_seed(self, collab_graph_ecosystem, templates):
        eco = collab_graph_ecosystem
        a = compose_team_with_freshness(eco, "a0000", 5, 0.5, seed=4, templates=templates)
        b = compose_team_with_freshness(eco, "a0000", 5, 0.5, seed=4, templates=templates)
        assert [x.profile.id for x in a.members] == [x.profile.id for x in b.members]

    def test_infeasible_target_named(self, collab_graph_ecosystem, templates):
        eco = collab_graph_ecosystem
        # 8 fresh members needed, only 6 unlinked scientists exist
        with pytest.raises(InfeasibleTeamError):
            compose_team_with_freshness(eco, "a0000", 9, 1.0, seed=1, templates=templates)

    def test_fraction_out_of_range(self, collab_graph_ecosystem, templates):
        with pytest.raises(InfeasibleTeamError):
            compose_team_with_freshness(collab_graph_ecosystem, "a0000", 4, 1.5, seed=1, templates=templates)


class TestDiversityComposer:
    @pytest.mark.parametrize("n,fraction,expected_unique", [(4, 0.0, 0), (4, 1.0, 4), (8, 0.5, 4), (8, 0.25, 2)])
    def test_exact_unique_counts(self, tagged_ecosystem, templates, n, fraction, expected_unique):
        eco = tagged_ecosystem
        team = compose_team_with_diversity(eco, "a0000", n, fraction, seed=2, templates=templates)
        profiles = [a.profile for a in team.roster]
        assert count_unique_primary_tags(profiles) == expected_unique
        assert team.size == n

    def test_single_non_unique_is_mathematically_infeasible(self, tagged_ecosystem, templates):
        # n=4 at 0.75 asks for exactly one shared-tag participant
        with pytest.raises(InfeasibleTeamError):
            compose_team_with_diversity(tagged_ecosystem, "a0000", 4, 0.75, seed=2, templates=templates)

    def test_deterministic_given_seed(self, tagged_ecosystem, templates):
        a = compose_team_with_diversity(tagged_ecosystem, "a0000", 6, 0.5, seed=8, templates=templates)
        b = compose_team_with_diversity(tagged_ecosystem, "a0000", 6, 0.5, seed=8, templates=templates)
        assert [x.profile.id for x in a.members] == [x.profile.id for x in b.members]

    def test_checker_counts_by_hand(self):
        eco = manual_ecosystem(np.zeros((4, 4), dtype=int), interests=[["a"], ["a"], ["b"], ["c"]])
        assert count_unique_primary_tags(eco.scientists) == 2
        assert count_unique_primary_tags(eco.scientists[:2]) == 0


def _sweep_fixture(small_ecosystem, provider, templates, values, dimension="team_size", runs=2, turns=1):
    past = build_paper_index(small_ecosystem.past_papers, provider)
    con = build_paper_index(small_ecosystem.contemporary_papers, provider)
    means = database_means(past, con, sample_size=100, k=3)
    ctx = MetricsContext(provider=provider, past_index=past, con_index=con, means=means, k=3)
    base = PipelineConfig(n=2, turns=StageTurns.uniform(turns), leader_id="a0000")
    script = {}
    for value in values:
        n = int(value) if dimension == "team_size" else base.n
        k = int(value) if dimension == "turns" else turns
        script.update(build_script(n=n, turns=StageTurns.uniform(k)))
    spec = SweepSpec(dimension=dimension, values=list(values), runs_per_cell=runs, base_config=base, master_seed=7)
    return spec, ctx, ScriptedBackend(script)


class TestSweep:
    def test_two_by_two_deterministic_csv(self, small_ecosystem, provider, templates):
        spec, ctx, backend = _sweep_fixture(small_ecosystem, provider, templates, [2, 3])
        cells1 = run_sweep(spec, small_ecosystem, templates, backend, ctx)
        cells2 = run_sweep(spec, small_ecosystem, templates, backend, ctx)
        csv1, csv2 = sweep_csv(cells1), sweep_csv(cells2)
        assert csv1 == csv2
        assert len(cells1) == 2
        assert all(len(c.rows) == 2 for c in cells1)

    def test_csv_column_set_exact(self, small_ecosystem, provider, templates):
        spec, ctx, backend = _sweep_fixture(small_ecosystem, provider, templates, [2])
        cells = run_sweep(spec, small_ecosystem, templates, backend, ctx)
        reader = csv.reader(io.StringIO(sweep_csv(cells)))
        assert tuple(next(reader)) == CSV_COLUMNS

    def test_cell_means_match_row_recomputation(self, small_ecosystem, provider, templates):
        spec, ctx, backend = _sweep_fixture(small_ecosystem, provider, templates, [2, 3], runs=3)
        cells = run_sweep(spec, small_ecosystem, templates, backend, ctx)
        parsed = list(csv.DictReader(io.StringIO(sweep_csv(cells))))
        for cell in cells:
            rows = [r for r in parsed if r["cell_id"] == cell.cell_id]
            for col in ("hd", "cd", "ci", "on", "cost"):
                values = [float(r[col]) for r in rows if r[col] != ""]
                assert cell.means[col] == pytest.approx(sum(values) / len(values), abs=1e-12)

    def test_seed_isolation_across_value_lists(self, small_ecosystem, provider, templates):
        spec_a, ctx, backend = _sweep_fixture(small_ecosystem, provider, templates, [2, 3])
        spec_b, _, backend_b = _sweep_fixture(small_ecosystem, provider, templates, [2])
        cells_a = run_sweep(spec_a, small_ecosystem, templates, backend, ctx)
        cells_b = run_sweep(spec_b, small_ecosystem, templates, backend_b, ctx)
        seeds_a = [r["seed"] for r in cells_a[0].rows]
        seeds_b = [r["seed"] for r in cells_b[0].rows]
        assert seeds_a == seeds_b

    def test_pattern_dimension_costs(self, small_ecosystem, provider, templates):
        past = build_paper_index(small_ecosystem.past_papers, provider)
        con = build_paper_index(small_ecosystem.contemporary_papers, provider)
        means = database_means(past, con, sample_size=100, k=3)
        ctx = MetricsContext(provider=provider, past_index=past, con_index=con, means=means, k=3)
        base = PipelineConfig(n=2, turns=StageTurns.uniform(2), leader_id="a0000", k_max=3)
        script = build_script(n=2, turns=StageTurns.uniform(2))
        script.update(
            build_script(n=2, adaptive=True, k_max=3, adaptive_stops={"topic": 1, "idea": 2, "check": 1, "abstract": 1})
        )
        spec = SweepSpec(
            dimension="pattern", values=["fixed", "adaptive"], runs_per_cell=1, base_config=base, master_seed=3
        )
        cells = run_sweep(spec, small_ecosystem, templates, ScriptedBackend(script), ctx)
        fixed_row = cells[0].rows[0]
        adaptive_row = cells[1].rows[0]
        assert float(fixed_row["cost"]) == 2 * (2 + 2 + 2 + 2)
        assert float(adaptive_row["cost"]) == 2 * (1 + 2 + 1 + 1)

    def test_fixed_pattern_four_by_five_costs_80_per_row(self, small_ecosystem, provider, templates):
        past = build_paper_index(small_ecosystem.past_papers, provider)
        con = build_paper_index(small_ecosystem.contemporary_papers, provider)
        means = database_means(past, con, sample_size=100, k=3)
        ctx = MetricsContext(provider=provider, past_index=past, con_index=con, means=means, k=3)
        base = PipelineConfig(n=4, turns=StageTurns.uniform(5), leader_id="a0000")
        script = build_script(n=4, turns=StageTurns.uniform(5))
        spec = SweepSpec(dimension="pattern", values=["fixed"], runs_per_cell=2, base_config=base, master_seed=5)
        cells = run_sweep(spec, small_ecosystem, templates, ScriptedBackend(script), ctx)
        assert all(float(r["cost"]) == 80.0 for r in cells[0].rows)

    def test_failed_cell_marked_incomplete(self, small_ecosystem, provider, templates):
        spec, ctx, backend = _sweep_fixture(small_ecosystem, provider, templates, [2, 3])
        # drop every key team size 3 needs beyond size 2's script
        broken = {k: v for k, v in backend.script.items() if "/2" not in k or not k.startswith("topic/")}
        broken = {k: v for k, v in broken.items() if k != "invite/2/0"}
        cells = run_sweep(spec, small_ecosystem, templates, ScriptedBackend(broken), ctx)
        ok_cell = next(c for c in cells if c.cell_id == "2")
        bad_cell = next(c for c in cells if c.cell_id == "3")
        assert not ok_cell.incomplete
        assert bad_cell.incomplete
        assert bad_cell.failures == 2

    def test_unknown_dimension_rejected(self):
        with pytest.raises(SciteamError):
            SweepSpec(dimension="tempo", values=[1])

    def test_ablation_values_validated(self, small_ecosystem, provider, templates):
        spec, ctx, backend = _sweep_fixture(small_ecosystem, provider, templates, [2])
        spec.dimension = "ablation"
        spec.values = ["nonsense"]
        with pytest.raises(SciteamError):
            run_sweep(spec, small_ecosystem, templates, backend, ctx)

    def test_workers_parallel_same_csv(self, small_ecosystem, provider, templates):
        spec, ctx, backend = _sweep_fixture(small_ecosystem, provider, templates, [2, 3], runs=2)
        serial = sweep_csv(run_sweep(spec, small_ecosystem, templates, backend, ctx, workers=1))
        parallel = sweep_csv(run_sweep(spec, small_ecosystem, templates, backend, ctx, workers=4))
        assert serial == parallel


class TestAggregate:
    def test_mean_and_std(self):
        rows = [
            {"hd": 1.0, "cd": 2.0, "ci": 3.0, "on": 1.5, "review_score": "", "cost": 8},
            {"hd": 3.0, "cd": 2.0, "ci": 5.0, "on": 7.5, "review_score": "", "cost": 8},
        ]
        means, stds = aggregate(rows)
        assert means["hd"] == 2.0
        assert means["on"] == 4.5
        assert stds["cd"] == 0.0
        assert stds["hd"] == pytest.approx(np.std([1.0, 3.0], ddof=1), abs=1e-12)
        assert "review_score" not in means

    def test_empty_rows(self):
        means, stds = aggregate([])
        assert means == {} and stds == {}
