"""Command-line surface: ingest, index, run, sweep, eval, report.

Exit codes: 0 success, 2 configuration error, 3 I/O error, 4 input data
error, 5 pipeline/runtime failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .config import Config, load_config
from .corpus import ResearchEcosystem, build_ecosystem, ingest_corpus
from .errors import ConfigError, CorpusError, MetricError, SciteamError
from .experiments import MetricsContext, SweepSpec, run_sweep, write_sweep_outputs
from .llm import HttpChatBackend, ScriptedBackend, UsageLedger
from .metrics import database_means, llm_review, score_abstract
from .pipeline import Pipeline
from .templates import load_templates
from .util import stable_json
from .vecstore import (
    HttpEmbeddingProvider,
    MockEmbeddingProvider,
    VectorIndex,
    build_knowledge_bank,
    build_paper_index,
    embed_text,
)

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_DATA = 4
EXIT_PIPELINE = 5

PAST_INDEX = "past_index.json"
CON_INDEX = "con_index.json"
BANK_INDEX = "bank_index.json"
ECOSYSTEM = "ecosystem.json"


def make_provider(cfg: Config):
    if cfg.embedding.kind == "mock":
        return MockEmbeddingProvider(dims=cfg.embedding.dims, seed=cfg.embedding.seed, model_id=cfg.embedding.model)
    return HttpEmbeddingProvider(cfg.embedding.base_url, cfg.embedding.model, dims=None)


def make_backend(cfg: Config):
    if cfg.chat.kind in ("scripted", "mock"):
        if not cfg.chat.script:
            raise ConfigError("chat.script: a script file is required for the scripted backend")
        return ScriptedBackend.from_file(cfg.chat.script)
    return HttpChatBackend(cfg.chat.base_url)


def _apply_overrides(cfg: Config, args: argparse.Namespace) -> Config:
    if getattr(args, "seed", None) is not None:
        cfg.master_seed = args.seed
    if getattr(args, "backend", None):
        cfg.chat.kind = "scripted" if args.backend == "mock" else args.backend
    if getattr(args, "script", None):
        cfg.chat.script = args.script
    if getattr(args, "adaptive", False):
        cfg.pipeline.adaptive = True
    if getattr(args, "no_self_review", False):
        cfg.pipeline.self_review = False
    if getattr(args, "no_invitation", False):
        cfg.pipeline.invitation = False
    if getattr(args, "no_novelty_assessment", False):
        cfg.pipeline.novelty_assessment = False
    return cfg


def cmd_ingest(cfg: Config) -> int:
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    papers, authors, ingest_report = ingest_corpus(cfg.dataset.papers, cfg.dataset.authors)
    eco, build_report = build_ecosystem(
        papers,
        authors,
        y_start=cfg.years.start,
        y_bound=cfg.years.bound,
        y_end=cfg.years.end,
        past_min_citations=cfg.filters.past_min_citations,
        con_min_citations=cfg.filters.con_min_citations,
        min_papers=cfg.filters.min_papers,
        min_coauthors=cfg.filters.min_coauthors,
        mask_seed=cfg.master_seed,
    )
    eco.save(out / ECOSYSTEM)
    report = {"ingest": ingest_report.to_json(), "build": build_report.to_json()}
    (out / "build_report.json").write_text(stable_json(report, indent=2) + "\n", encoding="utf-8")
    print(f"ecosystem: {len(eco.past_papers)} past papers, {len(eco.contemporary_papers)} contemporary, "
          f"{len(eco.scientists)} scientists -> {out / ECOSYSTEM}")
    return EXIT_OK


def cmd_index(cfg: Config) -> int:
    out = Path(cfg.output_dir)
    eco = ResearchEcosystem.load(out / ECOSYSTEM)
    provider = make_provider(cfg)
    build_paper_index(eco.past_papers, provider).save(out / PAST_INDEX)
    build_paper_index(eco.contemporary_papers, provider).save(out / CON_INDEX)
    build_knowledge_bank(eco.scientists, provider, eco.name_by_id).index.save(out / BANK_INDEX)
    print(f"indexes written to {out}: {PAST_INDEX}, {CON_INDEX}, {BANK_INDEX}")
    return EXIT_OK


def _load_run_context(cfg: Config):
    out = Path(cfg.output_dir)
    eco = ResearchEcosystem.load(out / ECOSYSTEM)
    past = VectorIndex.load(out / PAST_INDEX, expect_model_id=cfg.embedding.model)
    con = VectorIndex.load(out / CON_INDEX, expect_model_id=cfg.embedding.model)
    return eco, past, con


def cmd_run(cfg: Config) -> int:
    eco, past, con = _load_run_context(cfg)
    provider = make_provider(cfg)
    backend = make_backend(cfg)
    templates = load_templates()
    seed = cfg.master_seed
    pipe = Pipeline(eco, past, templates, backend, provider, cfg.pipeline, seed)
    result = pipe.run()

    run_dir = Path(cfg.output_dir) / "runs" / f"run_{seed}"
    run_dir.mkdir(parents=True, exist_ok=True)
    result.transcript.save(run_dir / "transcript.jsonl")
    (run_dir / "result.json").write_text(stable_json(result.to_json(), indent=2) + "\n", encoding="utf-8")

    means = database_means(past, con, cfg.metrics.sample_size, cfg.metrics.k, cfg.master_seed)
    vec = embed_text(provider, result.abstract.full_text)
    scores = score_abstract(vec, past, con, means, cfg.metrics.k)
    score_doc = scores.to_json()
    if cfg.metrics.llm_review:
        review = llm_review(result.abstract.full_text, backend, UsageLedger(), templates.review, cfg.chat.model)
        score_doc["review_score"] = review.overall
    (run_dir / "scores.json").write_text(stable_json(score_doc, indent=2) + "\n", encoding="utf-8")
    print(f"run complete: topic={result.topic[:60]!r} cost={result.inference_cost()} -> {run_dir}")
    return EXIT_OK


def cmd_sweep(cfg: Config) -> int:
    eco, past, con = _load_run_context(cfg)
    provider = make_provider(cfg)
    backend = make_backend(cfg)
    templates = load_templates()
    means = database_means(past, con, cfg.metrics.sample_size, cfg.metrics.k, cfg.master_seed)
    ctx = MetricsContext(
        provider=provider,
        past_index=past,
        con_index=con,
        means=means,
        k=cfg.metrics.k,
        llm_review_enabled=cfg.metrics.llm_review,
        review_template=templates.review,
        model=cfg.chat.model,
    )
    spec = SweepSpec(
        dimension=cfg.sweep.dimension,
        values=cfg.sweep.values,
        runs_per_cell=cfg.sweep.runs_per_cell,
        base_config=cfg.pipeline,
        master_seed=cfg.master_seed,
    )
    cells = run_sweep(spec, eco, templates, backend, ctx, workers=cfg.workers)
    csv_path, report_path = write_sweep_outputs(cells, cfg.output_dir)
    print(f"sweep complete: {sum(len(c.rows) for c in cells)} rows -> {csv_path}, {report_path}")
    return EXIT_OK


def cmd_eval(cfg: Config, abstracts_path: str) -> int:
    eco, past, con = _load_run_context(cfg)
    provider = make_provider(cfg)
    means = database_means(past, con, cfg.metrics.sample_size, cfg.metrics.k, cfg.master_seed)
    rows = []
    with open(abstracts_path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                doc_id = obj["id"]
                text = obj["text"]
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise CorpusError(f"{abstracts_path}:{lineno}: expected {{id, text}} objects: {exc}") from exc
            vec = embed_text(provider, text)
            scores = score_abstract(vec, past, con, means, cfg.metrics.k)
            rows.append({"id": doc_id, **scores.to_json()})
    out = Path(cfg.output_dir) / "eval_scores.json"
    out.write_text(stable_json(rows, indent=2) + "\n", encoding="utf-8")
    for row in rows:
        print(f"{row['id']}: hd={row['hd']:.4f} cd={row['cd']:.4f} ci={row['ci']:.4f} on={row['on']}")
    print(f"{len(rows)} abstracts scored -> {out}")
    return EXIT_OK


def cmd_report(csv_path: str) -> int:
    import csv as csv_mod

    from .experiments import METRIC_COLUMNS, aggregate

    with open(csv_path, "r", encoding="utf-8", newline="") as fh:
        reader = csv_mod.DictReader(fh)
        if reader.fieldnames is None:
            raise CorpusError(f"{csv_path}: empty CSV")
        rows = list(reader)
    if not rows:
        raise CorpusError(f"{csv_path}: no data rows")
    cells: dict[str, list[dict]] = {}
    for row in rows:
        cells.setdefault(row["cell_id"], []).append(row)
    header = ["cell"] + [f"mean_{c}" for c in METRIC_COLUMNS]
    print("\t".join(header))
    for cell_id in cells:
        means, _ = aggregate(cells[cell_id])
        print("\t".join([cell_id] + [f"{means[c]:.6g}" if c in means else "-" for c in METRIC_COLUMNS]))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sciteam", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="path to the YAML/JSON config file")
        p.add_argument("--seed", type=int, default=None, help="override master_seed")
        p.add_argument("--backend", choices=["http", "mock"], default=None, help="override chat backend kind")
        p.add_argument("--script", default=None, help="script file for the mock backend")

    p_ingest = sub.add_parser("ingest", help="build and persist the research ecosystem")
    common(p_ingest)

    p_index = sub.add_parser("index", help="embed abstracts and profiles into vector indexes")
    common(p_index)

    p_run = sub.add_parser("run", help="one end-to-end pipeline run with scores")
    common(p_run)
    p_run.add_argument("--adaptive", action="store_true", help="leader decides per-stage turn counts")
    p_run.add_argument("--no-self-review", action="store_true")
    p_run.add_argument("--no-invitation", action="store_true")
    p_run.add_argument("--no-novelty-assessment", action="store_true")

    p_sweep = sub.add_parser("sweep", help="run the configured sweep and write sweep.csv")
    common(p_sweep)

    p_eval = sub.add_parser("eval", help="score externally produced abstracts")
    common(p_eval)
    p_eval.add_argument("--abstracts", required=True, help="JSONL file of {id, text} records")

    p_report = sub.add_parser("report", help="print per-cell means from a sweep CSV")
    p_report.add_argument("--csv", required=True, help="path to sweep.csv")
    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "report":
            return cmd_report(args.csv)
        cfg = _apply_overrides(load_config(args.config), args)
        if args.command == "ingest":
            return cmd_ingest(cfg)
        if args.command == "index":
            return cmd_index(cfg)
        if args.command == "run":
            return cmd_run(cfg)
        if args.command == "sweep":
            return cmd_sweep(cfg)
        if args.command == "eval":
            return cmd_eval(cfg, args.abstracts)
        parser.error(f"unknown command {args.command!r}")
    except ConfigError as exc:
        log.error("configuration error: %s", exc)
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        log.error("missing file: %s", exc)
        return EXIT_IO
    except OSError as exc:
        log.error("I/O error: %s", exc)
        return EXIT_IO
    except (CorpusError, MetricError) as exc:
        log.error("data error: %s", exc)
        return EXIT_DATA
    except SciteamError as exc:
        log.error("pipeline error: %s", exc)
        return EXIT_PIPELINE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
