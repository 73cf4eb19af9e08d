"""Command-line entry point: one binary, one subcommand per pipeline stage.

Exit codes: 0 on success, 1 on operational errors (unreachable endpoints,
bad inputs, invalid config), 2 on usage errors.
"""

from __future__ import annotations

import asyncio
import csv
import json
from collections.abc import Iterator, Sequence
from contextlib import contextmanager
from dataclasses import asdict
from pathlib import Path
from typing import Annotated, Any

import httpx
import typer
from loguru import logger
from pydantic import TypeAdapter

from src.adapters.incoming.cli.manifest import ManifestRecorder
from src.adapters.outgoing.persistence.batches import export_batches, write_summaries
from src.adapters.outgoing.persistence.jsonl import (
    RewardRecord,
    load_dataset,
    load_graph,
    load_rewards,
    load_trajectories,
    write_dataset,
    write_rewards,
    write_trajectories,
)
from src.adapters.outgoing.tokenizers import load_tokenizer
from src.config import dependencies
from src.config.logging import setup_logging
from src.config.settings import load_config
from src.core.domain.config import RunConfig
from src.core.domain.exceptions import ConfigValidationError, DomainError, ToolFailure
from src.core.domain.models import MultimodalQuery, RewardBreakdown, Trajectory
from src.core.ports.incoming.use_cases import RewardUseCase
from src.core.usecases.dataset_forge import ForgeReport
from src.core.usecases.evaluation import EvalReport
from src.core.usecases.prompts import prompt_hashes
from src.core.usecases.tool_env import ToolEnvironment

PROG = "mm-search-agent"

app = typer.Typer(
    name=PROG,
    help="Rollouts, rewards, GRPO export, dataset construction and evaluation "
    "for a multimodal search agent.",
    no_args_is_help=True,
    add_completion=False,
)
tools_app = typer.Typer(help="Tool backend maintenance.", no_args_is_help=True)
cache_app = typer.Typer(help="Tool cache maintenance.", no_args_is_help=True)
app.add_typer(tools_app, name="tools")
app.add_typer(cache_app, name="cache")

ConfigOpt = Annotated[
    Path | None,
    typer.Option(
        "--config", "-c", help="JSON run config.", exists=True, dir_okay=False
    ),
]
DatasetOpt = Annotated[
    Path,
    typer.Option(
        "--dataset", help="Dataset JSON Lines file.", exists=True, dir_okay=False
    ),
]
OutOpt = Annotated[Path, typer.Option("--out", "-o", help="Output file.")]

_EVAL_REPORT = TypeAdapter(EvalReport)


@contextmanager
def _operational(command: str) -> Iterator[None]:
    """Turn operational failures into a structured ERROR event and exit code 1."""
    try:
        yield
    except ConfigValidationError as e:
        logger.bind(command=command, fields=e.fields).error(
            "CLI: {} has an invalid configuration: {}", command, e
        )
        raise typer.Exit(code=1) from e
    except (DomainError, httpx.HTTPError, OSError, ValueError) as e:
        logger.bind(command=command, error_type=type(e).__name__).error(
            "CLI: {} failed: {}", command, e
        )
        raise typer.Exit(code=1) from e


def _echo_json(data: Any) -> None:
    typer.echo(json.dumps(data, indent=2, sort_keys=True, default=str))


def _index(dataset: Sequence[MultimodalQuery]) -> dict[str, MultimodalQuery]:
    return {q.id: q for q in dataset}


def _check_known(trajectories: Sequence[Trajectory], queries: dict[str, Any]) -> None:
    unknown = sorted({t.query_id for t in trajectories} - queries.keys())
    if unknown:
        msg = f"{len(unknown)} trajectories reference unknown queries: {unknown[:5]}"
        raise ValueError(msg)


@app.callback()
def root(
    log_level: Annotated[
        str | None, typer.Option("--log-level", help="Console log level.")
    ] = None,
    log_file: Annotated[
        str | None,
        typer.Option("--log-file", help="JSON log file; empty string disables it."),
    ] = None,
) -> None:
    """Configure logging before any subcommand runs."""
    setup_logging(log_level=log_level, log_file=log_file)


# ── rollout ───────────────────────────────────────────────────────


@app.command()
def rollout(
    dataset: DatasetOpt,
    out: OutOpt,
    config: ConfigOpt = None,
    policy_endpoint: Annotated[
        str | None, typer.Option("--policy-endpoint", help="Policy base URL.")
    ] = None,
    group_size: Annotated[
        int | None, typer.Option("--group-size", min=1, help="Rollouts per query.")
    ] = None,
    max_turns: Annotated[
        int | None, typer.Option("--max-turns", min=1, help="Turn budget.")
    ] = None,
) -> None:
    """Run G rollouts per dataset item and write trajectories."""
    with _operational("rollout"):
        run_config, fingerprint = load_config(
            config,
            overrides={
                "policy": {"endpoint": policy_endpoint},
                "rollout": {"group_size": group_size, "max_turns": max_turns},
            },
        )
        recorder = ManifestRecorder("rollout", fingerprint)
        recorder.add_inputs({"dataset": dataset, "config": config})
        queries = load_dataset(dataset)
        tools = dependencies.build_tool_environment(run_config)
        service = dependencies.build_rollout_service(run_config, tools=tools)
        groups = asyncio.run(service.run_many(queries))
        trajectories = [t for group in groups for t in group]
        write_trajectories(out, trajectories)
        terminations: dict[str, int] = {}
        for t in trajectories:
            key = t.terminated.value if t.terminated is not None else "none"
            terminations[key] = terminations.get(key, 0) + 1
        recorder.write(
            out,
            cache=tools.cache.stats(),
            counters={"trajectories": len(trajectories), "terminations": terminations},
        )
        logger.info("CLI: wrote {} trajectories to {}", len(trajectories), out)


# ── reward ────────────────────────────────────────────────────────


async def score_all(
    service: RewardUseCase,
    trajectories: Sequence[Trajectory],
    queries: dict[str, MultimodalQuery],
    max_concurrency: int,
) -> list[RewardRecord]:
    """Score every trajectory; tool and judge failures are excluded, not penalized.

    Raises:
        ToolFailure: The first judge failure, when no trajectory could be scored
    """
    slots = asyncio.Semaphore(max_concurrency)
    failures: list[ToolFailure] = []

    async def one(t: Trajectory) -> RewardRecord:
        if t.is_environment_fault:
            return RewardRecord(t.query_id, t.sample_index, None, "tool_failure")
        async with slots:
            try:
                reward = await service.score(t, queries[t.query_id])
            except ToolFailure as e:
                logger.error(
                    "CLI: judging {}#{} failed: {}", t.query_id, t.sample_index, e
                )
                failures.append(e)
                return RewardRecord(t.query_id, t.sample_index, None, "judge_failure")
        return RewardRecord(t.query_id, t.sample_index, reward)

    records = list(await asyncio.gather(*(one(t) for t in trajectories)))
    if failures and all(r.reward is None for r in records):
        raise failures[0]
    return records


@app.command()
def reward(
    trajectories: Annotated[
        Path, typer.Option("--trajectories", exists=True, dir_okay=False)
    ],
    dataset: DatasetOpt,
    out: OutOpt,
    config: ConfigOpt = None,
    judge_endpoint: Annotated[
        str | None, typer.Option("--judge-endpoint", help="Judge base URL.")
    ] = None,
    audit: Annotated[
        bool, typer.Option("--audit", help="Keep judge transcripts in the output.")
    ] = False,
) -> None:
    """Score trajectories with the composite reward."""
    with _operational("reward"):
        run_config, fingerprint = load_config(
            config, overrides={"judge": {"endpoint": judge_endpoint}}
        )
        recorder = ManifestRecorder("reward", fingerprint)
        recorder.add_inputs(
            {"trajectories": trajectories, "dataset": dataset, "config": config}
        )
        queries = _index(load_dataset(dataset))
        runs = load_trajectories(trajectories)
        _check_known(runs, queries)
        service = dependencies.build_reward_service(run_config)
        records = asyncio.run(
            score_all(service, runs, queries, run_config.eval.max_concurrency)
        )
        write_rewards(out, records, audit=audit)
        scored = [r.reward.total for r in records if r.reward is not None]
        recorder.write(
            out,
            counters={
                "scored": len(scored),
                "excluded": len(records) - len(scored),
                "mean_total": sum(scored) / len(scored) if scored else 0.0,
                "judge_calls": service.judge_calls,
            },
        )


# ── train-export ──────────────────────────────────────────────────


def match_rewards(
    trajectories: Sequence[Trajectory], records: Sequence[RewardRecord]
) -> list[RewardBreakdown | None]:
    """Reward of each trajectory by (query id, sample index); None when missing."""
    by_key = {(r.query_id, r.sample_index): r.reward for r in records}
    return [by_key.get((t.query_id, t.sample_index)) for t in trajectories]


@app.command("train-export")
def train_export(
    trajectories: Annotated[
        Path, typer.Option("--trajectories", exists=True, dir_okay=False)
    ],
    rewards: Annotated[Path, typer.Option("--rewards", exists=True, dir_okay=False)],
    dataset: DatasetOpt,
    out: OutOpt,
    config: ConfigOpt = None,
    tokenizer_spec: Annotated[
        Path | None,
        typer.Option(
            "--tokenizer-spec",
            exists=True,
            dir_okay=False,
            help="Tokenizer spec JSON; the built-in regex tokenizer when omitted.",
        ),
    ] = None,
) -> None:
    """Build GRPO batches with loss masks and advantages."""
    with _operational("train-export"):
        run_config, fingerprint = load_config(config)
        recorder = ManifestRecorder("train-export", fingerprint)
        recorder.add_inputs(
            {
                "trajectories": trajectories,
                "rewards": rewards,
                "dataset": dataset,
                "config": config,
                "tokenizer_spec": tokenizer_spec,
            }
        )
        queries = _index(load_dataset(dataset))
        runs = load_trajectories(trajectories)
        _check_known(runs, queries)
        tokenizer = load_tokenizer(tokenizer_spec)
        service = dependencies.build_export_service(run_config, tokenizer)
        batches, summaries = service.build_groups(
            runs, match_rewards(runs, load_rewards(rewards)), queries
        )
        export_batches(out, batches, tokenizer=tokenizer.name)
        summary_path = out.with_name(out.stem + ".summary.jsonl")
        write_summaries(summary_path, summaries)
        recorder.write(
            out,
            counters={
                "groups": len(batches),
                "members": sum(len(b.members) for b in batches),
                "excluded": sum(s.excluded for s in summaries),
                "summary": str(summary_path),
            },
        )


# ── build-dataset ─────────────────────────────────────────────────


@app.command("build-dataset")
def build_dataset(
    graph: Annotated[Path, typer.Option("--graph", exists=True, dir_okay=False)],
    entities: Annotated[Path, typer.Option("--entities", exists=True, dir_okay=False)],
    out: OutOpt,
    config: ConfigOpt = None,
    corpus: Annotated[
        Path | None,
        typer.Option("--corpus", exists=True, help="Corpus file or directory."),
    ] = None,
    solver_endpoint: Annotated[str | None, typer.Option("--solver-endpoint")] = None,
    judge_endpoint: Annotated[str | None, typer.Option("--judge-endpoint")] = None,
    seed: Annotated[int, typer.Option("--seed", help="Balancing seed.")] = 0,
) -> None:
    """Generate, validate, label and balance multi-hop questions."""
    with _operational("build-dataset"):
        tools_override: dict[str, Any] = {}
        if corpus is not None:
            tools_override = {
                "text_backend": "local_corpus",
                "corpus_path": str(corpus),
            }
        run_config, fingerprint = load_config(
            config,
            overrides={
                "tools": tools_override,
                "judge": {"endpoint": judge_endpoint},
                "forge": {"solver": {"endpoint": solver_endpoint}},
            },
        )
        recorder = ManifestRecorder("build-dataset", fingerprint)
        recorder.add_inputs(
            {"graph": graph, "entities": entities, "corpus": corpus, "config": config}
        )
        g = load_graph(graph, entities)
        forge = dependencies.build_dataset_forge(run_config)
        report = ForgeReport()
        items = asyncio.run(forge.build(g, seed, report))
        write_dataset(out, items)
        counters = asdict(report)
        counters["labels"] = dict(report.labels)
        counters["seed"] = seed
        recorder.write(out, counters=counters)


# ── eval ──────────────────────────────────────────────────────────


def eval_fingerprint(run_config: RunConfig, fingerprint: str) -> dict[str, Any]:
    """Provenance block of an evaluation report."""
    tools = run_config.tools
    return {
        "config": fingerprint,
        "policy_endpoint": run_config.policy.endpoint,
        "policy_model": run_config.policy.model,
        "expert_backend": run_config.expert.backend,
        "expert_endpoint": run_config.expert.endpoint,
        "expert_model": run_config.expert.model,
        "judge_backend": run_config.judge.backend,
        "judge_endpoint": run_config.judge.endpoint,
        "judge_model": run_config.judge.model,
        "image_backend": tools.image_backend,
        "text_backend": tools.text_backend,
        "image_top_images": tools.image_top_images,
        "image_top_titles": tools.image_top_titles,
        "text_top_k": tools.text_top_k,
        "first_stage_k": tools.first_stage_k,
        "enabled_tools": [tool.value for tool in tools.enabled_tools],
        "prompts": prompt_hashes(run_config.judge.rubric_version),
    }


def write_csv_row(path: Path, report: EvalReport) -> None:
    """One row shaped like a results table: method, backbone, dataset, accuracy."""
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(
            ["method", "backbone", "dataset", "accuracy", "ci_low", "ci_high", "n"]
        )
        overall = report.overall
        writer.writerow(
            [
                report.method,
                report.backbone,
                report.dataset,
                f"{overall.accuracy:.4f}",
                f"{overall.ci_low:.4f}",
                f"{overall.ci_high:.4f}",
                overall.n,
            ]
        )


@app.command("eval")
def evaluate(
    dataset: DatasetOpt,
    out: OutOpt,
    config: ConfigOpt = None,
    policy_endpoint: Annotated[str | None, typer.Option("--policy-endpoint")] = None,
    csv_out: Annotated[
        Path | None, typer.Option("--csv", help="Also write a one-row CSV table.")
    ] = None,
    trajectories_out: Annotated[
        Path | None, typer.Option("--trajectories-out", help="Keep the trajectories.")
    ] = None,
    no_retrieval: Annotated[
        bool, typer.Option("--no-retrieval", help="Skip retrieval scores.")
    ] = False,
) -> None:
    """Evaluate the agent: judged accuracy, tool usage and retrieval scores."""
    with _operational("eval"):
        run_config, fingerprint = load_config(
            config, overrides={"policy": {"endpoint": policy_endpoint}}
        )
        recorder = ManifestRecorder("eval", fingerprint)
        recorder.add_inputs({"dataset": dataset, "config": config})
        queries = load_dataset(dataset)
        tools = dependencies.build_tool_environment(run_config)
        rollouts = dependencies.build_rollout_service(run_config, tools=tools)
        service = dependencies.build_evaluation_service(run_config, rollouts=rollouts)
        report, trajectories = asyncio.run(
            service.evaluate(
                queries,
                dataset_name=dataset.stem,
                fingerprint=eval_fingerprint(run_config, fingerprint),
                with_retrieval=not no_retrieval,
            )
        )
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_bytes(_EVAL_REPORT.dump_json(report, indent=2) + b"\n")
        if csv_out is not None:
            write_csv_row(csv_out, report)
        if trajectories_out is not None:
            write_trajectories(trajectories_out, trajectories)
        recorder.write(
            out,
            cache=tools.cache.stats(),
            counters={
                "accuracy": report.overall.accuracy,
                "n": report.overall.n,
                "environment_faults": report.environment_faults,
            },
        )


# ── tools ─────────────────────────────────────────────────────────


async def warm_cache(
    tools: ToolEnvironment, queries: Sequence[MultimodalQuery], max_concurrency: int
) -> dict[str, int]:
    """Fetch every item's image search and question text search into the cache."""
    slots = asyncio.Semaphore(max_concurrency)
    counts = {"image": 0, "text": 0, "failed": 0}

    async def one(query: MultimodalQuery) -> None:
        async with slots:
            for kind, fetch in (
                ("image", lambda: tools.image_search(query.image)),
                ("text", lambda: tools.text_search(query.question)),
            ):
                try:
                    await fetch()
                    counts[kind] += 1
                except ToolFailure as e:
                    counts["failed"] += 1
                    logger.warning(
                        "CLI: warm-cache {} failed for {}: {}", kind, query.id, e
                    )

    await asyncio.gather(*(one(q) for q in queries))
    return counts


@tools_app.command("warm-cache")
def tools_warm_cache(dataset: DatasetOpt, config: ConfigOpt = None) -> None:
    """Pre-populate the tool cache for a dataset."""
    with _operational("tools warm-cache"):
        run_config, _ = load_config(config)
        tools = dependencies.build_tool_environment(run_config)
        counts = asyncio.run(
            warm_cache(tools, load_dataset(dataset), run_config.rollout.max_concurrency)
        )
        stats = tools.stats()
        _echo_json(
            {
                **counts,
                "cache_hits": stats.cache_hits,
                "cache_misses": stats.cache_misses,
                "backend_calls": dict(stats.backend_calls),
            }
        )


@tools_app.command("health")
def tools_health(config: ConfigOpt = None) -> None:
    """Probe every backend; exit 1 when any is unhealthy."""
    with _operational("tools health"):
        run_config, _ = load_config(config)
        tools = dependencies.build_tool_environment(run_config)
        statuses = asyncio.run(tools.health_check())
        _echo_json({name: asdict(status) for name, status in statuses.items()})
    if not all(status.healthy for status in statuses.values()):
        raise typer.Exit(code=1)


# ── cache ─────────────────────────────────────────────────────────


@cache_app.command("stats")
def cache_stats(config: ConfigOpt = None) -> None:
    """Entry count of the configured tool cache."""
    with _operational("cache stats"):
        run_config, _ = load_config(config)
        cache = dependencies.build_cache(run_config.tools)
        _echo_json(
            {"cache_dir": run_config.tools.cache_dir, **asdict(cache.stats())}
        )


@cache_app.command("clear")
def cache_clear(
    config: ConfigOpt = None,
    expired_only: Annotated[
        bool,
        typer.Option(
            "--expired-only",
            help="Only remove entries older than tools.web_cache_ttl_s.",
        ),
    ] = False,
) -> None:
    """Delete cached tool responses."""
    with _operational("cache clear"):
        run_config, _ = load_config(config)
        cache = dependencies.build_cache(run_config.tools)
        older_than = run_config.tools.web_cache_ttl_s if expired_only else None
        removed = cache.clear(older_than)
        _echo_json({"removed": removed})


def main(argv: Sequence[str] | None = None) -> int:
    """Run the CLI and return its exit code."""
    try:
        app(args=list(argv) if argv is not None else None, prog_name=PROG)
    except SystemExit as e:
        if e.code is None:
            return 0
        return e.code if isinstance(e.code, int) else 1
    return 0
