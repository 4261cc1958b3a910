"""Command-line entry point tying the library together.

Exit codes: 0 accepted, 2 iteration cap reached, 1 pipeline failure,
64 usage or malformed input, 74 I/O failure.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import click
import numpy as np

from .arena import arena_from_manifest, serve
from .errors import ScenaugError, SchemaError, ValidationError
from .evaluation import displacement_error, elo_table, format_elo_table, load_vote_log
from .llm import BackendConfig, ChatBackend, HttpChatBackend, ScriptedBackend
from .orchestrator import (
    PipelineConfig,
    PipelineOutcome,
    PipelineStatus,
    run_batch,
    run_pipeline,
    write_transcript,
)
from .prompts import Strategy
from .render import rasterize, render_bev
from .scenario import Scenario, apply_modification, load_scenario, save_scenario
from .simloop import SimConfig, derive_route, driving_score, run_closed_loop, score_summary, trace_to_json

logger = logging.getLogger(__name__)

EXIT_ACCEPTED = 0
EXIT_FAILED = 1
EXIT_MAX_ITERATIONS = 2
EXIT_USAGE = 64
EXIT_IO = 74

_STATUS_CODES = {
    PipelineStatus.ACCEPTED: EXIT_ACCEPTED,
    PipelineStatus.MAX_ITERATIONS: EXIT_MAX_ITERATIONS,
    PipelineStatus.FAILED: EXIT_FAILED,
}


def backend_from_spec(spec: str) -> ChatBackend:
    """Build a backend from a CLI spec.

    ``scripted:<dir>`` replays numbered scripts in order, and
    ``scripted-match:<dir>`` picks entries by their EXPECT headers, which
    keeps parallel batches deterministic. Anything else is read as a JSON
    config file for the HTTP backend; the API key stays in the environment
    variable the config names.
    """
    if spec.startswith("scripted:"):
        return ScriptedBackend.from_dir(spec[len("scripted:") :])
    if spec.startswith("scripted-match:"):
        return ScriptedBackend.from_dir(spec[len("scripted-match:") :], mode="match")
    path = Path(spec)
    try:
        raw = json.loads(path.read_text("utf-8"))
    except json.JSONDecodeError as exc:
        raise SchemaError(f"backend config is not valid JSON: {exc}") from None
    if not isinstance(raw, dict):
        raise SchemaError("backend config must be a JSON object")
    try:
        config = BackendConfig(**raw)
    except TypeError as exc:
        raise SchemaError(f"bad backend config: {exc}") from None
    return HttpChatBackend(config)


def _pipeline_config(
    strategy: str,
    backend: str,
    qa_backend: str | None,
    vlm_backend: str | None,
    max_qa_iterations: int,
    max_tool_calls: int,
) -> PipelineConfig:
    try:
        chosen = Strategy[strategy.upper()]
    except KeyError:
        raise SchemaError(f"unknown strategy {strategy!r}") from None
    return PipelineConfig(
        sma_backend=backend_from_spec(backend),
        strategy=chosen,
        qa_backend=backend_from_spec(qa_backend) if qa_backend else None,
        vlm_backend=backend_from_spec(vlm_backend) if vlm_backend else None,
        max_qa_iterations=max_qa_iterations,
        max_tool_calls=max_tool_calls,
    )


def _read_scenario(path: Path) -> Scenario:
    return load_scenario(path.read_bytes())


def _write_outcome(scenario: Scenario, outcome: PipelineOutcome, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    write_transcript(outcome, out / f"{scenario.scenario_id}.transcript.txt")
    if outcome.result is not None:
        modified = apply_modification(scenario, outcome.result)
        (out / f"{scenario.scenario_id}.modified.json").write_bytes(save_scenario(modified))


@dataclass(frozen=True)
class RunManifest:
    """Batch description: scenario files, instructions, strategy, backends."""

    items: tuple[tuple[Path, str], ...]
    strategy: str
    backend: str
    qa_backend: str | None = None
    vlm_backend: str | None = None
    max_qa_iterations: int = 3
    max_tool_calls: int = 8
    out_dir: Path | None = None

    def __post_init__(self) -> None:
        if not self.items:
            raise SchemaError("manifest needs at least one item")
        for path, instruction in self.items:
            if not path.is_file():
                raise SchemaError(f"scenario file {path} does not exist")
            if not instruction.strip():
                raise SchemaError(f"item {path} has an empty instruction")


def load_run_manifest(path: str | Path) -> RunManifest:
    """Parse a batch manifest; relative paths resolve against its directory."""
    path = Path(path)
    try:
        raw = json.loads(path.read_text("utf-8"))
    except json.JSONDecodeError as exc:
        raise SchemaError(f"manifest is not valid JSON: {exc}") from None
    if not isinstance(raw, dict) or not isinstance(raw.get("items"), list):
        raise SchemaError("manifest must be an object with an 'items' list")
    if not isinstance(raw.get("backend"), str):
        raise SchemaError("manifest needs a 'backend' spec string")
    base = path.parent

    def _resolve(value: str) -> Path:
        p = Path(value)
        return p if p.is_absolute() else base / p

    items = []
    for entry in raw["items"]:
        if (
            not isinstance(entry, dict)
            or not isinstance(entry.get("scenario"), str)
            or not isinstance(entry.get("instruction"), str)
        ):
            raise SchemaError("each item needs 'scenario' and 'instruction' strings")
        items.append((_resolve(entry["scenario"]), entry["instruction"]))
    backend = raw["backend"]
    # scripted dirs in the manifest are manifest-relative too
    for prefix in ("scripted:", "scripted-match:"):
        if backend.startswith(prefix):
            backend = prefix + str(_resolve(backend[len(prefix) :]))
    out_dir = raw.get("out")
    return RunManifest(
        items=tuple(items),
        strategy=str(raw.get("strategy", "otm")),
        backend=backend,
        qa_backend=raw.get("qa_backend"),
        vlm_backend=raw.get("vlm_backend"),
        max_qa_iterations=int(raw.get("max_qa_iterations", 3)),
        max_tool_calls=int(raw.get("max_tool_calls", 8)),
        out_dir=_resolve(out_dir) if isinstance(out_dir, str) else None,
    )


@click.group()
def cli() -> None:
    """Scenario augmentation toolkit."""


@cli.command()
@click.argument("scenario_file", type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.argument("instruction")
@click.option("--strategy", default="otm", show_default=True, help="otm, fc, tqa or vqa.")
@click.option("--backend", required=True, help="Backend spec for the modifier.")
@click.option("--qa-backend", default=None, help="Backend spec for the reviewer.")
@click.option("--vlm-backend", default=None, help="Backend spec for the image answerer.")
@click.option("--max-qa-iters", default=3, show_default=True, type=click.IntRange(min=1))
@click.option("--max-tool-calls", default=8, show_default=True, type=click.IntRange(min=0))
@click.option(
    "--out",
    default="out",
    show_default=True,
    type=click.Path(file_okay=False, path_type=Path),
)
def modify(
    scenario_file: Path,
    instruction: str,
    strategy: str,
    backend: str,
    qa_backend: str | None,
    vlm_backend: str | None,
    max_qa_iters: int,
    max_tool_calls: int,
    out: Path,
) -> int:
    """Apply one natural-language edit to a scenario."""
    scenario = _read_scenario(scenario_file)
    cfg = _pipeline_config(strategy, backend, qa_backend, vlm_backend, max_qa_iters, max_tool_calls)
    outcome = run_pipeline(scenario, instruction, cfg)
    _write_outcome(scenario, outcome, out)
    click.echo(f"{scenario.scenario_id}: {outcome.status.value}")
    return _STATUS_CODES[outcome.status]


@cli.command()
@click.argument("scenario_file", type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option("--modified", multiple=True, help="Agent ids to highlight; repeatable.")
@click.option("--png", default=0, show_default=True, type=click.IntRange(min=0), help="Also rasterize at N pixels.")
@click.option(
    "--out",
    default="out",
    show_default=True,
    type=click.Path(file_okay=False, path_type=Path),
)
def render(scenario_file: Path, modified: tuple[str, ...], png: int, out: Path) -> int:
    """Render a scenario to SVG, optionally also to PNG."""
    scenario = _read_scenario(scenario_file)
    vector = render_bev(scenario, modified_ids=frozenset(modified))
    out.mkdir(parents=True, exist_ok=True)
    svg_path = out / f"{scenario.scenario_id}.svg"
    svg_path.write_bytes(vector)
    click.echo(str(svg_path))
    if png:
        png_path = out / f"{scenario.scenario_id}.png"
        png_path.write_bytes(rasterize(vector, png))
        click.echo(str(png_path))
    return 0


@cli.group("eval")
def eval_group() -> None:
    """Evaluation reports."""


@eval_group.command()
@click.argument("generated_dir", type=click.Path(exists=True, file_okay=False, path_type=Path))
@click.argument("reference_dir", type=click.Path(exists=True, file_okay=False, path_type=Path))
def displacement(generated_dir: Path, reference_dir: Path) -> int:
    """Per-scenario and aggregate placement error between two corpora."""
    files = sorted(generated_dir.glob("*.json"))
    if not files:
        raise click.UsageError(f"no *.json scenarios in {generated_dir}")
    distances: list[float] = []
    for file in files:
        counterpart = reference_dir / file.name
        if not counterpart.is_file():
            raise click.UsageError(f"reference corpus is missing {file.name}")
        generated = _read_scenario(file)
        reference = _read_scenario(counterpart)
        report = displacement_error(generated.agents, reference.agents)
        distances.extend(distance for _, _, distance in report.pairs)
        mean = "n/a" if report.mean_m is None else f"{report.mean_m:.3f} m"
        click.echo(
            f"{generated.scenario_id}: mean {mean}, matched {report.matched}, "
            f"unmatched {report.unmatched_generated}+{report.unmatched_reference}"
        )
    aggregate = "n/a" if not distances else f"{float(np.mean(distances)):.3f} m"
    click.echo(f"aggregate mean displacement: {aggregate}")
    return 0


@eval_group.command()
@click.argument("vote_log", type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option("--rounds", default=1000, show_default=True, type=click.IntRange(min=100))
@click.option("--seed", default=0, show_default=True, type=int)
def elo(vote_log: Path, rounds: int, seed: int) -> int:
    """Leaderboard table from a vote log."""
    votes = load_vote_log(vote_log)
    click.echo(format_elo_table(elo_table(votes, rounds=rounds, seed=seed)))
    return 0


@cli.command()
@click.argument("scenario_dir", type=click.Path(exists=True, file_okay=False, path_type=Path))
@click.option(
    "--out",
    default=None,
    type=click.Path(file_okay=False, path_type=Path),
    help="Also dump one trace JSON per scenario.",
)
def simulate(scenario_dir: Path, out: Path | None) -> int:
    """Closed-loop driving scores for every scenario in a directory."""
    files = sorted(scenario_dir.glob("*.json"))
    if not files:
        raise click.UsageError(f"no *.json scenarios in {scenario_dir}")
    cfg = SimConfig()
    scores = {}
    for file in files:
        scenario = _read_scenario(file)
        route = derive_route(scenario)
        trace = run_closed_loop(scenario, cfg)
        scores[scenario.scenario_id] = driving_score(trace, route, cfg)
        if out is not None:
            out.mkdir(parents=True, exist_ok=True)
            (out / f"{scenario.scenario_id}.trace.json").write_text(
                trace_to_json(trace) + "\n", encoding="utf-8"
            )
    click.echo(score_summary(scores))
    return 0


@cli.group()
def arena() -> None:
    """Preference arena service."""


@arena.command("serve")
@click.argument("manifest", type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8750, show_default=True, type=click.IntRange(1, 65535))
@click.option(
    "--log",
    default=None,
    type=click.Path(dir_okay=False, path_type=Path),
    help="Vote log path; defaults to votes.ndjson beside the manifest.",
)
@click.option(
    "--static",
    default=None,
    type=click.Path(exists=True, file_okay=False, path_type=Path),
    help="UI bundle directory mounted at /.",
)
def arena_serve(manifest: Path, host: str, port: int, log: Path | None, static: Path | None) -> int:
    """Run the arena over a models manifest."""
    log_path = log if log is not None else manifest.parent / "votes.ndjson"
    instance = arena_from_manifest(manifest, log_path)
    serve(instance, host=host, port=port, static_dir=static)
    return 0


@cli.command()
@click.argument("manifest", type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option("--parallelism", default=1, show_default=True, type=click.IntRange(min=1))
@click.option(
    "--out",
    default=None,
    type=click.Path(file_okay=False, path_type=Path),
    help="Output directory; overrides the manifest's own.",
)
def batch(manifest: Path, parallelism: int, out: Path | None) -> int:
    """Run every item of a manifest through the pipeline."""
    run = load_run_manifest(manifest)
    cfg = _pipeline_config(
        run.strategy,
        run.backend,
        run.qa_backend,
        run.vlm_backend,
        run.max_qa_iterations,
        run.max_tool_calls,
    )
    items = [(_read_scenario(path), instruction) for path, instruction in run.items]
    outcomes = run_batch(items, cfg, parallelism=parallelism)
    out_dir = out if out is not None else run.out_dir
    for (scenario, _), outcome in zip(items, outcomes):
        suffix = f" ({outcome.error})" if outcome.error else ""
        click.echo(f"{scenario.scenario_id}: {outcome.status.value}{suffix}")
        if out_dir is not None and outcome.result is not None:
            _write_outcome(scenario, outcome, out_dir)
    statuses = {outcome.status for outcome in outcomes}
    if PipelineStatus.FAILED in statuses:
        return EXIT_FAILED
    if PipelineStatus.MAX_ITERATIONS in statuses:
        return EXIT_MAX_ITERATIONS
    return EXIT_ACCEPTED


def main(argv: Sequence[str] | None = None) -> int:
    """Run the CLI and translate every error class to its exit code."""
    try:
        code = cli.main(
            args=list(argv) if argv is not None else None,
            prog_name="scenaug",
            standalone_mode=False,
        )
    except click.exceptions.Exit as exc:
        return int(exc.exit_code)
    except click.UsageError as exc:
        click.echo(f"error: {exc.format_message()}", err=True)
        return EXIT_USAGE
    except (SchemaError, ValidationError) as exc:
        click.echo(f"error: {exc}", err=True)
        return EXIT_USAGE
    except OSError as exc:
        click.echo(f"i/o error: {exc}", err=True)
        return EXIT_IO
    except ScenaugError as exc:
        click.echo(f"error: {type(exc).__name__}: {exc}", err=True)
        return EXIT_FAILED
    return int(code) if isinstance(code, int) else EXIT_ACCEPTED
