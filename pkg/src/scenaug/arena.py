"""Blinded pairwise-comparison arena.

The arena serves side-by-side renders of the same scenario produced by two
different models, records rater votes through a hidden left/right mapping,
and exposes a live Elo leaderboard. Persistence is an append-only NDJSON
vote log replayed at startup.
"""

from __future__ import annotations

import hashlib
import json
import logging
import random
import threading
import time
import uuid
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Literal, Mapping

from fastapi import FastAPI, HTTPException, Query
from fastapi.responses import FileResponse, JSONResponse, Response
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel

from .errors import (
    DuplicateVoteError,
    SchemaError,
    UnknownIdError,
    UnknownMatchupError,
    ValidationError,
)
from .evaluation import (
    ELO_INITIAL,
    EloEntry,
    VoteOutcome,
    VoteRecord,
    compute_rank,
    elo_table,
    load_vote_log,
    vote_to_line,
)

logger = logging.getLogger(__name__)

_OUTCOMES = ("LEFT", "RIGHT", "TIE")


@dataclass(frozen=True)
class MatchupPayload:
    """What a rater sees: blinded image urls, never model identities."""

    matchup_id: str
    scenario_id: str
    left_image_url: str
    right_image_url: str
    instruction_text: str


@dataclass(frozen=True)
class _Pending:
    left_model: str
    right_model: str
    scenario_id: str
    rater_id: str


class Arena:
    """Arena state: registered models, pending matchups, and the vote log.

    ``models`` maps each model name to a directory of ``<scenario_id>.png``
    renders. Two models are comparable on the scenarios both directories
    cover. The log file is created on first use and replayed when it already
    exists, so votes survive restarts.
    """

    def __init__(
        self,
        models: Mapping[str, str | Path],
        log_path: str | Path,
        *,
        instructions: Mapping[str, str] | None = None,
        seed: int = 0,
        bootstrap_rounds: int = 200,
        bootstrap_seed: int = 0,
    ) -> None:
        if bootstrap_rounds < 100:
            raise ValidationError("bootstrap_rounds must be at least 100")
        self._models: dict[str, frozenset[str]] = {}
        self._images: dict[str, Path] = {}
        self._image_ids: dict[tuple[str, str], str] = {}
        salt = f"arena:{seed}"
        for name in sorted(models):
            if not name:
                raise ValidationError("model names must be non-empty")
            directory = Path(models[name])
            if not directory.is_dir():
                raise ValidationError(f"render directory {directory} does not exist")
            scenarios = frozenset(p.stem for p in directory.glob("*.png"))
            self._models[name] = scenarios
            for scenario in scenarios:
                digest = hashlib.sha256(f"{salt}:{name}:{scenario}".encode()).hexdigest()[:32]
                self._images[digest] = directory / f"{scenario}.png"
                self._image_ids[(name, scenario)] = digest
        self._instructions = dict(instructions or {})
        self._bootstrap_rounds = bootstrap_rounds
        self._bootstrap_seed = bootstrap_seed
        self._rng = random.Random(seed)
        self._lock = threading.Lock()
        self._pending: dict[str, _Pending] = {}
        # (rater, model_a, model_b) -> votes cast, driving least-voted scheduling
        self._pair_counts: dict[tuple[str, str, str], int] = {}

        self._log_path = Path(log_path)
        self._log_path.parent.mkdir(parents=True, exist_ok=True)
        self._votes = load_vote_log(self._log_path) if self._log_path.exists() else []
        self._resolved = {vote.matchup_id for vote in self._votes}
        for vote in self._votes:
            self._bump(vote.rater_id, vote.model_a, vote.model_b)
        self._log = self._log_path.open("a", encoding="utf-8")
        if self._votes:
            logger.info("replayed %d votes from %s", len(self._votes), self._log_path)

    def close(self) -> None:
        self._log.close()

    @property
    def model_names(self) -> tuple[str, ...]:
        return tuple(sorted(self._models))

    @property
    def vote_count(self) -> int:
        with self._lock:
            return len(self._votes)

    def hidden_mapping(self, matchup_id: str) -> tuple[str, str]:
        """The (left_model, right_model) behind a pending matchup.

        Server-side only; exposing this to raters would defeat the blinding.
        """
        with self._lock:
            pending = self._pending.get(matchup_id)
        if pending is None:
            raise UnknownMatchupError(f"no pending matchup {matchup_id!r}")
        return pending.left_model, pending.right_model

    def _bump(self, rater_id: str, model_a: str, model_b: str) -> None:
        key = (rater_id, model_a, model_b)
        self._pair_counts[key] = self._pair_counts.get(key, 0) + 1

    def _pairs(self) -> list[tuple[str, str, frozenset[str]]]:
        names = sorted(self._models)
        pairs = []
        for i, a in enumerate(names):
            for b in names[i + 1 :]:
                shared = self._models[a] & self._models[b]
                if shared:
                    pairs.append((a, b, shared))
        return pairs

    def next_matchup(self, rater_id: str) -> MatchupPayload | None:
        """A fresh blinded matchup, or None when no pair is comparable.

        The (pair, scenario) unit is drawn uniformly among the pairs this
        rater has voted on least; left/right assignment is a coin flip.
        """
        if not rater_id:
            raise ValidationError("rater_id must be non-empty")
        with self._lock:
            pairs = self._pairs()
            if not pairs:
                return None
            counts = [self._pair_counts.get((rater_id, a, b), 0) for a, b, _ in pairs]
            low = min(counts)
            units = [
                (a, b, scenario)
                for (a, b, shared), count in zip(pairs, counts)
                if count == low
                for scenario in sorted(shared)
            ]
            a, b, scenario = units[self._rng.randrange(len(units))]
            left, right = (a, b) if self._rng.random() < 0.5 else (b, a)
            matchup_id = uuid.uuid4().hex[:16]
            self._pending[matchup_id] = _Pending(left, right, scenario, rater_id)
        return MatchupPayload(
            matchup_id=matchup_id,
            scenario_id=scenario,
            left_image_url=f"/images/{self._image_ids[(left, scenario)]}.png",
            right_image_url=f"/images/{self._image_ids[(right, scenario)]}.png",
            instruction_text=self._instructions.get(scenario, ""),
        )

    def record_vote(self, matchup_id: str, outcome: str, rater_id: str) -> VoteRecord:
        """Resolve a LEFT/RIGHT/TIE vote through the hidden mapping and log it.

        The stored record carries the two models in fixed alphabetical order,
        so identical preferences produce identical records regardless of how
        the coin flip landed.
        """
        if outcome not in _OUTCOMES:
            raise ValidationError(f"outcome must be one of {', '.join(_OUTCOMES)}")
        with self._lock:
            if matchup_id in self._resolved:
                raise DuplicateVoteError(f"matchup {matchup_id!r} was already voted on")
            pending = self._pending.get(matchup_id)
            if pending is None or pending.rater_id != rater_id:
                raise UnknownMatchupError(f"no pending matchup {matchup_id!r} for this rater")
            model_a, model_b = sorted((pending.left_model, pending.right_model))
            if outcome == "TIE":
                resolved = VoteOutcome.TIE
            else:
                winner = pending.left_model if outcome == "LEFT" else pending.right_model
                resolved = VoteOutcome.A_WINS if winner == model_a else VoteOutcome.B_WINS
            vote = VoteRecord(
                matchup_id=matchup_id,
                model_a=model_a,
                model_b=model_b,
                scenario_id=pending.scenario_id,
                outcome=resolved,
                rater_id=rater_id,
                timestamp=time.time(),
            )
            self._log.write(vote_to_line(vote) + "\n")
            self._log.flush()
            self._votes.append(vote)
            self._resolved.add(matchup_id)
            del self._pending[matchup_id]
            self._bump(rater_id, model_a, model_b)
        return vote

    def leaderboard(self) -> list[EloEntry]:
        """Ratings, intervals, ranks and vote counts over the current log.

        Registered models that no vote mentions yet are listed at the initial
        rating with a zero-width interval.
        """
        with self._lock:
            votes = list(self._votes)
        if not votes:
            return [
                EloEntry(
                    model=name,
                    rating=ELO_INITIAL,
                    ci_low=ELO_INITIAL,
                    ci_high=ELO_INITIAL,
                    votes=0,
                    rank=1,
                )
                for name in sorted(self._models)
            ]
        entries = elo_table(votes, rounds=self._bootstrap_rounds, seed=self._bootstrap_seed)
        seen = {entry.model for entry in entries}
        missing = [name for name in sorted(self._models) if name not in seen]
        if missing:
            entries = entries + [
                EloEntry(
                    model=name,
                    rating=ELO_INITIAL,
                    ci_low=ELO_INITIAL,
                    ci_high=ELO_INITIAL,
                    votes=0,
                )
                for name in missing
            ]
            entries.sort(key=lambda e: (-e.rating, e.model))
            entries = compute_rank(entries)
        return entries

    def image_path(self, image_id: str) -> Path:
        path = self._images.get(image_id)
        if path is None:
            raise UnknownIdError(f"no image {image_id!r}")
        return path


def arena_from_manifest(manifest_path: str | Path, log_path: str | Path, **kwargs) -> Arena:
    """Build an arena from a JSON manifest.

    Shape: {"models": {name: render_dir}, "instructions": {scenario_id: text},
    "seed": 0}. Relative render directories resolve against the manifest's
    own directory.
    """
    path = Path(manifest_path)
    try:
        raw = json.loads(path.read_text("utf-8"))
    except json.JSONDecodeError as exc:
        raise SchemaError(f"manifest is not valid JSON: {exc}") from None
    if not isinstance(raw, dict) or not isinstance(raw.get("models"), dict):
        raise SchemaError("manifest must be an object with a 'models' mapping")
    models = {}
    for name, directory in raw["models"].items():
        if not isinstance(name, str) or not isinstance(directory, str):
            raise SchemaError("'models' must map model names to directory strings")
        resolved = Path(directory)
        if not resolved.is_absolute():
            resolved = path.parent / resolved
        models[name] = resolved
    instructions = raw.get("instructions", {})
    if not isinstance(instructions, dict) or not all(
        isinstance(k, str) and isinstance(v, str) for k, v in instructions.items()
    ):
        raise SchemaError("'instructions' must map scenario ids to strings")
    seed = raw.get("seed", 0)
    if not isinstance(seed, int):
        raise SchemaError("'seed' must be an integer")
    kwargs.setdefault("seed", seed)
    return Arena(models, log_path, instructions=instructions, **kwargs)


class _VoteBody(BaseModel):
    matchup_id: str
    outcome: Literal["LEFT", "RIGHT", "TIE"]
    rater: str


def create_app(arena: Arena, static_dir: str | Path | None = None) -> FastAPI:
    """The HTTP face of an arena; mount a UI bundle at / via static_dir."""
    app = FastAPI(docs_url=None, redoc_url=None, openapi_url=None)

    @app.get("/api/matchup")
    def api_matchup(rater: str = Query(min_length=1)) -> Response:
        payload = arena.next_matchup(rater)
        if payload is None:
            return Response(status_code=204)
        return JSONResponse(asdict(payload))

    @app.post("/api/vote", status_code=204)
    def api_vote(body: _VoteBody) -> Response:
        try:
            arena.record_vote(body.matchup_id, body.outcome, body.rater)
        except UnknownMatchupError as exc:
            raise HTTPException(status_code=404, detail=str(exc)) from None
        except DuplicateVoteError as exc:
            raise HTTPException(status_code=409, detail=str(exc)) from None
        return Response(status_code=204)

    @app.get("/api/leaderboard")
    def api_leaderboard() -> JSONResponse:
        return JSONResponse({"entries": [asdict(entry) for entry in arena.leaderboard()]})

    @app.get("/images/{image_id}.png")
    def api_image(image_id: str) -> FileResponse:
        try:
            path = arena.image_path(image_id)
        except UnknownIdError:
            raise HTTPException(status_code=404, detail="unknown image") from None
        return FileResponse(path, media_type="image/png")

    if static_dir is not None:
        app.mount("/", StaticFiles(directory=static_dir, html=True), name="ui")
    return app


def serve(
    arena: Arena,
    *,
    host: str = "127.0.0.1",
    port: int = 8750,
    static_dir: str | Path | None = None,
) -> None:
    """Run the arena under uvicorn until interrupted."""
    import uvicorn

    logger.info("arena listening on %s:%d with models %s", host, port, arena.model_names)
    uvicorn.run(create_app(arena, static_dir=static_dir), host=host, port=port, log_level="warning")
