"""A blinded preference arena session, end to end and offline.

Two "models" answer the same instruction: one parks the vehicle exactly
where asked, the other drops it in the oncoming lane. Both scenes are
rendered to PNG, registered in the arena, and a simulated rater who spots
the sloppy placement 85% of the time casts 60 votes. The rater only ever
sees hashed image ids, never model names; the leaderboard still separates
the models cleanly.
"""

from __future__ import annotations

import random
import tempfile
from pathlib import Path

from scenaug.arena import Arena
from scenaug.evaluation import format_elo_table
from scenaug.fixtures import single_lane_scenario
from scenaug.render import rasterize, render_bev
from scenaug.scenario import ModAction, ModificationDict, ModificationResult, agent_from_vector, apply_modification

INSTRUCTION = "add a parked vehicle 21.4m ahead of the ego, slightly left of center"


def _edited_scene(y: float):
    edit = ModificationResult(
        insights="Single eastbound lane.",
        summary="Park one vehicle ahead of the ego.",
        modification_dicts=(
            ModificationDict(
                action=ModAction.ADD, modified_agent="Agent2", rationale="parked vehicle"
            ),
        ),
        calculations=f"x = 21.4, y = {y}.",
        modified_vectors=(
            agent_from_vector("Agent2", ["VEHICLE", 21.4, y, 0.0, 2.0, 4.5, 0.0, "Lane1"]),
        ),
    )
    return apply_modification(single_lane_scenario(), edit)


def main() -> None:
    workdir = Path(tempfile.mkdtemp(prefix="arena-demo-"))
    placements = {"careful-model": 2.6, "sloppy-model": -2.6}
    models = {}
    for name, y in placements.items():
        directory = workdir / name
        directory.mkdir()
        vector = render_bev(_edited_scene(y), frozenset({"Agent2"}))
        (directory / "parked-car.png").write_bytes(rasterize(vector, 512))
        models[name] = directory

    arena = Arena(
        models,
        workdir / "votes.ndjson",
        instructions={"parked-car": INSTRUCTION},
        seed=0,
        bootstrap_rounds=200,
    )

    payload = arena.next_matchup("expert-1")
    print("what the rater sees (no model names anywhere):")
    print(f"  instruction: {payload.instruction_text}")
    print(f"  left image:  {payload.left_image_url}")
    print(f"  right image: {payload.right_image_url}")
    arena.record_vote(payload.matchup_id, "TIE", "expert-1")

    rng = random.Random(11)
    for _ in range(59):
        payload = arena.next_matchup("expert-1")
        left, _right = arena.hidden_mapping(payload.matchup_id)
        picks_careful = rng.random() < 0.85
        careful_is_left = left == "careful-model"
        side = "LEFT" if picks_careful == careful_is_left else "RIGHT"
        arena.record_vote(payload.matchup_id, side, "expert-1")

    print()
    print(f"leaderboard after {arena.vote_count} votes:")
    print(format_elo_table(arena.leaderboard()))
    print()
    print(f"vote log: {workdir / 'votes.ndjson'} (replayed on restart)")


if __name__ == "__main__":
    main()
