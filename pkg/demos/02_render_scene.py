"""Before-and-after renders of an edited scene.

Applies a parked-vehicle edit to the single-lane fixture and renders both
versions. The ego vehicle is always red, the newly added agent blue, other
traffic dark gray; drivable surface is light gray, walkways olive, and a
5 m grid sits under the agents. The vector output is byte-stable, so the
same scene always produces the same file.
"""

from __future__ import annotations

from pathlib import Path

from scenaug.fixtures import single_lane_scenario
from scenaug.render import rasterize, render_bev
from scenaug.scenario import ModAction, ModificationDict, ModificationResult, agent_from_vector, apply_modification

OUT = Path(__file__).parent / "out"


def main() -> None:
    OUT.mkdir(exist_ok=True)
    before = single_lane_scenario()

    edit = ModificationResult(
        insights="Single eastbound lane, ego at the start.",
        summary="Park one vehicle 21.4m ahead of ego, slightly left of center.",
        modification_dicts=(
            ModificationDict(
                action=ModAction.ADD,
                modified_agent="Agent2",
                rationale="requested parked vehicle",
            ),
        ),
        calculations="x = 21.4 ahead of the origin, y = 2.6 left of the centerline.",
        modified_vectors=(
            agent_from_vector("Agent2", ["VEHICLE", 21.4, 2.6, 0.0, 2.0, 4.5, 0.0, "Lane1"]),
        ),
    )
    after = apply_modification(before, edit)

    for name, scenario, modified in (
        ("before", before, frozenset()),
        ("after", after, frozenset({"Agent2"})),
    ):
        vector = render_bev(scenario, modified)
        svg_path = OUT / f"scene_{name}.svg"
        svg_path.write_bytes(vector)
        png_path = OUT / f"scene_{name}.png"
        png_path.write_bytes(rasterize(vector, 512))
        print(f"{name}: {svg_path} ({len(vector)} bytes), {png_path} (512px)")

    repeat = render_bev(after, frozenset({"Agent2"}))
    print(f"renders are deterministic: {repeat == render_bev(after, frozenset({'Agent2'}))}")


if __name__ == "__main__":
    main()
