"""State diff between a working scene and its rearrangement goal."""

from __future__ import annotations

import math
from dataclasses import dataclass

from .types import SceneSpec

POSITION_TOLERANCE = 0.25  # metres; displacement above this counts as moved

__all__ = ["DiffEntry", "DiffReport", "rearrangement_diff", "scene_energy"]


@dataclass
class DiffEntry:
    object_id: int
    kind: str                      # "moved" | "openable"
    displacement: float            # metres (0.0 for openable-only entries)
    current_open: bool | None = None
    goal_open: bool | None = None


@dataclass
class DiffReport:
    entries: list[DiffEntry]

    def empty(self) -> bool:
        return not self.entries

    def ids(self) -> set[int]:
        return {e.object_id for e in self.entries}

    def __len__(self) -> int:
        return len(self.entries)


def rearrangement_diff(current: SceneSpec, goal: SceneSpec,
                       held: set[int] | None = None) -> DiffReport:
    """Objects whose position differs by more than the tolerance or whose
    openable state differs. A held object always counts as misplaced.
    """
    cur_ids = {o.id for o in current.objects}
    goal_ids = {o.id for o in goal.objects}
    held = held or set()
    if (cur_ids | held) != goal_ids:
        raise ValueError("scenes describe different object sets")

    cur_by_id = {o.id: o for o in current.objects}
    entries: list[DiffEntry] = []
    for g in goal.objects:
        if g.id in held:
            entries.append(DiffEntry(g.id, "moved", displacement=float("inf")))
            continue
        c = cur_by_id[g.id]
        disp = math.hypot(c.position[0] - g.position[0], c.position[1] - g.position[1])
        if disp > POSITION_TOLERANCE:
            entries.append(DiffEntry(g.id, "moved", displacement=disp))
        co = current.openables.get(g.id)
        go = goal.openables.get(g.id)
        if co != go:
            entries.append(DiffEntry(g.id, "openable", displacement=0.0,
                                     current_open=co, goal_open=go))
    entries.sort(key=lambda e: (e.object_id, e.kind))
    return DiffReport(entries)


def scene_energy(diff: DiffReport, cap: float = 2.0) -> float:
    """Scalar misplacement energy: capped displacement metres per moved
    object plus 1.0 per wrong openable state.
    """
    total = 0.0
    for e in diff.entries:
        if e.kind == "moved":
            total += min(e.displacement, cap)
        else:
            total += 1.0
    return total
