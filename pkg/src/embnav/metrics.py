"""Success and efficiency metrics computed from finished episodes.

Navigation: success rate, SPL, SoftSPL, mean goal distance. Rearrangement:
fixed-strict, success, energy and misplaced ratios normalized so the
do-nothing policy scores exactly 1.0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

from .sim.diff import DiffReport, scene_energy

__all__ = [
    "EpisodeRecord", "episode_record", "spl", "soft_spl", "success_rate",
    "goal_distance", "rearrangement_metrics", "metric_row", "METRIC_COLUMNS",
]

# Fixed column order for report rows.
METRIC_COLUMNS = ("sr", "spl", "softspl", "goal_dist", "fs", "e", "m")


@dataclass
class EpisodeRecord:
    success: bool
    shortest_path: float            # metres, oracle
    agent_path: float               # metres, translation only
    initial_geodesic: float
    final_geodesic: float
    start_diff: Optional[DiffReport] = None
    end_diff: Optional[DiffReport] = None
    newly_disturbed: int = 0

    def check(self) -> None:
        if self.agent_path < 0 or self.shortest_path < 0:
            raise ValueError("negative path length")
        if self.initial_geodesic < 0 or self.final_geodesic < 0:
            raise ValueError("negative geodesic")


def episode_record(sim) -> EpisodeRecord:
    """Build a record from a finished Simulator."""
    if not sim.done:
        raise ValueError("episode still running")
    summary = sim.episode_summary()
    rec = EpisodeRecord(
        success=bool(sim.success),
        shortest_path=float(summary["shortest_path"]),
        agent_path=float(sim.path_length),
        initial_geodesic=float(sim.start_geodesic),
        final_geodesic=float(sim.geodesic()),
    )
    if sim.task.kind == "rearrange":
        rec.start_diff = sim.start_diff
        rec.end_diff = sim.current_diff()
        rec.newly_disturbed = len(rec.end_diff.ids() - rec.start_diff.ids())
    return rec


def _checked(records: Sequence[EpisodeRecord]) -> Sequence[EpisodeRecord]:
    if not records:
        raise ValueError("no episodes")
    for r in records:
        r.check()
    return records


def spl(records: Sequence[EpisodeRecord]) -> float:
    """Mean of success * shortest / max(agent, shortest). A successful
    zero-length episode counts 1."""
    total = 0.0
    for r in _checked(records):
        if not r.success:
            continue
        denom = max(r.agent_path, r.shortest_path)
        total += 1.0 if denom == 0 else r.shortest_path / denom
    return total / len(records)


def soft_spl(records: Sequence[EpisodeRecord]) -> float:
    """SPL with success replaced by clamped fractional progress
    1 - final/initial geodesic."""
    total = 0.0
    for r in _checked(records):
        if r.initial_geodesic <= 0:
            raise ValueError("soft_spl needs initial_geodesic > 0")
        if math.isinf(r.final_geodesic):
            continue
        progress = max(0.0, 1.0 - r.final_geodesic / r.initial_geodesic)
        denom = max(r.agent_path, r.shortest_path)
        ratio = 1.0 if denom == 0 else r.shortest_path / denom
        total += progress * ratio
    return total / len(records)


def success_rate(records: Sequence[EpisodeRecord]) -> float:
    recs = _checked(records)
    return sum(1.0 for r in recs if r.success) / len(recs)


def goal_distance(records: Sequence[EpisodeRecord]) -> float:
    recs = _checked(records)
    return sum(r.final_geodesic for r in recs) / len(recs)


def rearrangement_metrics(records: Sequence[EpisodeRecord]) -> tuple[float, float, float, float]:
    """(FS, SR, E, M) means.

    Per episode: FS = fraction of start-misplaced objects correct at the end,
    zeroed if anything initially correct was disturbed. SR = 1 iff the final
    diff is empty. E and M are end/start ratios of misplacement energy and
    misplaced-object count, so doing nothing scores 1.0. Episodes with no
    start-misplaced objects carry nothing to fix and are excluded from the
    FS/E/M denominators.
    """
    recs = _checked(records)
    fs_sum, fs_n = 0.0, 0
    sr_sum = 0.0
    e_sum, m_sum, ratio_n = 0.0, 0.0, 0
    for r in recs:
        if r.start_diff is None or r.end_diff is None:
            raise ValueError("rearrangement metrics need diff reports")
        sr_sum += 1.0 if r.end_diff.empty() else 0.0
        start_ids = r.start_diff.ids()
        if not start_ids:
            continue
        end_ids = r.end_diff.ids()
        fs_n += 1
        if r.newly_disturbed == 0:
            fs_sum += len(start_ids - end_ids) / len(start_ids)
        start_e = scene_energy(r.start_diff)
        e_sum += scene_energy(r.end_diff) / start_e
        m_sum += len(end_ids) / len(start_ids)
        ratio_n += 1
    fs = fs_sum / fs_n if fs_n else 0.0
    e = e_sum / ratio_n if ratio_n else 0.0
    m = m_sum / ratio_n if ratio_n else 0.0
    return fs, sr_sum / len(recs), e, m


def metric_row(records: Sequence[EpisodeRecord], kind: str) -> dict[str, float]:
    """All seven report columns; rearrangement-only columns are NaN for
    navigation tasks and vice versa."""
    nan = float("nan")
    if kind in ("objectnav", "pointnav"):
        return {
            "sr": success_rate(records),
            "spl": spl(records),
            "softspl": soft_spl(records),
            "goal_dist": goal_distance(records),
            "fs": nan, "e": nan, "m": nan,
        }
    fs, sr, e, m = rearrangement_metrics(records)
    return {"sr": sr, "spl": nan, "softspl": nan, "goal_dist": nan,
            "fs": fs, "e": e, "m": m}
