"""Episode serialization: one JSON object per line, fixed field order."""

from __future__ import annotations

import json
from typing import Iterable

__all__ = ["episode_line", "write_episodes", "read_episodes"]


def episode_line(seed: int, config: dict, task: dict, actions: list[str],
                 success: bool, spl: float, path_length: float) -> str:
    # Field order is part of the format; floats use repr (shortest round trip).
    row = {
        "seed": int(seed),
        "config": config,
        "task": task,
        "actions": list(actions),
        "success": bool(success),
        "spl": float(spl),
        "path_length": float(path_length),
    }
    return json.dumps(row, separators=(",", ":"))


def write_episodes(path, rows: Iterable[str]) -> None:
    with open(path, "w") as fh:
        for line in rows:
            fh.write(line + "\n")


def read_episodes(path) -> list[dict]:
    out = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(json.loads(line))
    return out
