"""Line-delimited episode traces and their per-tick summaries."""

from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import IO, Iterable, Iterator

SUMMARY_HEADER = ["tick", "engine_distances", "light_phases", "reward", "cum_reward", "collision"]


class TraceError(ValueError):
    def __init__(self, line: int, msg: str):
        super().__init__(f"line {line}: {msg}")
        self.line = line


class TraceWriter:
    def __init__(self, fh: IO[str]):
        self.fh = fh

    def __call__(self, record: dict) -> None:
        self.fh.write(json.dumps(record, sort_keys=True) + "\n")


def read_trace(path: str | Path) -> Iterator[dict]:
    with open(path) as fh:
        for n, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise TraceError(n, f"invalid JSON ({exc.msg})") from None
            if not isinstance(rec, dict) or "tick" not in rec:
                raise TraceError(n, "record has no 'tick'")
            yield n, rec


def summarize(records: Iterable[tuple[int, dict]]) -> Iterator[list]:
    """One row per tick: engine distances, light phases, reward, running total and
    whether an engine collided on that tick."""
    total = 0.0
    for n, rec in records:
        try:
            dists = rec.get("distances", {})
            lights = rec.get("lights", [])
            reward = float(rec.get("reward", 0.0))
            collisions = rec.get("events", {}).get("collisions", [])
            total += reward
            yield [
                int(rec["tick"]),
                ";".join(f"{k}:{dists[k]}" for k in sorted(dists, key=int)),
                ";".join(f"{lt['node']}:{lt['phase']}" for lt in lights),
                repr(reward),
                repr(round(total, 10)),
                1 if collisions else 0,
            ]
        except (KeyError, TypeError, ValueError, AttributeError) as exc:
            raise TraceError(n, f"malformed record ({exc})") from None


def write_summary(path: str | Path, out: IO[str]) -> int:
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(SUMMARY_HEADER)
    rows = 0
    for row in summarize(read_trace(path)):
        writer.writerow(row)
        rows += 1
    return rows
