"""Line-delimited episode traces.

One JSON object per line: episode index, timestep, per-agent local-state
projections, joint action, rewards and influence-source values.  The
influence datasets use the same records.
"""

from __future__ import annotations

import json


def make_record(episode: int, t: int, locals_, actions, rewards, sources) -> dict:
    return {
        "episode": int(episode),
        "t": int(t),
        "x": [list(map(int, x)) for x in locals_],
        "a": [int(a) for a in actions],
        "r": [float(r) for r in rewards],
        "u": [list(map(int, u)) for u in sources],
    }


def write_trace(path, records) -> None:
    with open(path, "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec, separators=(",", ":")) + "\n")


def read_trace(path) -> list[dict]:
    records = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                records.append(json.loads(line))
    return records
