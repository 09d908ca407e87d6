"""Small shared helpers."""

from __future__ import annotations

import json
import os


def worker_count() -> int:
    """Worker-thread cap from DSEL_THREADS; defaults to 1 (deterministic)."""
    raw = os.environ.get("DSEL_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def dump_json(payload, path):
    """Canonical JSON on disk: sorted keys, trailing newline."""
    with open(path, "w") as f:
        json.dump(payload, f, indent=2, sort_keys=True)
        f.write("\n")
