"""Run artifacts: the phase metrics stream and episode-window statistics.

Every phase appends one JSON line to metrics.jsonl; a run ends with a
small summary.json. All values are plain Python scalars so identical
runs produce byte-identical files.
"""

from __future__ import annotations

import json
from collections import deque
from pathlib import Path

import numpy as np


def sanitize(value):
    """Recursively convert numpy scalars/arrays into JSON-native types."""
    if isinstance(value, dict):
        return {str(k): sanitize(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [sanitize(v) for v in value]
    if isinstance(value, np.ndarray):
        return [sanitize(v) for v in value.tolist()]
    if isinstance(value, (np.floating,)):
        return float(value)
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (np.bool_,)):
        return bool(value)
    return value


def dumps_line(record: dict) -> str:
    """One canonical JSON line: sorted keys, no extra whitespace."""
    return json.dumps(sanitize(record), sort_keys=True, separators=(",", ":"))


class EpisodeWindow:
    """Rolling statistics over the most recent completed episodes."""

    def __init__(self, size: int = 100):
        if size < 1:
            raise ValueError("window size must be positive")
        self.size = size
        self.returns: deque = deque(maxlen=size)
        self.lengths: deque = deque(maxlen=size)
        self.interactions: deque = deque(maxlen=size)
        self.successes: deque = deque(maxlen=size)
        self.count = 0
        self.best_return = None

    def add(self, ext_return: float, length: int, interacted: bool, success: bool) -> None:
        self.count += 1
        self.returns.append(float(ext_return))
        self.lengths.append(int(length))
        self.interactions.append(bool(interacted))
        self.successes.append(bool(success))
        if self.best_return is None or ext_return > self.best_return:
            self.best_return = float(ext_return)

    def __len__(self) -> int:
        return len(self.returns)

    @property
    def interaction_rate(self) -> float:
        return float(np.mean(self.interactions)) if self.interactions else 0.0

    @property
    def success_rate(self) -> float:
        return float(np.mean(self.successes)) if self.successes else 0.0

    @property
    def mean_return(self) -> float:
        return float(np.mean(self.returns)) if self.returns else 0.0

    @property
    def mean_length(self) -> float:
        return float(np.mean(self.lengths)) if self.lengths else 0.0


class MetricsWriter:
    """Line-per-phase JSONL writer."""

    def __init__(self, path):
        self.path = Path(path)
        self._fh = open(self.path, "w", encoding="utf-8")

    def write(self, record: dict) -> None:
        self._fh.write(dumps_line(record) + "\n")

    def close(self) -> None:
        if not self._fh.closed:
            self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
        return False


def write_json(path, record: dict) -> None:
    Path(path).write_text(json.dumps(sanitize(record), sort_keys=True, indent=2) + "\n",
                          encoding="utf-8")


def read_jsonl(path) -> list[dict]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    return [json.loads(line) for line in lines if line]
