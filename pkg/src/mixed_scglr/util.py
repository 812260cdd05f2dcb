"""Small shared helpers: deterministic parallel mapping and output plumbing."""

from __future__ import annotations

import csv
import hashlib
import json
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Callable, Iterable, Sequence


def parallel_map(fn: Callable, items: Sequence, threads: int = 1) -> list:
    """Order-preserving map, optionally over a thread pool.

    Results are collected in input order, so the output is identical for any
    thread count.
    """
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def config_hash(config: dict) -> str:
    """Stable short hash of a JSON-serialisable config."""
    canon = json.dumps(config, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()[:16]


def meta_lines(version: str, cfg_hash: str, seed: int | None) -> list[str]:
    return [
        f"# version: {version}",
        f"# config_hash: {cfg_hash}",
        f"# seed: {'none' if seed is None else seed}",
    ]


def write_csv(
    path: str | Path,
    header: Sequence[str],
    rows: Iterable[Sequence],
    meta: Sequence[str] = (),
) -> None:
    """Write a comma-separated file (UTF-8, '.' decimal) with leading '#' metadata
    lines. Floats are rendered with repr so reruns are byte-identical."""

    def render(value):
        if isinstance(value, float):
            return repr(value)
        return value

    with open(path, "w", newline="", encoding="utf-8") as fh:
        for line in meta:
            fh.write(line + "\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([render(v) for v in row])
