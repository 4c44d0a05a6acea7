"""Entropy-coding backend selection.

The reference coder is pure Python and always available.  An optional
accelerated backend is reached over a one-shot subprocess pipe carrying
only flat integer arrays and byte buffers; it is used only when the
``ILLM_BACKEND=fast`` environment variable selects it AND its probe
self-test passes.  Selecting an absent or broken backend falls back to
the reference path with a warning, never changing results.
"""

from __future__ import annotations

import base64
import json
import os
import shutil
import subprocess
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import entropy
from .errors import StreamCorruptionError

_ENV_SELECT = "ILLM_BACKEND"
_ENV_CMD = "ILLM_FAST_BACKEND_CMD"


@dataclass
class BackendCapabilities:
    version: str
    precision_min: int
    precision_max: int
    conformance_hash: str
    self_test_passed: bool


def _fast_command() -> list[str] | None:
    cmd = os.environ.get(_ENV_CMD)
    if cmd:
        return cmd.split()
    exe = shutil.which("illm-fastcoder")
    if exe:
        return [exe]
    # developer checkout: sibling package next to the repo root
    here = Path(__file__).resolve()
    for parent in here.parents:
        candidate = parent / "fastcoder" / "dist" / "cli.js"
        if candidate.exists():
            node = shutil.which("node")
            if node:
                return [node, str(candidate)]
    return None


def _call_fast(request: dict) -> dict:
    cmd = _fast_command()
    if cmd is None:
        raise FileNotFoundError("fast backend executable not found")
    proc = subprocess.run(
        cmd,
        input=json.dumps(request).encode(),
        capture_output=True,
        timeout=600,
    )
    if proc.returncode != 0:
        raise RuntimeError(f"fast backend failed: {proc.stderr.decode()[:200]}")
    reply = json.loads(proc.stdout.decode())
    if not reply.get("ok"):
        raise RuntimeError(f"fast backend error: {reply.get('error')}")
    return reply


def _table_spec(table: entropy.CDFTable) -> dict:
    return {
        "precision": table.precision,
        "has_escape": table.has_escape,
        "rows": [list(map(int, r)) for r in table.rows],
        "offsets": list(map(int, table.row_offsets)),
        "row_index": [int(i) for i in table.row_index],
    }


def probe() -> BackendCapabilities | None:
    """Query the fast backend; None when it is unavailable."""
    try:
        reply = _call_fast({"op": "probe"})
    except Exception as exc:
        warnings.warn(f"fast entropy backend unavailable: {exc}")
        return None
    caps = reply["capabilities"]
    return BackendCapabilities(
        version=caps["version"],
        precision_min=caps["precision_min"],
        precision_max=caps["precision_max"],
        conformance_hash=caps["conformance_hash"],
        self_test_passed=bool(caps["self_test_passed"]),
    )


_resolved: str | None = None


def active_backend(refresh: bool = False) -> str:
    """Resolve 'reference' or 'fast' from the environment (probe-gated)."""
    global _resolved
    if _resolved is not None and not refresh:
        return _resolved
    choice = os.environ.get(_ENV_SELECT, "reference").lower()
    if choice not in ("reference", "fast"):
        warnings.warn(f"unknown {_ENV_SELECT}={choice!r}; using reference")
        choice = "reference"
    if choice == "fast":
        caps = probe()
        if caps is None or not caps.self_test_passed:
            warnings.warn("fast backend self-test failed or missing; using reference")
            choice = "reference"
    _resolved = choice
    return choice


def range_encode(symbols: np.ndarray, table: entropy.CDFTable) -> bytes:
    if active_backend() == "fast":
        request = {"op": "encode", "table": _table_spec(table)}
        request["symbols"] = [int(s) for s in np.asarray(symbols).ravel()]
        reply = _call_fast(request)
        return base64.b64decode(reply["data_b64"])
    return entropy.range_encode(symbols, table)


def range_decode(data: bytes, table: entropy.CDFTable, n: int) -> np.ndarray:
    if active_backend() == "fast":
        request = {
            "op": "decode",
            "table": _table_spec(table),
            "data_b64": base64.b64encode(data).decode(),
            "n": n,
        }
        try:
            reply = _call_fast(request)
        except RuntimeError as exc:
            raise StreamCorruptionError(str(exc)) from exc
        return np.asarray(reply["symbols"], dtype=np.int64)
    return entropy.range_decode(data, table, n)
