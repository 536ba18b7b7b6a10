"""Small shared helpers: deterministic seeds, stable JSON, checksums."""
from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Any


def derive_seed(*parts: Any) -> int:
    """Derive a 63-bit seed from arbitrary parts, stable across runs."""
    text = ":".join(str(p) for p in parts)
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") >> 1


def stable_json(obj: Any, indent: int | None = None) -> str:
    """JSON with sorted keys and fixed separators, safe to checksum."""
    if indent is None:
        return json.dumps(obj, sort_keys=True, ensure_ascii=False, separators=(",", ":"))
    return json.dumps(obj, sort_keys=True, ensure_ascii=False, indent=indent)


def sha256_text(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def sha256_file(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def half_up(x: float) -> int:
    """Round half away from zero for non-negative x.

    Target counts like round(f * slots) must not depend on parity the way
    banker's rounding does.
    """
    import math

    return int(math.floor(x + 0.5))
