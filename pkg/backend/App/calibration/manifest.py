"""Run manifests written beside every output file."""
from __future__ import annotations

import hashlib
import logging
import time
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Union

import orjson
from pydantic import BaseModel, Field

from App.calibration import __version__
from App.calibration.errors import DataError

logger = logging.getLogger(__name__)

MANIFEST_SUFFIX = ".manifest.json"
PathLike = Union[str, Path]


class RunManifest(BaseModel):
    tool: str = "multical"
    version: str = __version__
    command: str
    config: Dict[str, Any] = Field(default_factory=dict)
    inputs: Dict[str, str] = Field(default_factory=dict)
    outputs: List[str] = Field(default_factory=list)
    seed: Optional[int] = None
    rng: Optional[str] = None
    started_at: str
    finished_at: Optional[str] = None
    duration_s: Optional[float] = None


def file_digest(path: PathLike) -> str:
    h = hashlib.sha256()
    try:
        with open(path, "rb") as f:
            for chunk in iter(lambda: f.read(1 << 16), b""):
                h.update(chunk)
    except OSError as e:
        raise DataError(f"cannot read {path}: {e}") from e
    return f"sha256:{h.hexdigest()}"


def manifest_path(output: PathLike) -> Path:
    output = Path(output)
    return output.with_name(output.name + MANIFEST_SUFFIX)


class RunRecorder:
    """Collects inputs and timing for one command and writes the sidecars."""

    def __init__(self, command: str, config: Optional[Dict[str, Any]] = None, seed: Optional[int] = None):
        self._start = time.perf_counter()
        self.manifest = RunManifest(
            command=command,
            config=dict(config or {}),
            seed=seed,
            started_at=datetime.now(timezone.utc).isoformat(),
        )

    def add_inputs(self, paths: Sequence[Optional[PathLike]]) -> None:
        for path in paths:
            if path is not None:
                self.manifest.inputs[str(path)] = file_digest(path)

    def finish(self, outputs: Sequence[Optional[PathLike]], rng: Optional[str] = None) -> RunManifest:
        outputs = [Path(p) for p in outputs if p is not None]
        self.manifest.outputs = [str(p) for p in outputs]
        self.manifest.rng = rng
        self.manifest.finished_at = datetime.now(timezone.utc).isoformat()
        self.manifest.duration_s = round(time.perf_counter() - self._start, 6)
        payload = orjson.dumps(
            self.manifest.model_dump(mode="json"),
            option=orjson.OPT_INDENT_2 | orjson.OPT_SORT_KEYS | orjson.OPT_APPEND_NEWLINE,
        )
        for output in outputs:
            manifest_path(output).write_bytes(payload)
        logger.debug(f"Wrote manifests for {[str(p) for p in outputs]}")
        return self.manifest
