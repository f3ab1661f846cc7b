from __future__ import annotations

import logging
from contextlib import contextmanager
from pathlib import Path
from typing import Iterator, List, Optional

import typer
from pydantic import ValidationError
from rich.console import Console

from App.calibration.data_loader import read_dataset, read_groups
from App.calibration.data_model import ScoredDataset
from App.calibration.errors import CalibrationError, ConfigError

logger = logging.getLogger(__name__)
console = Console(stderr=True)


@contextmanager
def command_errors(command: str) -> Iterator[None]:
    """Turn toolkit errors into log lines and the matching exit code."""
    try:
        yield
    except ValidationError as e:
        logger.error(f"{command}: invalid configuration: {e}")
        raise typer.Exit(ConfigError.exit_code)
    except CalibrationError as e:
        logger.error(f"{command}: {type(e).__name__}: {e}")
        raise typer.Exit(e.exit_code)


def load_inputs(data: Path, groups: Optional[Path] = None) -> ScoredDataset:
    dataset = read_dataset(data)
    if groups is not None:
        dataset = dataset.with_groups(dataset.groups.merge(read_groups(groups)))
        logger.info(f"Merged group columns from {groups}; {dataset.groups.k} groups in total")
    return dataset


def split_list(value: Optional[str]) -> List[str]:
    if not value:
        return []
    return [item.strip() for item in value.split(",") if item.strip()]
