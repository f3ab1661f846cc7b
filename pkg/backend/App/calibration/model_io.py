"""JSON documents for fitted models, traces, reports and truth tables."""
from __future__ import annotations

import logging
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Type, TypeVar, Union

import orjson
from pydantic import BaseModel, Field, ValidationError

from App.calibration.calibrators import FitTrace
from App.calibration.data_model import (
    BinDescriptor,
    CalibratedModel,
    Comparator,
    ConstantShift,
    Grid,
    LogitLinear,
    Method,
    Patch,
    TransformKind,
)
from App.calibration.errors import DataError, DataValidationError
from App.calibration.manifest import RunManifest
from App.calibration.metrics import CalibrationReport
from App.calibration.synthetic import TruthTable

logger = logging.getLogger(__name__)

MODEL_VERSION = 1
JSON_OPTIONS = orjson.OPT_INDENT_2 | orjson.OPT_SORT_KEYS | orjson.OPT_SERIALIZE_NUMPY | orjson.OPT_APPEND_NEWLINE

PathLike = Union[str, Path]
D = TypeVar("D", bound=BaseModel)


class PatchDocument(BaseModel):
    p: float
    cmp: Comparator
    group: str
    kind: TransformKind
    delta: Optional[float] = None
    alpha: Optional[float] = None
    beta: Optional[float] = None


class ModelDocument(BaseModel):
    version: Literal[1] = MODEL_VERSION
    method: Method
    m: int = Field(ge=1)
    patches: List[PatchDocument] = Field(default_factory=list)
    coefficients: List[float] = Field(default_factory=list)
    group_names: List[str]
    clip: float = 1e-6
    diagnostics: Dict[str, Any] = Field(default_factory=dict)


def model_to_document(model: CalibratedModel) -> ModelDocument:
    patches = []
    for patch in model.patches:
        patches.append(
            PatchDocument(
                p=patch.bin.level,
                cmp=patch.bin.comparator,
                group=model.group_names[patch.bin.group_index],
                kind=patch.transform.kind,
                **patch.transform.params(),
            )
        )
    return ModelDocument(
        method=model.method,
        m=model.grid.m,
        patches=patches,
        coefficients=list(model.coefficients),
        group_names=list(model.group_names),
        clip=model.clip,
        diagnostics=dict(model.diagnostics),
    )


def document_to_model(doc: ModelDocument) -> CalibratedModel:
    grid = Grid(doc.m)
    patches = []
    for i, entry in enumerate(doc.patches):
        if entry.group not in doc.group_names:
            raise DataValidationError(f"patch {i} refers to unknown group {entry.group!r}")
        if entry.kind is TransformKind.CONSTANT:
            if entry.delta is None:
                raise DataValidationError(f"constant patch {i} has no delta")
            transform = ConstantShift(entry.delta)
        else:
            if entry.alpha is None or entry.beta is None:
                raise DataValidationError(f"logit-linear patch {i} needs alpha and beta")
            transform = LogitLinear(entry.alpha, entry.beta)
        descriptor = BinDescriptor(entry.p, entry.cmp, doc.group_names.index(entry.group))
        patches.append(Patch(descriptor, transform))
    try:
        return CalibratedModel(
            grid=grid,
            method=doc.method,
            group_names=tuple(doc.group_names),
            patches=tuple(patches),
            coefficients=tuple(doc.coefficients),
            clip=doc.clip,
            diagnostics=dict(doc.diagnostics),
        )
    except ValueError as e:
        raise DataValidationError(f"inconsistent model document: {e}") from e


def dumps(document: Union[BaseModel, Dict[str, Any]]) -> bytes:
    if isinstance(document, BaseModel):
        document = document.model_dump(mode="json", exclude_none=False)
    return orjson.dumps(document, option=JSON_OPTIONS)


def write_json(document: Union[BaseModel, Dict[str, Any]], path: PathLike) -> None:
    Path(path).write_bytes(dumps(document))
    logger.debug(f"Wrote {path}")


def read_json(path: PathLike, kind: Type[D]) -> D:
    try:
        raw = orjson.loads(Path(path).read_bytes())
    except OSError as e:
        raise DataError(f"cannot read {path}: {e}") from e
    except orjson.JSONDecodeError as e:
        raise DataValidationError(f"{path} is not valid JSON: {e}") from e
    try:
        return kind.model_validate(raw)
    except ValidationError as e:
        raise DataValidationError(f"{path} does not match the {kind.__name__} schema: {e}") from e


def model_dumps(model: CalibratedModel) -> bytes:
    doc = model_to_document(model).model_dump(mode="json")
    # absent patch parameters are omitted rather than written as null
    doc["patches"] = [{k: v for k, v in p.items() if v is not None} for p in doc["patches"]]
    return orjson.dumps(doc, option=JSON_OPTIONS)


def model_loads(data: bytes) -> CalibratedModel:
    try:
        doc = ModelDocument.model_validate(orjson.loads(data))
    except orjson.JSONDecodeError as e:
        raise DataValidationError(f"model file is not valid JSON: {e}") from e
    except ValidationError as e:
        raise DataValidationError(f"model file does not match the model schema: {e}") from e
    return document_to_model(doc)


def save_model(model: CalibratedModel, path: PathLike) -> None:
    Path(path).write_bytes(model_dumps(model))
    logger.info(f"Saved {model.method.value} model with {len(model.patches)} patches to {path}")


def load_model(path: PathLike) -> CalibratedModel:
    try:
        data = Path(path).read_bytes()
    except OSError as e:
        raise DataError(f"cannot read {path}: {e}") from e
    return model_loads(data)


def save_trace(trace: FitTrace, path: PathLike) -> None:
    write_json(trace, path)


def load_trace(path: PathLike) -> FitTrace:
    return read_json(path, FitTrace)


def save_report(report: CalibrationReport, path: PathLike) -> None:
    write_json(report, path)


def save_truth(truth: TruthTable, path: PathLike) -> None:
    write_json(truth, path)


SCHEMA_DOCUMENTS: Dict[str, Type[BaseModel]] = {
    "model": ModelDocument,
    "trace": FitTrace,
    "report": CalibrationReport,
    "truth": TruthTable,
    "manifest": RunManifest,
}
