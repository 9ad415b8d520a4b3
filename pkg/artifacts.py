"""Reading and writing the CSV / JSON artifacts passed between stages."""
import io
import json
from pathlib import Path
from typing import Any, Dict, Tuple, Union

import pandas as pd

from errors import SchemaError

SCHEMA_VERSION = 1

PathLike = Union[str, Path]


def format_header(meta: Dict[str, Any]) -> str:
    """Render the '# key=value ...' comment line carried by every artifact."""
    fields = {"schema_version": SCHEMA_VERSION, **meta}
    return "# " + " ".join(f"{key}={_header_value(value)}" for key, value in fields.items()) + "\n"


def _header_value(value: Any) -> str:
    if isinstance(value, (list, tuple)):
        return ",".join(str(v) for v in value)
    return str(value)


def parse_header(line: str) -> Dict[str, str]:
    if not line.startswith("#"):
        raise SchemaError("Artifact is missing its '#' header line")
    meta = {}
    for token in line[1:].split():
        key, sep, value = token.partition("=")
        if not sep:
            raise SchemaError(f"Malformed header token: {token!r}")
        meta[key] = value
    return meta


def write_csv(path: PathLike, frame: pd.DataFrame, meta: Dict[str, Any]) -> None:
    """Write a frame as CSV preceded by the header line."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    buffer = io.StringIO()
    frame.to_csv(buffer, index=False, lineterminator="\n")
    with open(path, "w", encoding="utf-8", newline="") as f:
        f.write(format_header(meta))
        f.write(buffer.getvalue())


def read_csv(path: PathLike, **kwargs: Any) -> Tuple[pd.DataFrame, Dict[str, str]]:
    """Read a CSV artifact, returning the frame and its header fields; floats parse back exactly."""
    kwargs.setdefault("float_precision", "round_trip")
    path = Path(path)
    if not path.exists():
        raise SchemaError(f"Artifact not found: {path}")
    with open(path, "r", encoding="utf-8") as f:
        meta = parse_header(f.readline())
        try:
            frame = pd.read_csv(f, **kwargs)
        except (pd.errors.ParserError, pd.errors.EmptyDataError) as e:
            raise SchemaError(f"Corrupt artifact {path}: {e}") from e
    check_schema_version(meta, path)
    return frame, meta


def check_schema_version(meta: Dict[str, str], path: PathLike) -> None:
    version = meta.get("schema_version")
    if version != str(SCHEMA_VERSION):
        raise SchemaError(f"{path}: unsupported schema_version {version!r}")


def write_json(path: PathLike, document: Dict[str, Any]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as f:
        json.dump(document, f, indent=2, sort_keys=True)
        f.write("\n")


def read_json(path: PathLike) -> Dict[str, Any]:
    path = Path(path)
    if not path.exists():
        raise SchemaError(f"Artifact not found: {path}")
    try:
        with open(path, "r", encoding="utf-8") as f:
            return json.load(f)
    except json.JSONDecodeError as e:
        raise SchemaError(f"Corrupt JSON artifact {path}: {e}") from e
