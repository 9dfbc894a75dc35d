import hashlib
import json
import logging
import os
import tempfile
from pathlib import Path
from typing import Any, Iterable, Mapping

import pandas as pd

LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'

logger = logging.getLogger(__name__)


class TrexError(Exception):
    """Base class for toolkit errors surfaced by the command line."""


class IngestionError(TrexError):
    """Raw or canonical corpus files are missing or malformed."""

    def __init__(self, path, line=None, reason=""):
        self.path = str(path)
        self.line = line
        self.reason = reason
        location = self.path if line is None else f"{self.path}:{line}"
        super().__init__(f"{location}: {reason}" if reason else location)


class CorpusError(TrexError):
    """A dataset violates a pipeline precondition."""


class ConfigError(TrexError):
    """A run configuration is invalid."""


def setup_logging(level="INFO"):
    """
    Configure the root logger once for the whole toolkit.

    Args:
        level (str | int): Logging level name or number

    Returns:
        logging.Logger: The package logger
    """
    if isinstance(level, str):
        level = level.upper()
    logging.basicConfig(level=level, format=LOG_FORMAT, force=True)
    package_logger = logging.getLogger("trex_nbr")
    package_logger.setLevel(level)
    return package_logger


def derive_seed(seed: int, key: str) -> int:
    """Stable 64-bit seed for (run seed, key); independent of PYTHONHASHSEED."""
    digest = hashlib.blake2b(f"{seed}:{key}".encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "big")


def rank_by_score(scores: Mapping[str, float]) -> list:
    """Item ids ordered by descending score, then ascending item id."""
    return sorted(scores, key=lambda item: (-scores[item], item))


def _atomic_write_bytes(path, payload: bytes):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as handle:
            handle.write(payload)
        os.replace(tmp_name, path)
    except BaseException:
        if os.path.exists(tmp_name):
            os.unlink(tmp_name)
        raise
    return path


def atomic_write_text(path, text: str):
    return _atomic_write_bytes(path, text.encode("utf-8"))


def write_json(path, data: Any):
    text = json.dumps(data, indent=2, sort_keys=True, default=_json_default)
    return atomic_write_text(path, text + "\n")


def write_jsonl(path, rows: Iterable[Mapping[str, Any]]):
    lines = [json.dumps(row, default=_json_default) for row in rows]
    return atomic_write_text(path, "".join(line + "\n" for line in lines))


def write_csv(path, frame: pd.DataFrame):
    """Write a DataFrame as CSV without the index, atomically."""
    return atomic_write_text(path, frame.to_csv(index=False, float_format="%.10g"))


def write_excel(path, sheets: Mapping[str, pd.DataFrame]):
    """Write one sheet per DataFrame into an .xlsx workbook (openpyxl engine)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(prefix=f".{path.stem}.", suffix=".xlsx", dir=path.parent)
    os.close(fd)
    try:
        with pd.ExcelWriter(tmp_name, engine="openpyxl") as writer:
            for name, frame in sheets.items():
                frame.to_excel(writer, sheet_name=name[:31], index=False)
        os.replace(tmp_name, path)
    except BaseException:
        if os.path.exists(tmp_name):
            os.unlink(tmp_name)
        raise
    return path


def file_sha256(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as handle:
        for chunk in iter(lambda: handle.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _json_default(value):
    # numpy scalars and sets show up in reports
    if hasattr(value, "item"):
        return value.item()
    if isinstance(value, (set, frozenset)):
        return sorted(value)
    if isinstance(value, Path):
        return str(value)
    raise TypeError(f"Object of type {type(value).__name__} is not JSON serializable")
