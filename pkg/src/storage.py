"""CSV storage helpers for benchmark and error-profile records."""
import logging
import threading
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import pandas as pd

logger = logging.getLogger(__name__)

# Floats are written with 6 significant digits
FLOAT_FORMAT = "%.6g"

_locks: Dict[Path, threading.Lock] = {}
_locks_guard = threading.Lock()


class StorageError(OSError):
    """Raised when a record file cannot be written or read."""


def format_float(value: float) -> str:
    return FLOAT_FORMAT % value


def _lock_for(path: Path) -> threading.Lock:
    """One lock per resolved file path, shared by every CsvStorage on that file."""
    key = path.resolve()
    with _locks_guard:
        return _locks.setdefault(key, threading.Lock())


def records_to_frame(records: Sequence, record_type) -> pd.DataFrame:
    """Records as a typed DataFrame in sort_key order; missing optionals become <NA>."""
    ordered = sorted(records, key=lambda r: r.sort_key())
    frame = pd.DataFrame([r.csv_row() for r in ordered], columns=list(record_type.CSV_COLUMNS))
    return frame.astype(record_type.CSV_DTYPES)


class CsvStorage:
    """CSV file storage for one record type; writers of the same path share a lock."""

    def __init__(self, file_path: Path, record_type):
        """
        Initialize the storage.

        Args:
            file_path: Path of the CSV file
            record_type: Class with CSV_COLUMNS, CSV_DTYPES, csv_row(), from_csv_row()
                         and sort_key()
        """
        self.file_path = Path(file_path)
        self.record_type = record_type
        self.lock = _lock_for(self.file_path)

    def write(self, records: Sequence) -> None:
        """Write a header row plus one row per record, in sort_key order."""
        frame = records_to_frame(records, self.record_type)
        try:
            with self.lock:
                frame.to_csv(self.file_path, index=False, float_format=FLOAT_FORMAT,
                             lineterminator="\n")
        except OSError as e:
            raise StorageError(f"Could not write {self.file_path}: {e}") from e
        logger.info(f"Wrote {len(frame)} records to {self.file_path}")

    def read(self) -> List:
        """Parse every data row back into records."""
        try:
            with self.lock:
                frame = pd.read_csv(self.file_path, dtype=self.record_type.CSV_DTYPES,
                                    keep_default_na=False, na_values=[""])
        except OSError as e:
            raise StorageError(f"Could not read {self.file_path}: {e}") from e
        return [self.record_type.from_csv_row(row) for row in frame.to_dict("records")]


def write_csv(records: Sequence, path, record_type: Optional[type] = None) -> None:
    """
    Write records to a CSV file.

    Args:
        records: Records of one type
        path: Destination path
        record_type: Needed only when records is empty (header-only file)
    """
    if record_type is None:
        if not records:
            raise ValueError("record_type is required to write an empty record list")
        record_type = type(records[0])
    CsvStorage(path, record_type).write(records)


def read_csv(path, record_type) -> List:
    return CsvStorage(path, record_type).read()


def detect_record_type(path, candidates: Sequence[type]):
    """Pick the record type whose columns match the file header."""
    try:
        header = tuple(pd.read_csv(path, nrows=0).columns)
    except OSError as e:
        raise StorageError(f"Could not read {path}: {e}") from e
    except pd.errors.EmptyDataError:
        header = ()
    for candidate in candidates:
        if tuple(candidate.CSV_COLUMNS) == header:
            return candidate
    raise ValueError(f"Unrecognized CSV header in {path}: {','.join(header)}")
