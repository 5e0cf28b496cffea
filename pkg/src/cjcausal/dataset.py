"""Typed columnar observations."""

from __future__ import annotations

from typing import Mapping

import numpy as np
import pandas as pd

FACTOR = "factor"
COUNT = "count"
CONTINUOUS = "continuous"
KINDS = (FACTOR, COUNT, CONTINUOUS)

CANONICAL_KINDS = {
    "challenge": FACTOR,
    "nickname": FACTOR,
    "language": FACTOR,
    "size": CONTINUOUS,
    "rank": COUNT,
}


class Dataset:
    """A pandas frame plus a column-kind map (factor, count or continuous).

    Factor columns are stored as strings, counts as int64, continuous as float64.
    """

    def __init__(self, frame: pd.DataFrame, kinds: Mapping[str, str]):
        missing = [c for c in kinds if c not in frame.columns]
        if missing:
            raise KeyError(f"kind given for missing column(s) {missing}")
        cols = {}
        for name in frame.columns:
            kind = kinds.get(name)
            if kind not in KINDS:
                raise ValueError(f"column {name!r} needs a kind in {KINDS}, got {kind!r}")
            values = frame[name]
            if kind == FACTOR:
                cols[name] = values.astype(str).to_numpy()
            elif kind == COUNT:
                arr = np.asarray(values)
                if not np.all(np.equal(np.mod(arr, 1), 0)):
                    raise ValueError(f"count column {name!r} holds non-integer values")
                cols[name] = arr.astype(np.int64)
            else:
                cols[name] = np.asarray(values, dtype=float)
        self._frame = pd.DataFrame(cols, index=pd.RangeIndex(len(frame)))
        self._kinds = {name: kinds[name] for name in frame.columns}

    @classmethod
    def from_columns(cls, columns: Mapping[str, object], kinds: Mapping[str, str]) -> "Dataset":
        return cls(pd.DataFrame(dict(columns)), kinds)

    @property
    def frame(self) -> pd.DataFrame:
        return self._frame.copy()

    @property
    def kinds(self) -> dict[str, str]:
        return dict(self._kinds)

    @property
    def columns(self) -> list[str]:
        return list(self._frame.columns)

    def kind(self, column: str) -> str:
        if column not in self._kinds:
            raise KeyError(f"missing column {column!r}")
        return self._kinds[column]

    def column(self, name: str) -> np.ndarray:
        if name not in self._kinds:
            raise KeyError(f"missing column {name!r}")
        return self._frame[name].to_numpy()

    def levels(self, column: str) -> list[str]:
        if self.kind(column) != FACTOR:
            raise ValueError(f"{column!r} is not a factor")
        return sorted(set(self._frame[column]))

    def subset(self, mask) -> "Dataset":
        return Dataset(self._frame.loc[np.asarray(mask, dtype=bool)].reset_index(drop=True), self._kinds)

    def drop(self, columns) -> "Dataset":
        keep = [c for c in self.columns if c not in set(columns)]
        return Dataset(self._frame[keep], {c: self._kinds[c] for c in keep})

    def fingerprint(self) -> int:
        return int(pd.util.hash_pandas_object(self._frame, index=False).sum() % (2**61))

    def __len__(self):
        return len(self._frame)

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return self._kinds == other._kinds and self._frame.equals(other._frame)

    def __repr__(self):
        return f"Dataset(rows={len(self)}, kinds={self._kinds})"
