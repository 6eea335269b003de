"""Daily marketing panel: one conversion series plus per-channel impressions.

The on-disk format is a plain CSV with header
``index,conversion,channel_1_impression,...,channel_n_impression``:
comma separated, ``.`` decimal, ``\\n`` line endings.  Variable order for
modelling is channels first (in index order) and conversion last, i.e. node
index ``i`` of an ``n``-channel panel maps to ``channel_{i+1}_impression``
for ``i < n`` and to ``conversion`` for ``i == n``.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd


class PanelError(Exception):
    """Raised for malformed panel files or inconsistent panel payloads."""


def channel_column(i: int) -> str:
    return f"channel_{i + 1}_impression"


@dataclass(frozen=True)
class Panel:
    """In-memory panel; ``impressions`` is a (T, n_channels) float array."""

    index: np.ndarray
    conversion: np.ndarray
    impressions: np.ndarray

    def __post_init__(self):
        if self.impressions.ndim != 2:
            raise PanelError("impressions must be a 2-d array")
        T = len(self.index)
        if len(self.conversion) != T or self.impressions.shape[0] != T:
            raise PanelError("panel columns disagree on length")

    @property
    def n_steps(self) -> int:
        return len(self.index)

    @property
    def n_channels(self) -> int:
        return self.impressions.shape[1]

    @property
    def columns(self) -> list[str]:
        return ["index", "conversion"] + [channel_column(i) for i in range(self.n_channels)]

    def values(self) -> np.ndarray:
        """(T, n_channels + 1) matrix in node-index order: channels, then conversion."""
        return np.column_stack([self.impressions, self.conversion])

    def node_names(self) -> list[str]:
        return [channel_column(i) for i in range(self.n_channels)] + ["conversion"]

    @property
    def outcome_index(self) -> int:
        return self.n_channels

    def to_frame(self) -> pd.DataFrame:
        data = {"index": self.index.astype(int), "conversion": self.conversion}
        for i in range(self.n_channels):
            data[channel_column(i)] = self.impressions[:, i]
        return pd.DataFrame(data)

    def to_csv(self, path: str | Path) -> None:
        self.to_frame().to_csv(path, index=False, lineterminator="\n")

    @classmethod
    def from_frame(cls, frame: pd.DataFrame) -> "Panel":
        cols = list(frame.columns)
        if len(cols) < 3 or cols[0] != "index" or cols[1] != "conversion":
            raise PanelError(f"unexpected panel header: {cols}")
        n = len(cols) - 2
        expected = [channel_column(i) for i in range(n)]
        if cols[2:] != expected:
            raise PanelError(f"unexpected channel columns: {cols[2:]}")
        values = frame.to_numpy(dtype=float)
        if not np.all(np.isfinite(values)):
            raise PanelError("panel contains non-finite values")
        return cls(
            index=frame["index"].to_numpy(dtype=int),
            conversion=frame["conversion"].to_numpy(dtype=float),
            impressions=frame[expected].to_numpy(dtype=float),
        )

    @classmethod
    def from_csv(cls, path: str | Path) -> "Panel":
        try:
            frame = pd.read_csv(path)
        except (OSError, ValueError) as exc:
            raise PanelError(f"cannot read panel csv: {exc}") from exc
        return cls.from_frame(frame)
