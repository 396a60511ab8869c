from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np


@dataclass(frozen=True, eq=False)
class Outcomes:
    """Follow-up times (days) and event indicators for a cohort.

    ``event[i]`` is True when death was observed at ``time[i]`` and False when
    the subject was censored there.
    """

    time: np.ndarray
    event: np.ndarray

    def __post_init__(self):
        time = np.asarray(self.time, dtype=float).reshape(-1)
        event = np.asarray(self.event).reshape(-1)
        if time.shape != event.shape:
            raise ValueError(f"time and event lengths differ: {time.size} != {event.size}")
        if not np.all(np.isfinite(time)):
            raise ValueError("survival times must be finite")
        if np.any(time < 0):
            raise ValueError("survival times must be non-negative")
        if event.dtype != bool:
            if not np.all(np.isin(event, (0, 1))):
                raise ValueError("event indicators must be 0/1 or boolean")
            event = event.astype(bool)
        object.__setattr__(self, "time", time)
        object.__setattr__(self, "event", event)

    @classmethod
    def from_records(cls, records: Iterable[tuple[float, bool]]) -> "Outcomes":
        records = list(records)
        if not records:
            return cls(np.empty(0), np.empty(0, dtype=bool))
        time, event = zip(*records)
        return cls(np.array(time, dtype=float), np.array(event, dtype=bool))

    @classmethod
    def concat(cls, parts: Sequence["Outcomes"]) -> "Outcomes":
        return cls(
            np.concatenate([p.time for p in parts]),
            np.concatenate([p.event for p in parts]),
        )

    def __len__(self) -> int:
        return self.time.size

    def __getitem__(self, idx) -> "Outcomes":
        return Outcomes(self.time[idx], self.event[idx])

    @property
    def n_events(self) -> int:
        return int(self.event.sum())

    def __repr__(self) -> str:
        return f"Outcomes(n={len(self)}, events={self.n_events})"
