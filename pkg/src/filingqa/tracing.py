"""Per-question stage traces with clock-derived, monotone timestamps."""

from __future__ import annotations

from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Iterator

from .providers import Clock, SystemClock


@dataclass
class StageRecord:
    stage: str
    started: float
    ended: float
    detail: dict = field(default_factory=dict)

    @property
    def duration(self) -> float:
        return self.ended - self.started

    def to_dict(self, include_detail: bool = False) -> dict:
        d = {
            "stage": self.stage,
            "started": self.started,
            "ended": self.ended,
            "duration": self.duration,
        }
        if include_detail:
            d["detail"] = self.detail
        return d


@dataclass
class Trace:
    """Ordered stage records for one question, plus run flags."""

    clock: Clock = field(default_factory=SystemClock)
    records: list[StageRecord] = field(default_factory=list)
    flags: list[str] = field(default_factory=list)

    @contextmanager
    def stage(self, name: str, **detail) -> Iterator[StageRecord]:
        record = StageRecord(stage=name, started=self.clock.now(), ended=0.0, detail=detail)
        try:
            yield record
        finally:
            record.ended = self.clock.now()
            self.records.append(record)

    def flag(self, message: str) -> None:
        self.flags.append(message)

    def stage_count(self, name: str) -> int:
        return sum(1 for r in self.records if r.stage == name)

    def stage_durations(self) -> dict[str, float]:
        totals: dict[str, float] = {}
        for r in self.records:
            totals[r.stage] = totals.get(r.stage, 0.0) + r.duration
        return totals

    def end_to_end(self) -> float:
        if not self.records:
            return 0.0
        return max(r.ended for r in self.records) - min(r.started for r in self.records)
