"""Per-step records shared by the integrators and the harness."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np


@dataclass
class StepRecord:
    step: int
    t: float
    y: np.ndarray
    X: np.ndarray
    E_N: float
    g_norm: float
    p: Optional[np.ndarray] = None
    u: Optional[np.ndarray] = None
    lambda_norm: float = float("nan")
    r_norm: float = float("nan")
    mu_norm: float = float("nan")
    kkt_sigma_min: float = float("nan")


StepSink = Callable[[StepRecord], None]


@dataclass
class Trajectory:
    records: list = field(default_factory=list)
    termination: str = "completed"
    failed_step: Optional[int] = None
    message: str = ""

    def append(self, rec: StepRecord, sink: StepSink | None = None):
        self.records.append(rec)
        if sink is not None:
            sink(rec)

    @property
    def t(self):
        return np.array([r.t for r in self.records])

    @property
    def y(self):
        return np.array([r.y for r in self.records])

    @property
    def X(self):
        return np.array([r.X for r in self.records])

    @property
    def energy(self):
        return np.array([r.E_N for r in self.records])

    def column(self, name):
        return np.array([getattr(r, name) for r in self.records])

    def __len__(self):
        return len(self.records)
