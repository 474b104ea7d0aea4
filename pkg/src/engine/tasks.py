from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Protocol


# orchestrator.py imports this module, so tasks see the orchestrator only through this protocol
class OrchestratorLike(Protocol):
    def run_simulate(self, out_dir: str) -> None: ...
    def run_init(self, dataset: str, out: Optional[str], start: int, attempts: int) -> None: ...
    def run_refine(self, dataset: str, out: str, handoff: Optional[str], start: int) -> None: ...
    def run_sweep(self, spec_path: Optional[str], out: Optional[str]) -> None: ...
    def run_report(self, outcomes: str, out: str) -> None: ...


class Task(Protocol):
    def run_once(self, orch: OrchestratorLike) -> None: ...


@dataclass(frozen=True)
class SimulateTask:
    """Task: synthesize a scenario and export it as a dataset directory."""

    out_dir: str

    def run_once(self, orch: OrchestratorLike) -> None:
        orch.run_simulate(self.out_dir)


@dataclass(frozen=True)
class InitTask:
    """Task: one bias/extrinsic solve on a dataset window."""

    dataset: str
    out: Optional[str] = None
    start: int = 0
    attempts: int = 1

    def run_once(self, orch: OrchestratorLike) -> None:
        orch.run_init(self.dataset, self.out, self.start, self.attempts)


@dataclass(frozen=True)
class RefineTask:
    dataset: str
    out: str
    handoff: Optional[str] = None
    start: int = 0

    def run_once(self, orch: OrchestratorLike) -> None:
        orch.run_refine(self.dataset, self.out, self.handoff, self.start)


@dataclass(frozen=True)
class SweepTask:
    """Task: benchmark sweep; spec from a file or the config's bench section."""

    spec_path: Optional[str] = None
    out: Optional[str] = None

    def run_once(self, orch: OrchestratorLike) -> None:
        orch.run_sweep(self.spec_path, self.out)


@dataclass(frozen=True)
class ReportTask:
    outcomes: str
    out: str

    def run_once(self, orch: OrchestratorLike) -> None:
        orch.run_report(self.outcomes, self.out)
