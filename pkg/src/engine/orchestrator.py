from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import List, Optional

from ..config import AppConfig, load_experiment
from .pipeline_refine import run_init, run_refine, run_simulate
from .pipeline_sweep import report_once, run_once as sweep_run_once
from .tasks import Task

logger = logging.getLogger(__name__)


@dataclass
class Orchestrator:
    """
    Runs tasks against one validated configuration.
    """

    cfg: AppConfig
    overrides: List[str] = field(default_factory=list)  # re-applied to a separate sweep spec file
    quiet: bool = False

    def run_task_once(self, task: Task) -> None:
        logger.debug("running %s", type(task).__name__)
        task.run_once(self)

    def _emit(self, doc) -> None:
        if not self.quiet:
            print(json.dumps(doc, indent=2))

    # ---- Pipelines exposed to tasks ----

    def run_simulate(self, out_dir: str) -> None:
        ds = run_simulate(self.cfg, out_dir)
        self._emit({"dataset": ds.name, "path": out_dir, "imu_samples": len(ds.imu), "frames": len(ds.frames)})

    def run_init(self, dataset: str, out: Optional[str], start: int = 0, attempts: int = 1) -> None:
        doc = run_init(dataset, self.cfg, out, start, attempts)
        if out is None:
            self._emit(doc)

    def run_refine(self, dataset: str, out: str, handoff: Optional[str] = None, start: int = 0) -> None:
        steps = run_refine(dataset, self.cfg, out, handoff, start)
        done = [s for s in steps if not s.skipped]
        self._emit({"windows": len(steps), "refined": len(done), "csv": out,
                    "handoff": next((s.index for s in steps if s.handoff), None)})

    def run_sweep(self, spec_path: Optional[str], out: Optional[str]) -> None:
        spec = self.cfg.bench
        if spec_path:
            spec = load_experiment(spec_path, [o for o in self.overrides if o.startswith("bench.")])
        report_paths = sweep_run_once(self.cfg, spec, out, quiet=self.quiet)
        logger.info("sweep reports: %s", ", ".join(sorted(report_paths.values())))

    def run_report(self, outcomes: str, out: str) -> None:
        report_once(outcomes, out, quiet=self.quiet)
