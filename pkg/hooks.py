"""Lifecycle hooks for pipeline observability."""
import time
from dataclasses import dataclass, field
from datetime import datetime
from typing import Any, Dict, List


@dataclass
class StageMetrics:
    """Metrics for a single pipeline stage."""
    stage: str
    start_time: float
    end_time: float = 0.0
    duration_seconds: float = 0.0
    items: int = 0
    failures: List[str] = field(default_factory=list)
    flags: List[str] = field(default_factory=list)

    def finalize(self):
        self.duration_seconds = self.end_time - self.start_time


class PipelineHooks:
    """Stage timing, failure and flag bookkeeping for quench-kernel runs."""

    def __init__(self, verbose: bool = True):
        self.metrics: Dict[str, StageMetrics] = {}
        self.all_flags: List[str] = []
        self.cache_hits: List[str] = []
        self.start_time = time.time()
        self.verbose = verbose

    def _print(self, message: str) -> None:
        if self.verbose:
            print(message)

    def on_stage_start(self, stage: str) -> None:
        self.metrics[stage] = StageMetrics(stage=stage, start_time=time.time())
        self._print(f"  [STAGE START] {stage} at {datetime.now().strftime('%H:%M:%S')}")

    def on_stage_end(self, stage: str, items: int = 0) -> None:
        metrics = self.metrics.get(stage)
        if metrics is None:
            return
        metrics.end_time = time.time()
        metrics.items = items
        metrics.finalize()
        self._print(
            f"  [STAGE END] {stage} | "
            f"Duration: {metrics.duration_seconds:.2f}s | "
            f"Items: {items} | "
            f"Failures: {len(metrics.failures)}"
        )

    def on_row_failure(self, stage: str, index: int, error: str, message: str) -> None:
        """A single row failed; the sweep continues."""
        entry = f"row {index}: {error}: {message}"
        if stage in self.metrics:
            self.metrics[stage].failures.append(entry)
        self._print(f"    ⚠️  ROW_FAILURE in {stage}: {entry}")

    def on_cache_hit(self, artifact: str) -> None:
        self.cache_hits.append(artifact)
        self._print(f"    ✓ cache hit: {artifact}")

    def on_flag(self, stage: str, message: str) -> None:
        """Non-fatal numerical condition (degenerate ground state, non-convergence, ...)."""
        flag = f"{stage}: {message}"
        self.all_flags.append(flag)
        if stage in self.metrics:
            self.metrics[stage].flags.append(message)
        self._print(f"    ⚠️  {flag}")

    def on_pipeline_complete(self) -> None:
        total_duration = time.time() - self.start_time
        self._print("\n" + "=" * 80)
        self._print("PIPELINE EXECUTION SUMMARY")
        self._print("=" * 80)
        self._print(f"Total Duration: {total_duration:.2f}s")
        self._print(f"Stages Executed: {len(self.metrics)}")
        self._print(f"Cache Hits: {len(self.cache_hits)}")
        self._print(f"Flags: {len(self.all_flags)}")

        if self.metrics:
            self._print("\nPer-Stage Metrics:")
            for name, m in self.metrics.items():
                self._print(
                    f"  {name:.<40} "
                    f"{m.duration_seconds:>8.2f}s | "
                    f"{m.items:>7} items | "
                    f"{len(m.failures):>4} failures"
                )

        if self.all_flags:
            self._print(f"\n⚠️  Flags ({len(self.all_flags)}):")
            for flag in self.all_flags[:10]:
                self._print(f"  - {flag}")
            if len(self.all_flags) > 10:
                self._print(f"  ... and {len(self.all_flags) - 10} more")
        self._print("=" * 80 + "\n")

    def get_summary(self) -> Dict[str, Any]:
        return {
            "total_duration_seconds": sum(m.duration_seconds for m in self.metrics.values()),
            "stages_executed": len(self.metrics),
            "cache_hits": list(self.cache_hits),
            "flags": list(self.all_flags),
            "per_stage_metrics": {
                name: {
                    "duration_seconds": m.duration_seconds,
                    "items": m.items,
                    "failures": len(m.failures),
                    "flags": len(m.flags),
                }
                for name, m in self.metrics.items()
            },
        }
