"""Rich console progress for training and pretraining runs."""

import time
from typing import Any, Dict, Optional

from rich.console import Console
from rich.panel import Panel
from rich.progress import BarColumn, Progress, SpinnerColumn, TextColumn, TimeElapsedColumn
from rich.table import Table
from rich.text import Text


class TrainingProgress:
    """Terminal progress for training and pretraining runs.

    Driven through ``update_progress(event_type, data)`` with the events
    ``run_started``, ``step_completed``, ``checkpoint_saved``,
    ``heatmaps_written`` and ``complete``.
    """

    def __init__(self, console: Optional[Console] = None, title: str = "PairTune training"):
        self.console = console or Console()
        self.title = title
        self.start_time = time.time()
        self.progress: Optional[Progress] = None
        self.task_id = None
        self.last_losses: Dict[str, float] = {}

    def update_progress(self, event_type: str, data: Any):
        if event_type == "run_started":
            self._start(data)
        elif event_type == "step_completed":
            self._advance(data)
        elif event_type == "checkpoint_saved":
            self._print(f"[green]Checkpoint saved:[/green] {data}")
        elif event_type == "heatmaps_written":
            self._print(f"[cyan]Attention heatmaps:[/cyan] {data}")
        elif event_type == "complete":
            self._finish(data)

    def __call__(self, event_type: str, data: Any):
        self.update_progress(event_type, data)

    def _print(self, message: str):
        if self.progress is not None:
            self.progress.console.print(message)
        else:
            self.console.print(message)

    def _start(self, data: Dict[str, Any]):
        self.start_time = time.time()
        settings = "\n".join(f"[dim]{key}:[/dim] {value}" for key, value in data.items())
        self.console.print(Panel(
            Text.from_markup(f"[bold white]{self.title}[/bold white]\n{settings}"),
            border_style="blue",
            padding=(0, 2),
        ))
        self.progress = Progress(
            SpinnerColumn(),
            TextColumn("[progress.description]{task.description}"),
            BarColumn(),
            TextColumn("{task.completed}/{task.total}"),
            TimeElapsedColumn(),
            console=self.console,
        )
        self.progress.start()
        self.task_id = self.progress.add_task("step", total=int(data.get("steps", 0)) or None)

    def _advance(self, data: Dict[str, Any]):
        self.last_losses = {key: value for key, value in data.items() if key != "step"}
        if self.progress is None:
            return
        description = " ".join(f"{key}={value:.4f}" for key, value in self.last_losses.items())
        self.progress.update(self.task_id, completed=data.get("step", 0), description=description)

    def _finish(self, summary: Dict[str, Any]):
        if self.progress is not None:
            self.progress.stop()
            self.progress = None

        table = Table(show_header=True, header_style="bold magenta", title="Run summary")
        table.add_column("Metric", style="cyan")
        table.add_column("Value", style="white")
        for key, value in summary.items():
            table.add_row(key, f"{value:.6f}" if isinstance(value, float) else str(value))
        table.add_row("elapsed", f"{time.time() - self.start_time:.1f}s")
        self.console.print(table)
