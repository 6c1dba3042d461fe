import logfire
from typing import Dict, Any, Optional
from datetime import datetime
import os
from contextlib import nullcontext

SERVICE_NAME = "pairtune"
SERVICE_VERSION = "1.0.0"


class LogfireMonitoring:
    """Pydantic Logfire integration for training and sampling runs"""

    def __init__(self, service_name: str = SERVICE_NAME):
        self.service_name = service_name
        self.enabled = os.getenv("LOGFIRE_ENABLED", "true").lower() == "true"
        self.console = os.getenv("LOGFIRE_CONSOLE", "false").lower() == "true"

        if self.enabled:
            self._configure()

    def _configure(self):
        # Nothing is exported unless LOGFIRE_TOKEN is present
        logfire.configure(
            service_name=self.service_name,
            service_version=SERVICE_VERSION,
            send_to_logfire="if-token-present",
            console=None if self.console else False,
        )

    def enable_console(self):
        """Turn on console output (the CLI --verbose flag)"""
        if not self.enabled or self.console:
            return
        self.console = True
        self._configure()

    def log_run_started(self, kind: str, settings: Dict[str, Any]):
        """Log the start of a training, pretraining, sampling or ablation run"""
        if not self.enabled:
            return

        logfire.info(
            "{kind} run started",
            kind=kind,
            timestamp=datetime.now().isoformat(),
            **settings
        )

    def log_training_step(self, step: int, breakdown: Any):
        """Log the loss breakdown of one optimizer step"""
        if not self.enabled:
            return

        logfire.debug(
            "training step {step}",
            step=step,
            recon=float(breakdown.recon),
            attn=float(breakdown.attn),
            prior=float(breakdown.prior),
            total=float(breakdown.total),
        )

    def log_checkpoint_saved(self, path: str, tensor_count: int):
        """Log a checkpoint write"""
        if not self.enabled:
            return

        logfire.info(
            "checkpoint saved",
            path=str(path),
            tensor_count=tensor_count,
            timestamp=datetime.now().isoformat()
        )

    def log_video_written(self, directory: str, prompt: str, seed: int, frame_count: int):
        """Log an exported frame sequence"""
        if not self.enabled:
            return

        logfire.info(
            "video written",
            directory=str(directory),
            prompt=prompt,
            seed=seed,
            frame_count=frame_count
        )

    def log_metric_report(self, label: str, report: Dict[str, Any]):
        """Log the metrics computed for one generated video or ablation row"""
        if not self.enabled:
            return

        logfire.info(
            "metric report {label}",
            label=label,
            **report
        )

    def log_error(
        self,
        error_type: str,
        error_message: str,
        context: Optional[Dict[str, Any]] = None
    ):
        """Log error details"""
        if not self.enabled:
            return

        log_data = {
            "error_type": error_type,
            "error_message": error_message,
            "timestamp": datetime.now().isoformat()
        }

        if context:
            log_data.update(context)

        logfire.error(
            "Error occurred: {error_type}",
            **log_data
        )

    def create_span(self, operation_name: str, **kwargs):
        """Create a Logfire span for tracking operations"""
        if not self.enabled:
            return nullcontext()

        return logfire.span(operation_name, **kwargs)


# Global monitoring instance
monitoring = LogfireMonitoring()


# Convenience functions for easy access
def log_run_started(kind: str, settings: Dict[str, Any]):
    monitoring.log_run_started(kind, settings)


def log_training_step(step: int, breakdown: Any):
    monitoring.log_training_step(step, breakdown)


def log_checkpoint_saved(path: str, tensor_count: int):
    monitoring.log_checkpoint_saved(path, tensor_count)


def log_video_written(directory: str, prompt: str, seed: int, frame_count: int):
    monitoring.log_video_written(directory, prompt, seed, frame_count)


def log_metric_report(label: str, report: Dict[str, Any]):
    monitoring.log_metric_report(label, report)


def log_error(error_type: str, error_message: str, context: Optional[Dict[str, Any]] = None):
    """Convenience function for logging errors"""
    monitoring.log_error(error_type, error_message, context)


def create_span(operation_name: str, **kwargs):
    """Convenience function for creating spans"""
    return monitoring.create_span(operation_name, **kwargs)
