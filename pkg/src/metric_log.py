"""
Metric Log Persistence
Appends one JSON record per evaluation step to a JSON-lines file and reads the
history back as a DataFrame for summaries.
"""

import json
import os
from typing import Any, Dict, List

import pandas as pd

from src.errors import ArtifactIOError


class MetricLog:
    """
    JSON-lines training log. Records are written in call order with sorted keys
    so that identical runs produce identical files.
    """

    def __init__(self, path: str, quiet: bool = False):
        self.path = path
        self.quiet = quiet
        self._ensure_directory()

    def _ensure_directory(self):
        """Ensure the log directory exists."""
        directory = os.path.dirname(self.path)
        if directory and not os.path.exists(directory):
            try:
                os.makedirs(directory)
            except OSError as e:
                raise ArtifactIOError("create log directory", directory, e.strerror or str(e)) from e
            if not self.quiet:
                print(f"📁 Created log directory: {directory}")

    def reset(self) -> None:
        """Start a fresh log, discarding previous records."""
        try:
            with open(self.path, "w", encoding="utf-8"):
                pass
        except OSError as e:
            raise ArtifactIOError("reset metric log", self.path, e.strerror or str(e)) from e

    def append(self, record: Dict[str, Any]) -> None:
        line = json.dumps(record, sort_keys=True) + "\n"
        try:
            with open(self.path, "a", encoding="utf-8") as f:
                f.write(line)
        except OSError as e:
            raise ArtifactIOError("append to metric log", self.path, e.strerror or str(e)) from e

    def records(self) -> List[Dict[str, Any]]:
        if not os.path.exists(self.path):
            return []
        with open(self.path, "r", encoding="utf-8") as f:
            return [json.loads(line) for line in f if line.strip()]

    def load(self) -> pd.DataFrame:
        """History as a DataFrame (empty when the log does not exist yet)."""
        records = self.records()
        if not self.quiet:
            print(f"📊 Loaded {len(records)} metric records from {self.path}")
        return pd.DataFrame(records)

    def summary(self) -> Dict[str, Any]:
        frame = self.load()
        if frame.empty:
            return {"records": 0}
        best = frame.loc[frame["mean_iou"].idxmax()]
        return {
            "records": int(len(frame)),
            "final_loss": float(frame["loss"].iloc[-1]),
            "final_mean_iou": float(frame["mean_iou"].iloc[-1]),
            "best_mean_iou": float(best["mean_iou"]),
            "best_iteration": int(best["iteration"]),
        }
