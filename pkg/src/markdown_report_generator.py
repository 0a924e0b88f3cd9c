import datetime
import numbers
import os
from typing import List, Optional, Sequence

import pandas as pd

from src.cost_analyzer import CostReport
from src.errors import ArtifactIOError


class MarkdownReportGenerator:
    """
    Incrementally builds a Markdown (.md) cost report: per-model totals,
    model comparisons and codeword sweeps.
    """

    def __init__(self, title: str = "Compute Cost Report", output_file: str = "cost_report.md",
                 timestamp: Optional[str] = None):
        self.title = title
        self.output_file = output_file
        self.content: List[str] = []
        self._add_header(timestamp)

    def _add_header(self, timestamp: Optional[str]):
        """Adds the main title and generation time to the start of the report."""
        self.content.append(f"# {self.title}\n")
        stamp = timestamp or datetime.datetime.now().strftime("%Y-%m-%d %H:%M:%S")
        self.content.append(f"**Generated On:** {stamp}\n")
        self.content.append("---\n")

    def add_heading(self, text: str, level: int = 2):
        """Adds a markdown heading (e.g., ## or ###)."""
        if 1 <= level <= 6:
            self.content.append(f"{'#' * level} {text}\n")

    def add_paragraph(self, text: str):
        self.content.append(f"{text}\n")

    def add_table(self, headers: Sequence[str], rows: Sequence[Sequence[str]]):
        """
        Adds a Markdown table; numeric columns are right-aligned by the caller's formatting.

        Args:
            headers: Column names.
            rows: Rows of already formatted cells; short rows are padded.
        """
        if not headers:
            return
        self.content.append(f"| {' | '.join(headers)} |")
        self.content.append(f"| {' | '.join([' ---: '] * len(headers))} |")
        for row in rows:
            padded_row = list(row) + [""] * (len(headers) - len(row))
            self.content.append(f"| {' | '.join(padded_row)} |")
        self.content.append("\n")

    def add_dataframe(self, frame: pd.DataFrame, float_format: str = "{:.3f}"):
        """Adds a DataFrame as a table, formatting floats and leaving NaN cells empty."""
        def cell(value) -> str:
            if isinstance(value, bool):
                return str(value)
            if isinstance(value, numbers.Integral):
                return f"{int(value):,}"
            if isinstance(value, numbers.Real):
                return "" if pd.isna(value) else float_format.format(float(value))
            return str(value)
        rows = [[cell(v) for v in record] for record in frame.astype(object).itertuples(index=False)]
        self.add_table([str(c) for c in frame.columns], rows)

    def add_cost_report(self, name: str, report: CostReport, top: int = 10):
        """Adds totals and the most expensive layers of one model."""
        self.add_heading(name, level=2)
        conv = report.convention
        self.add_paragraph(
            f"**Total:** {report.gflops:.2f} GFLOPs ({report.total_macs:,} MACs), "
            f"{report.mparams:.2f} M parameters  \n"
            f"**Convention:** {conv.flops_per_mac} FLOP/MAC, bn/relu {'in' if conv.include_bn_relu else 'ex'}cluded, "
            f"pool/resize {'in' if conv.include_pool_resize else 'ex'}cluded, "
            f"bias {'in' if conv.include_bias else 'ex'}cluded"
        )
        frame = report.to_frame().sort_values("macs", ascending=False, kind="stable").head(top)
        self.add_dataframe(frame[["name", "kind", "macs", "params"]])

    def add_separator(self):
        self.content.append("---\n")

    def render(self) -> str:
        return "\n".join(self.content)

    def save(self) -> str:
        """
        Writes all accumulated content to the output file.

        Returns:
            The absolute path written.
        """
        output_path = os.path.abspath(self.output_file)
        try:
            with open(self.output_file, "w", encoding="utf-8") as f:
                f.write(self.render())
        except OSError as e:
            raise ArtifactIOError("write report", output_path, str(e)) from e
        print(f"💾 Report saved successfully to: `{output_path}`")
        return output_path
