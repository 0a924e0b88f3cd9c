"""
Cost Analyzer
Symbolic MAC and parameter accounting over architecture graphs. All counts are
Python integers; GFLOPs are derived only when reports are presented.
"""
import json
from dataclasses import asdict, dataclass, field
from typing import Iterable, List, Literal, Optional, Sequence, Tuple

import pandas as pd
from pydantic import BaseModel, ConfigDict

from src.arch_graph import ArchGraph, LayerSpec, describe_model
from src.errors import DataValidationError
from src.hgd_decoder import HGDConfig

ELEMENTWISE_KINDS = ("bn", "relu", "add", "softmax")
RESAMPLING_KINDS = ("pool", "bilinear")
BILINEAR_TAPS = 4


class CountingConvention(BaseModel):
    """
    How layers are counted.

    flops_per_mac scales MACs into FLOPs at presentation time; include_bn_relu
    covers the elementwise kinds (bn, relu, add, softmax); include_pool_resize
    covers pooling and bilinear resizing.
    """
    model_config = ConfigDict(frozen=True, extra="forbid")

    flops_per_mac: Literal[1, 2] = 1
    include_bn_relu: bool = False
    include_pool_resize: bool = False
    include_bias: bool = True


DEFAULT_CONVENTION = CountingConvention()


@dataclass
class LayerCost:
    name: str
    kind: str
    macs: int
    params: int


@dataclass
class CostReport:
    graph_name: str
    per_layer: List[LayerCost]
    total_macs: int
    total_params: int
    convention: CountingConvention = field(default_factory=CountingConvention)

    @property
    def total_flops(self) -> int:
        return self.total_macs * self.convention.flops_per_mac

    @property
    def gflops(self) -> float:
        return self.total_flops / 1e9

    @property
    def mparams(self) -> float:
        return self.total_params / 1e6

    def layer(self, name: str) -> LayerCost:
        for entry in self.per_layer:
            if entry.name == name:
                return entry
        raise KeyError(name)

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame([asdict(entry) for entry in self.per_layer], columns=["name", "kind", "macs", "params"])
        frame["flops"] = frame["macs"] * self.convention.flops_per_mac
        return frame


def layer_macs(spec: LayerSpec, conv: CountingConvention) -> int:
    kh, kw = spec.kernel
    out_area = spec.out_h * spec.out_w
    bias_macs = spec.c_out * out_area if spec.bias and conv.include_bias else 0
    if spec.kind == "conv":
        return spec.c_in * spec.c_out * kh * kw * out_area // spec.groups + bias_macs
    if spec.kind == "deconv":
        return spec.c_in * spec.c_out * kh * kw * spec.in_h * spec.in_w // spec.groups + bias_macs
    if spec.kind == "fc":
        return spec.c_in * spec.c_out + (spec.c_out if spec.bias and conv.include_bias else 0)
    if spec.kind == "matmul":
        return spec.c_in * spec.c_out * spec.in_h * spec.in_w
    if spec.kind in ELEMENTWISE_KINDS:
        return spec.c_out * out_area if conv.include_bn_relu else 0
    if spec.kind == "pool":
        return spec.c_out * out_area * kh * kw if conv.include_pool_resize else 0
    if spec.kind == "bilinear":
        return BILINEAR_TAPS * spec.c_out * out_area if conv.include_pool_resize else 0
    return 0


def layer_params(spec: LayerSpec, conv: CountingConvention) -> int:
    kh, kw = spec.kernel
    if spec.kind in ("conv", "deconv", "fc"):
        if spec.kind == "fc":
            kh = kw = 1
        weights = spec.c_in * spec.c_out * kh * kw // spec.groups
        return weights + (spec.c_out if spec.bias and conv.include_bias else 0)
    if spec.kind == "bn":
        # running mean/var are not learnable
        return 2 * spec.c_out
    return 0


def count(graph: ArchGraph, conv: CountingConvention = DEFAULT_CONVENTION) -> CostReport:
    """
    Per-layer and total MACs/parameters of a graph.

    Raises:
        DataValidationError: if the graph is spatially or channel-wise inconsistent.
    """
    graph.validate()
    per_layer = [LayerCost(spec.name, spec.kind, layer_macs(spec, conv), layer_params(spec, conv))
                 for spec in graph.layers]
    return CostReport(
        graph_name=graph.name,
        per_layer=per_layer,
        total_macs=sum(entry.macs for entry in per_layer),
        total_params=sum(entry.params for entry in per_layer),
        convention=conv,
    )


def sweep_codewords(ns: Sequence[int], input: Tuple[int, int] = (512, 512),
                    conv: CountingConvention = DEFAULT_CONVENTION, n_classes: int = 60,
                    hgd_config: Optional[HGDConfig] = None) -> pd.DataFrame:
    """
    EfficientFCN cost for each codeword count.

    Returns:
        DataFrame with columns n, total_macs, gflops, params, delta_gflops
        (delta relative to the previous row; NaN on the first).

    Raises:
        DataValidationError: for an empty list or a count below 1.
    """
    if not ns:
        raise DataValidationError("sweep_codewords needs at least one codeword count")
    if any(int(n) < 1 for n in ns):
        raise DataValidationError(f"Codeword counts must be >= 1, got {list(ns)}")
    rows = []
    for n in ns:
        cfg = None
        if hgd_config is not None:
            cfg = hgd_config.model_copy(update={"n_codewords": int(n), "n_classes": n_classes})
        report = count(describe_model("efficientfcn", input, n_codewords=int(n), n_classes=n_classes,
                                      hgd_config=cfg), conv)
        rows.append({"n": int(n), "total_macs": report.total_macs, "gflops": report.gflops,
                     "params": report.total_params})
    frame = pd.DataFrame(rows)
    frame["delta_gflops"] = frame["gflops"].diff()
    return frame


def compare(reports: Iterable[Tuple[str, CostReport]], baseline: Optional[str] = None) -> pd.DataFrame:
    """
    Rank reports by compute and express each relative to a baseline.

    Args:
        reports: (name, report) pairs counted under one convention.
        baseline: Name of the reference row; the first pair when omitted.

    Returns:
        DataFrame sorted by total_macs with gflops, mparams and ratio columns.

    Raises:
        DataValidationError: for mixed conventions, an empty input or an unknown baseline.
    """
    reports = list(reports)
    if not reports:
        raise DataValidationError("compare needs at least one report")
    conventions = {report.convention for _, report in reports}
    if len(conventions) > 1:
        raise DataValidationError(f"Reports use different counting conventions: {sorted(map(str, conventions))}")
    names = [name for name, _ in reports]
    baseline = baseline or names[0]
    if baseline not in names:
        raise DataValidationError(f"Baseline '{baseline}' not among {names}")

    frame = pd.DataFrame([{"name": name, "total_macs": report.total_macs, "gflops": report.gflops,
                           "total_params": report.total_params, "mparams": report.mparams}
                          for name, report in reports])
    base = frame.loc[frame["name"] == baseline].iloc[0]
    frame["flops_ratio"] = frame["total_macs"] / base["total_macs"]
    frame["params_ratio"] = frame["total_params"] / base["total_params"]
    return frame.sort_values("total_macs", kind="stable").reset_index(drop=True)


def format_report(report: CostReport, top: Optional[int] = None) -> str:
    """Aligned plain-text table of the heaviest layers followed by totals"""
    frame = report.to_frame()
    frame = frame[(frame["macs"] > 0) | (frame["params"] > 0)]
    if top is not None:
        frame = frame.sort_values("macs", ascending=False, kind="stable").head(top)
    lines = [
        f"Cost report: {report.graph_name}",
        frame.to_string(index=False),
        f"Total: {report.gflops:.2f} GFLOPs ({report.total_macs:,} MACs), {report.mparams:.2f} M parameters",
    ]
    return "\n".join(lines)


def report_to_json(report: CostReport) -> str:
    return json.dumps({
        "graph": report.graph_name,
        "convention": report.convention.model_dump(),
        "total_macs": report.total_macs,
        "total_flops": report.total_flops,
        "gflops": report.gflops,
        "total_params": report.total_params,
        "per_layer": [asdict(entry) for entry in report.per_layer],
    }, indent=2)
