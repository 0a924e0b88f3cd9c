"""
Randomized gradient-check suite covering every differentiable kernel and the
full decoder composition.
"""
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np

from src import functional as F
from src.backbone import EncoderFeatures
from src.gradcheck import GradCheckReport, gradcheck
from src.hgd_decoder import HGDConfig, HGDParams, hgd_forward
from src.tensor import Tensor, parameters_to_float64

# name -> builder(rng) returning (op, inputs)
CaseBuilder = Callable[[np.random.Generator], Tuple[Callable[..., Tensor], List[Tensor]]]


def _randn(rng: np.random.Generator, *shape: int) -> Tensor:
    return Tensor(rng.standard_normal(shape))


def _dims(rng: np.random.Generator, low: int = 1, high: int = 4) -> Tuple[int, int, int, int]:
    n = int(rng.integers(1, 3))
    c = int(rng.integers(low, high + 1))
    h = int(rng.integers(2, 6))
    w = int(rng.integers(2, 6))
    return n, c, h, w


def _conv1x1_case(rng):
    n, c, h, w = _dims(rng)
    c_out = int(rng.integers(1, 5))
    return (lambda x, wt, b: F.linear1x1(x, wt, b),
            [_randn(rng, n, c, h, w), _randn(rng, c_out, c), _randn(rng, c_out)])


def _batch_norm_case(rng):
    n, c, h, w = _dims(rng)
    return (lambda x, g, b: F.batch_norm(x, g, b, training=True),
            [_randn(rng, n, c, h, w), _randn(rng, c), _randn(rng, c)])


def _batch_norm_eval_case(rng):
    n, c, h, w = _dims(rng)
    mean = rng.standard_normal(c)
    var = rng.uniform(0.5, 2.0, size=c)
    return (lambda x, g, b: F.batch_norm(x, g, b, mean, var, training=False),
            [_randn(rng, n, c, h, w), _randn(rng, c), _randn(rng, c)])


def _relu_case(rng):
    return F.relu, [_randn(rng, *_dims(rng))]


def _bilinear_case(rng):
    n, c, h, w = _dims(rng)
    out_h, out_w = int(rng.integers(1, 9)), int(rng.integers(1, 9))
    return (lambda x: F.bilinear_resize(x, out_h, out_w)), [_randn(rng, n, c, h, w)]


def _softmax_case(rng):
    return F.softmax_spatial, [_randn(rng, *_dims(rng))]


def _concat_case(rng):
    n, _, h, w = _dims(rng)
    parts = [_randn(rng, n, int(rng.integers(1, 4)), h, w) for _ in range(int(rng.integers(1, 4)))]
    return (lambda *xs: F.concat_channels(list(xs))), parts


def _weighted_pool_case(rng):
    n, d, h, w = _dims(rng)
    k = int(rng.integers(1, 5))
    weights = F.softmax_spatial(_randn(rng, n, k, h, w)).data
    return F.weighted_pool, [_randn(rng, n, d, h, w), Tensor(weights)]


def _assemble_case(rng):
    n, k, h, w = _dims(rng)
    d = int(rng.integers(1, 5))
    return F.assemble, [_randn(rng, n, k, h, w), _randn(rng, n, d, k)]


def _global_avg_case(rng):
    return F.global_avg, [_randn(rng, *_dims(rng))]


def _add_broadcast_case(rng):
    n, c, h, w = _dims(rng)
    return F.add_broadcast, [_randn(rng, n, c, h, w), _randn(rng, n, c, 1, 1)]


def _cross_entropy_case(rng):
    n, k, h, w = _dims(rng, low=2, high=5)
    labels = rng.integers(0, k, size=(n, h, w))
    labels[rng.random((n, h, w)) < 0.2] = F.IGNORE_INDEX
    labels[0, 0, 0] = 0
    return (lambda logits: F.cross_entropy_mask(logits, labels)), [_randn(rng, n, k, h, w)]


def _conv2d_case(rng):
    n, c, _, _ = _dims(rng)
    kernel = int(rng.choice([1, 3]))
    stride = int(rng.integers(1, 3))
    dilation = int(rng.integers(1, 3))
    padding = int(rng.integers(0, 3))
    size = int(rng.integers(dilation * (kernel - 1) + 1, 7))
    c_out = int(rng.integers(1, 4))
    return (lambda x, wt: F.conv2d(x, wt, stride=stride, padding=padding, dilation=dilation),
            [_randn(rng, n, c, size, size), _randn(rng, c_out, c, kernel, kernel)])


def hgd_case(rng: np.random.Generator, cfg: Optional[HGDConfig] = None, side: Optional[int] = None):
    """Full fusion -> codebook -> assembly -> mask chain w.r.t. the three encoder maps"""
    side = side if side is not None else int(rng.choice([32, 64]))
    channels = [int(rng.integers(2, 5)) for _ in range(3)]
    if cfg is None:
        scales = [[32], [16, 32], [8, 16, 32]]
        transfer = bool(rng.integers(0, 2))
        basis = int(rng.integers(2, 6))
        guidance = basis if transfer else int(rng.integers(2, 6))
        cfg = HGDConfig(n_codewords=int(rng.integers(1, 5)), compress_channels=int(rng.integers(2, 5)),
                        basis_channels=basis, guidance_channels=guidance,
                        n_classes=int(rng.integers(2, 4)), codeword_transfer=transfer,
                        m32_scales=scales[int(rng.integers(0, 3))],
                        m8_scales=[8, 16, 32][:int(rng.integers(1, 4))])
    params = HGDParams.initialize(cfg, channels, rng, dtype=np.float64)
    parameters_to_float64(t for _, t in params.named_parameters())
    out_size = (side, side)

    def op(f8, f16, f32):
        return hgd_forward(EncoderFeatures(f8, f16, f32), cfg, params, out_size)[0]

    inputs = [_randn(rng, 1, c, side // stride, side // stride) for c, stride in zip(channels, (8, 16, 32))]
    return op, inputs


OP_CASES: Dict[str, CaseBuilder] = {
    "conv1x1": _conv1x1_case,
    "batch_norm_train": _batch_norm_case,
    "batch_norm_eval": _batch_norm_eval_case,
    "relu": _relu_case,
    "bilinear_resize": _bilinear_case,
    "softmax_spatial": _softmax_case,
    "concat_channels": _concat_case,
    "weighted_pool": _weighted_pool_case,
    "assemble": _assemble_case,
    "global_avg": _global_avg_case,
    "add_broadcast": _add_broadcast_case,
    "cross_entropy_mask": _cross_entropy_case,
    "conv2d": _conv2d_case,
}


def run_suite(num_shapes: int = 20, tol: float = 1e-4, seed: int = 0, include_hgd: bool = True,
              ops: Optional[List[str]] = None) -> List[GradCheckReport]:
    """
    Check every op on num_shapes random shapes.

    Returns:
        One report per (op, shape); a report's op_name is "<op>#<k>".
    """
    rng = np.random.default_rng(seed)
    cases = dict(OP_CASES)
    if include_hgd:
        cases["hgd_forward"] = hgd_case
    names = ops if ops is not None else list(cases)
    reports = []
    for name in names:
        for k in range(num_shapes):
            op, inputs = cases[name](rng)
            reports.append(gradcheck(op, inputs, tol=tol, op_name=f"{name}#{k}", seed=int(rng.integers(1 << 31))))
    return reports
