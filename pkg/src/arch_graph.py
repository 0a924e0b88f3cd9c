"""
Architecture Graphs
Symbolic layer graphs (no tensors, no execution) for ResNet101, its dilated
OS=8 variant and the decoder heads compared in the cost tables. Graphs are
ordered lists of LayerSpec records and serialize to JSON.
"""
import json
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

from src.errors import ConfigurationError, DataValidationError

LAYER_KINDS = ("input", "conv", "deconv", "fc", "pool", "bilinear", "add", "concat",
               "bn", "relu", "softmax", "matmul")
DECODER_KINDS = ("unet_bilinear", "unet_deconv", "hgd", "fcn32s_head", "fcn8s_head")
MODEL_NAMES = ("fcn32s", "dilatedfcn8s", "unet-bilinear", "unet-deconv", "efficientfcn")

RESNET101_BLOCKS = (3, 4, 23, 3)
RESNET101_WIDTHS = (64, 128, 256, 512)
BOTTLENECK_EXPANSION = 4


@dataclass
class LayerSpec:
    """
    One node of an architecture graph.

    For matmul layers c_in/c_out and the input extent describe the contraction:
    MACs are c_in * c_out * in_h * in_w (codeword pooling and codeword assembly).
    """
    name: str
    kind: str
    c_in: int
    c_out: int
    in_h: int
    in_w: int
    out_h: int
    out_w: int
    kernel: Tuple[int, int] = (1, 1)
    stride: int = 1
    dilation: int = 1
    padding: int = 0
    groups: int = 1
    bias: bool = False
    inputs: List[str] = field(default_factory=list)

    @classmethod
    def from_dict(cls, record: Dict) -> "LayerSpec":
        record = dict(record)
        record["kernel"] = tuple(record.get("kernel", (1, 1)))
        record["inputs"] = list(record.get("inputs", []))
        return cls(**record)


def conv_output_size(size: int, kernel: int, stride: int, padding: int, dilation: int) -> int:
    return (size + 2 * padding - dilation * (kernel - 1) - 1) // stride + 1


def deconv_output_size(size: int, kernel: int, stride: int, padding: int, dilation: int) -> int:
    return (size - 1) * stride - 2 * padding + dilation * (kernel - 1) + 1


class ArchGraph:
    """Ordered layer list with named feature outputs"""

    def __init__(self, name: str, layers: Optional[List[LayerSpec]] = None,
                 outputs: Optional[Dict[str, str]] = None):
        self.name = name
        self.layers: List[LayerSpec] = list(layers or [])
        self.outputs: Dict[str, str] = dict(outputs or {})

    def __len__(self) -> int:
        return len(self.layers)

    def __eq__(self, other) -> bool:
        if not isinstance(other, ArchGraph):
            return NotImplemented
        return self.name == other.name and self.layers == other.layers and self.outputs == other.outputs

    def layer(self, name: str) -> LayerSpec:
        for spec in self.layers:
            if spec.name == name:
                return spec
        raise KeyError(name)

    def layers_of_kind(self, kind: str) -> List[LayerSpec]:
        return [spec for spec in self.layers if spec.kind == kind]

    def problems(self) -> List[str]:
        """Every spatial/channel inconsistency in the graph (empty when valid)"""
        issues: List[str] = []
        seen: Dict[str, LayerSpec] = {}
        for spec in self.layers:
            if spec.kind not in LAYER_KINDS:
                issues.append(f"{spec.name}: unknown kind '{spec.kind}'")
                continue
            if spec.name in seen:
                issues.append(f"{spec.name}: duplicate layer name")
            missing = [src for src in spec.inputs if src not in seen]
            if missing:
                issues.append(f"{spec.name}: inputs {missing} not defined earlier")
                seen[spec.name] = spec
                continue
            issues.extend(self._check_layer(spec, [seen[src] for src in spec.inputs]))
            seen[spec.name] = spec
        for key, target in self.outputs.items():
            if target not in seen:
                issues.append(f"output '{key}' refers to unknown layer '{target}'")
        return issues

    @staticmethod
    def _check_layer(spec: LayerSpec, sources: List[LayerSpec]) -> List[str]:
        issues = []
        if min(spec.c_in, spec.c_out, spec.out_h, spec.out_w) < 1:
            issues.append(f"{spec.name}: non-positive channel or spatial size")
        if spec.kind == "input":
            if sources:
                issues.append(f"{spec.name}: input layers take no inputs")
            return issues
        if not sources:
            return issues + [f"{spec.name}: no inputs"]
        first = sources[0]
        if (spec.in_h, spec.in_w) != (first.out_h, first.out_w):
            issues.append(f"{spec.name}: input size {spec.in_h}x{spec.in_w} != "
                          f"{first.name} output {first.out_h}x{first.out_w}")
        if spec.kind == "concat":
            if spec.c_in != sum(s.c_out for s in sources) or spec.c_out != spec.c_in:
                issues.append(f"{spec.name}: concat channels do not add up")
            if any((s.out_h, s.out_w) != (first.out_h, first.out_w) for s in sources):
                issues.append(f"{spec.name}: concatenated maps differ in size")
        elif spec.c_in != first.c_out:
            issues.append(f"{spec.name}: c_in {spec.c_in} != {first.name} c_out {first.c_out}")

        kh, kw = spec.kernel
        if spec.kind in ("conv", "pool"):
            expected = (conv_output_size(spec.in_h, kh, spec.stride, spec.padding, spec.dilation),
                        conv_output_size(spec.in_w, kw, spec.stride, spec.padding, spec.dilation))
        elif spec.kind == "deconv":
            expected = (deconv_output_size(spec.in_h, kh, spec.stride, spec.padding, spec.dilation),
                        deconv_output_size(spec.in_w, kw, spec.stride, spec.padding, spec.dilation))
        elif spec.kind in ("fc", "bilinear", "matmul"):
            expected = (spec.out_h, spec.out_w)
        else:
            expected = (spec.in_h, spec.in_w)
        if (spec.out_h, spec.out_w) != expected:
            issues.append(f"{spec.name}: output {spec.out_h}x{spec.out_w} != expected {expected[0]}x{expected[1]}")
        if spec.kind in ("bn", "relu", "softmax", "add", "bilinear", "pool") and spec.c_out != spec.c_in:
            issues.append(f"{spec.name}: {spec.kind} must preserve channels")
        if spec.kind == "add":
            for s in sources[1:]:
                broadcast = (s.out_h, s.out_w) == (1, 1)
                if s.c_out != spec.c_in or not (broadcast or (s.out_h, s.out_w) == (first.out_h, first.out_w)):
                    issues.append(f"{spec.name}: addend {s.name} is not broadcast-compatible")
        if spec.groups < 1 or spec.c_in % spec.groups or spec.c_out % spec.groups:
            issues.append(f"{spec.name}: groups {spec.groups} do not divide channels")
        return issues

    def is_valid(self) -> bool:
        return not self.problems()

    def validate(self) -> "ArchGraph":
        """
        Raises:
            DataValidationError: listing every inconsistent layer.
        """
        issues = self.problems()
        if issues:
            raise DataValidationError(f"Graph '{self.name}' is inconsistent: " + "; ".join(issues))
        return self

    def concat(self, other: "ArchGraph", name: Optional[str] = None) -> "ArchGraph":
        """Disjoint union: other's layers appended after self's"""
        outputs = {**self.outputs, **other.outputs}
        return ArchGraph(name or f"{self.name}+{other.name}", self.layers + other.layers, outputs)

    def attach(self, head: "ArchGraph", bindings: Dict[str, str], name: Optional[str] = None) -> "ArchGraph":
        """
        Append head, replacing its input layers named in bindings with layers of self.

        Args:
            head: Graph whose input layers stand for self's features.
            bindings: head input layer name -> self layer name.
        """
        layers = list(self.layers)
        for spec in head.layers:
            if spec.kind == "input" and spec.name in bindings:
                continue
            rewired = LayerSpec.from_dict(asdict(spec))
            rewired.inputs = [bindings.get(src, src) for src in spec.inputs]
            layers.append(rewired)
        return ArchGraph(name or f"{self.name}+{head.name}", layers, head.outputs)

    def to_dict(self) -> Dict:
        return {"name": self.name, "outputs": self.outputs, "layers": [asdict(spec) for spec in self.layers]}

    def to_json(self, indent: Optional[int] = 2) -> str:
        return json.dumps(self.to_dict(), indent=indent)

    @classmethod
    def from_json(cls, document: str) -> "ArchGraph":
        data = json.loads(document)
        layers = [LayerSpec.from_dict(record) for record in data.get("layers", [])]
        return cls(data.get("name", "graph"), layers, data.get("outputs", {}))


class GraphBuilder:
    """Appends layers while tracking each layer's output shape"""

    def __init__(self, name: str):
        self.name = name
        self.layers: List[LayerSpec] = []
        self._shapes: Dict[str, Tuple[int, int, int]] = {}

    def shape(self, name: str) -> Tuple[int, int, int]:
        return self._shapes[name]

    def _append(self, spec: LayerSpec) -> str:
        self.layers.append(spec)
        self._shapes[spec.name] = (spec.c_out, spec.out_h, spec.out_w)
        return spec.name

    def input(self, name: str, channels: int, height: int, width: int) -> str:
        return self._append(LayerSpec(name, "input", channels, channels, height, width, height, width))

    def conv(self, name: str, src: str, c_out: int, kernel: int = 1, stride: int = 1, dilation: int = 1,
             padding: Optional[int] = None, bias: bool = False, groups: int = 1) -> str:
        c_in, h, w = self._shapes[src]
        padding = dilation * (kernel - 1) // 2 if padding is None else padding
        out_h = conv_output_size(h, kernel, stride, padding, dilation)
        out_w = conv_output_size(w, kernel, stride, padding, dilation)
        return self._append(LayerSpec(name, "conv", c_in, c_out, h, w, out_h, out_w, (kernel, kernel),
                                      stride, dilation, padding, groups, bias, [src]))

    def deconv(self, name: str, src: str, c_out: int, kernel: int = 2, stride: int = 2, bias: bool = True) -> str:
        c_in, h, w = self._shapes[src]
        out_h = deconv_output_size(h, kernel, stride, 0, 1)
        out_w = deconv_output_size(w, kernel, stride, 0, 1)
        return self._append(LayerSpec(name, "deconv", c_in, c_out, h, w, out_h, out_w, (kernel, kernel),
                                      stride, 1, 0, 1, bias, [src]))

    def _same_shape(self, name: str, kind: str, srcs: Sequence[str]) -> str:
        c, h, w = self._shapes[srcs[0]]
        return self._append(LayerSpec(name, kind, c, c, h, w, h, w, inputs=list(srcs)))

    def bn(self, name: str, src: str) -> str:
        return self._same_shape(name, "bn", [src])

    def relu(self, name: str, src: str) -> str:
        return self._same_shape(name, "relu", [src])

    def softmax(self, name: str, src: str) -> str:
        return self._same_shape(name, "softmax", [src])

    def add(self, name: str, srcs: Sequence[str]) -> str:
        return self._same_shape(name, "add", srcs)

    def conv_bn_relu(self, name: str, src: str, c_out: int, kernel: int = 1, stride: int = 1,
                     dilation: int = 1) -> str:
        out = self.conv(name, src, c_out, kernel, stride, dilation)
        return self.relu(f"{name}.relu", self.bn(f"{name}.bn", out))

    def pool(self, name: str, src: str, kernel: int, stride: int, padding: int) -> str:
        c, h, w = self._shapes[src]
        out_h = conv_output_size(h, kernel, stride, padding, 1)
        out_w = conv_output_size(w, kernel, stride, padding, 1)
        return self._append(LayerSpec(name, "pool", c, c, h, w, out_h, out_w, (kernel, kernel),
                                      stride, 1, padding, inputs=[src]))

    def global_pool(self, name: str, src: str) -> str:
        c, h, w = self._shapes[src]
        return self._append(LayerSpec(name, "pool", c, c, h, w, 1, 1, (h, w), 1, inputs=[src]))

    def bilinear(self, name: str, src: str, out_h: int, out_w: int) -> str:
        c, h, w = self._shapes[src]
        return self._append(LayerSpec(name, "bilinear", c, c, h, w, out_h, out_w, inputs=[src]))

    def concat(self, name: str, srcs: Sequence[str]) -> str:
        _, h, w = self._shapes[srcs[0]]
        total = sum(self._shapes[s][0] for s in srcs)
        return self._append(LayerSpec(name, "concat", total, total, h, w, h, w, inputs=list(srcs)))

    def matmul(self, name: str, srcs: Sequence[str], c_out: int, out_h: int, out_w: int) -> str:
        c_in, h, w = self._shapes[srcs[0]]
        return self._append(LayerSpec(name, "matmul", c_in, c_out, h, w, out_h, out_w, inputs=list(srcs)))

    def fc(self, name: str, src: str, c_out: int, bias: bool = True) -> str:
        c_in, h, w = self._shapes[src]
        return self._append(LayerSpec(name, "fc", c_in, c_out, h, w, 1, 1, bias=bias, inputs=[src]))

    def build(self, outputs: Optional[Dict[str, str]] = None) -> ArchGraph:
        return ArchGraph(self.name, self.layers, outputs)


def _check_input(size: Tuple[int, int]) -> Tuple[int, int]:
    height, width = int(size[0]), int(size[1])
    if height < 32 or width < 32 or height % 32 or width % 32:
        raise ConfigurationError(f"Input size {height}x{width} is not divisible by 32")
    return height, width


def _bottleneck(b: GraphBuilder, prefix: str, src: str, planes: int, stride: int, dilation: int,
                downsample: bool) -> str:
    out = b.relu(f"{prefix}.relu1", b.bn(f"{prefix}.bn1", b.conv(f"{prefix}.conv1", src, planes)))
    out = b.conv(f"{prefix}.conv2", out, planes, kernel=3, stride=stride, dilation=dilation, padding=dilation)
    out = b.relu(f"{prefix}.relu2", b.bn(f"{prefix}.bn2", out))
    out = b.bn(f"{prefix}.bn3", b.conv(f"{prefix}.conv3", out, planes * BOTTLENECK_EXPANSION))
    shortcut = src
    if downsample:
        shortcut = b.conv(f"{prefix}.downsample.0", src, planes * BOTTLENECK_EXPANSION, stride=stride)
        shortcut = b.bn(f"{prefix}.downsample.1", shortcut)
    return b.relu(f"{prefix}.relu", b.add(f"{prefix}.add", [out, shortcut]))


def describe_resnet101(input: Tuple[int, int], dilated: bool = False) -> ArchGraph:
    """
    ResNet101 encoder (bottleneck v1.5: stride on the 3x3 conv).

    With dilated=True, layer3 and layer4 keep stride 1 and dilate by 2 and 4;
    the first block of each dilated stage keeps the previous dilation.

    Returns:
        ArchGraph whose outputs map 'f8', 'f16', 'f32' to the last layer of
        layer2, layer3 and layer4.
    """
    height, width = _check_input(input)
    b = GraphBuilder("resnet101-dilated" if dilated else "resnet101")
    x = b.input("image", 3, height, width)
    x = b.relu("relu", b.bn("bn1", b.conv("conv1", x, 64, kernel=7, stride=2, padding=3)))
    x = b.pool("maxpool", x, kernel=3, stride=2, padding=1)

    outputs = {}
    current_dilation = 1
    inplanes = 64
    for stage, (blocks, planes) in enumerate(zip(RESNET101_BLOCKS, RESNET101_WIDTHS), start=1):
        stride = 1 if stage == 1 else 2
        previous_dilation = current_dilation
        if dilated and stage >= 3:
            current_dilation *= stride
            stride = 1
        for block in range(blocks):
            first = block == 0
            x = _bottleneck(b, f"layer{stage}.{block}", x, planes,
                            stride=stride if first else 1,
                            dilation=previous_dilation if first else current_dilation,
                            downsample=first and (stride != 1 or inplanes != planes * BOTTLENECK_EXPANSION))
            inplanes = planes * BOTTLENECK_EXPANSION
        if stage >= 2:
            outputs[{2: "f8", 3: "f16", 4: "f32"}[stage]] = x
    return b.build(outputs)


def _decoder_inputs(b: GraphBuilder, height: int, width: int) -> Dict[int, str]:
    return {
        8: b.input("features.os8", 512, height // 8, width // 8),
        16: b.input("features.os16", 1024, height // 16, width // 16),
        32: b.input("features.os32", 2048, height // 32, width // 32),
    }


def _describe_unet(b: GraphBuilder, height: int, width: int, n_classes: int, deconv: bool) -> None:
    features = _decoder_inputs(b, height, width)
    x = b.conv_bn_relu("decoder.reduce", features[32], 512)
    for stage, skip_stride in enumerate((16, 8), start=1):
        _, h, w = b.shape(features[skip_stride])
        if deconv:
            x = b.deconv(f"decoder.up{stage}", x, 512)
        else:
            x = b.bilinear(f"decoder.up{stage}", x, h, w)
        x = b.concat(f"decoder.cat{stage}", [x, features[skip_stride]])
        x = b.conv_bn_relu(f"decoder.block{stage}.conv1", x, 512, kernel=3)
        x = b.conv_bn_relu(f"decoder.block{stage}.conv2", x, 512, kernel=3)
    x = b.conv("decoder.classifier", x, n_classes, bias=True)
    b.bilinear("decoder.upsample", x, height, width)


def _describe_hgd(b: GraphBuilder, height: int, width: int, n_codewords: int, n_classes: int, cfg) -> None:
    features = _decoder_inputs(b, height, width)
    m32_scales = sorted(cfg.m32_scales) if cfg is not None else [8, 16, 32]
    m8_scales = sorted(cfg.m8_scales) if cfg is not None else [8, 16, 32]
    compress = cfg.compress_channels if cfg is not None else 512
    basis = cfg.basis_channels if cfg is not None else 1024
    guidance = cfg.guidance_channels if cfg is not None else 1024
    transfer = cfg.codeword_transfer if cfg is not None else True

    compressed = {s: b.conv_bn_relu(f"hgd.compress{s}", features[s], compress)
                  for s in sorted(set(m32_scales) | set(m8_scales))}
    h32, w32 = height // 32, width // 32
    h8, w8 = height // 8, width // 8
    parts = [compressed[s] if s == 32 else b.bilinear(f"hgd.down{s}", compressed[s], h32, w32) for s in m32_scales]
    m32 = b.concat("hgd.m32", parts)
    parts = [compressed[s] if s == 8 else b.bilinear(f"hgd.up{s}", compressed[s], h8, w8) for s in m8_scales]
    m8 = b.concat("hgd.m8", parts)

    basis_map = b.conv_bn_relu("hgd.basis", m32, basis)
    logits = b.conv("hgd.attention", m32, n_codewords, bias=True)
    weights = b.softmax("hgd.attention.softmax", logits)
    codewords = b.matmul("hgd.codewords", [basis_map, weights], n_codewords, 1, 1)

    g = b.conv_bn_relu("hgd.guidance", m8, guidance)
    g_bar = g
    if transfer:
        g_bar = b.add("hgd.transfer", [g, b.global_pool("hgd.basis_mean", basis_map)])
    assembly_weights = b.conv("hgd.assembly_weights", g_bar, n_codewords, bias=True)
    f8_tilde = b.matmul("hgd.assembly", [assembly_weights, codewords], basis, h8, w8)
    f8_hat = b.concat("hgd.f8_hat", [f8_tilde, g])
    x = b.conv("hgd.classifier", f8_hat, n_classes, bias=True)
    b.bilinear("hgd.upsample", x, height, width)


def describe_decoder(kind: str, input: Tuple[int, int], n_codewords: int = 256, n_classes: int = 60,
                     hgd_config=None) -> ArchGraph:
    """
    Symbolic decoder head fed by ResNet101 features.

    Args:
        kind: One of DECODER_KINDS.
        input: Image size (H, W), divisible by 32.
        n_codewords: Codeword count for the hgd head.
        n_classes: Classifier outputs.
        hgd_config: Optional HGDConfig overriding channel counts, scale subsets and transfer.

    Raises:
        ConfigurationError: for an unknown kind or an indivisible input.
    """
    if kind not in DECODER_KINDS:
        raise ConfigurationError(f"Unknown decoder kind '{kind}' (expected one of {', '.join(DECODER_KINDS)})")
    height, width = _check_input(input)
    if hgd_config is not None:
        n_codewords = hgd_config.n_codewords
        n_classes = hgd_config.n_classes
    b = GraphBuilder(kind)
    if kind == "fcn32s_head":
        x = b.input("features.final", 2048, height // 32, width // 32)
        x = b.conv("head.classifier", x, n_classes, bias=True)
        b.bilinear("head.upsample", x, height, width)
    elif kind == "fcn8s_head":
        x = b.input("features.final", 2048, height // 8, width // 8)
        x = b.conv_bn_relu("head.conv", x, 512, kernel=3)
        x = b.conv("head.classifier", x, n_classes, bias=True)
        b.bilinear("head.upsample", x, height, width)
    elif kind == "hgd":
        _describe_hgd(b, height, width, n_codewords, n_classes, hgd_config)
    else:
        _describe_unet(b, height, width, n_classes, deconv=kind == "unet_deconv")
    return b.build()


def describe_model(name: str, input: Tuple[int, int], n_codewords: int = 256, n_classes: int = 60,
                   hgd_config=None) -> ArchGraph:
    """Encoder plus decoder head, wired together, for one row of the model comparison"""
    if name not in MODEL_NAMES:
        raise ConfigurationError(f"Unknown model '{name}' (expected one of {', '.join(MODEL_NAMES)})")
    if name == "dilatedfcn8s":
        encoder = describe_resnet101(input, dilated=True)
        head = describe_decoder("fcn8s_head", input, n_codewords, n_classes)
        return encoder.attach(head, {"features.final": encoder.outputs["f32"]}, name=name)
    encoder = describe_resnet101(input, dilated=False)
    if name == "fcn32s":
        head = describe_decoder("fcn32s_head", input, n_codewords, n_classes)
        return encoder.attach(head, {"features.final": encoder.outputs["f32"]}, name=name)
    kind = {"unet-bilinear": "unet_bilinear", "unet-deconv": "unet_deconv", "efficientfcn": "hgd"}[name]
    head = describe_decoder(kind, input, n_codewords, n_classes, hgd_config=hgd_config)
    bindings = {f"features.os{s}": encoder.outputs[f"f{s}"] for s in (8, 16, 32)}
    return encoder.attach(head, bindings, name=name)
