"""3-D DenseNet-BC classifier.

Topology: a 3x3x3 stem (stride 1, pad 1), four dense blocks of five
composite layers each (BN -> ReLU -> 1x1x1 conv to 4k -> BN -> ReLU ->
3x3x3 conv to k, concatenated onto the running feature stack), transition
layers (BN -> ReLU -> 1x1x1 compression conv -> 2x2x2 average pool) between
consecutive blocks only, then BN -> ReLU -> global average pool -> linear ->
softmax.  Component outputs are addressable by stable names
(e.g. "block1.layer3.conv3", "transition3.conv") for activation capture.
"""

import json
import os
from dataclasses import dataclass, asdict

import numpy as np

from .errors import ModelError
from .nn import functional as F
from .nn.functional import BnState
from .nn.tensor import Tensor

CKPT_MAGIC = "CKPT1"


@dataclass
class ArchConfig:
    growth_rate: int = 16
    init_channels: int = 0          # 0 -> 2 * growth_rate
    num_blocks: int = 4
    layers_per_block: int = 5
    bottleneck_factor: int = 4      # 1x1x1 conv widens to bottleneck_factor * growth
    compression: float = 0.5
    num_classes: int = 2
    input_shape: tuple = (224, 224, 30)
    fixed_topology: bool = True     # enforce the reference 4-block x 5-layer layout

    def __post_init__(self):
        if self.init_channels == 0:
            self.init_channels = 2 * self.growth_rate
        self.input_shape = tuple(int(x) for x in self.input_shape)
        if self.fixed_topology and (self.num_blocks != 4 or self.layers_per_block != 5):
            raise ModelError("fixed topology requires 4 blocks of 5 layers")
        if self.growth_rate < 1 or self.init_channels < 1:
            raise ModelError("growth_rate and init_channels must be positive")
        if not 0.0 < self.compression <= 1.0:
            raise ModelError("compression must lie in (0, 1]")
        if self.num_classes not in (2, 4):
            raise ModelError("num_classes must be 2 or 4")
        if len(self.input_shape) != 3 or min(self.input_shape) < 8:
            raise ModelError(f"input_shape too small: {self.input_shape}")


class Conv3d:
    def __init__(self, name, in_ch, out_ch, kernel, stride=1, padding=0):
        self.name = name
        self.in_channels, self.out_channels = in_ch, out_ch
        self.kernel, self.stride, self.padding = kernel, stride, padding
        self.weight = None  # set by init

    def init_params(self, rng, dtype):
        fan_in = self.in_channels * self.kernel ** 3
        std = np.sqrt(2.0 / fan_in)
        w = rng.standard_normal((self.out_channels, self.in_channels,
                                 self.kernel, self.kernel, self.kernel))
        self.weight = Tensor((w * std).astype(dtype), requires_grad=True, op=self.name + ".weight")

    def __call__(self, x):
        return F.conv3d(x, self.weight, stride=self.stride, padding=self.padding)

    def params(self):
        return [(self.name + ".weight", self.weight)]


class BatchNorm3d:
    def __init__(self, name, channels, momentum=0.1, eps=1e-5):
        self.name = name
        self.channels = channels
        self.momentum, self.eps = momentum, eps
        self.gamma = self.beta = None
        self.state = None

    def init_params(self, rng, dtype):
        self.gamma = Tensor(np.ones(self.channels, dtype=dtype), requires_grad=True,
                            op=self.name + ".gamma")
        self.beta = Tensor(np.zeros(self.channels, dtype=dtype), requires_grad=True,
                           op=self.name + ".beta")
        self.state = BnState(self.channels, dtype=dtype)

    def __call__(self, x, training):
        return F.batch_norm3d(x, self.gamma, self.beta, self.state, training,
                              self.momentum, self.eps)

    def params(self):
        return [(self.name + ".gamma", self.gamma), (self.name + ".beta", self.beta)]

    def buffers(self):
        return [(self.name + ".running_mean", self.state.running_mean),
                (self.name + ".running_var", self.state.running_var)]


class Linear:
    def __init__(self, name, in_features, out_features):
        self.name = name
        self.in_features, self.out_features = in_features, out_features
        self.weight = self.bias = None

    def init_params(self, rng, dtype):
        std = np.sqrt(2.0 / self.in_features)
        w = rng.standard_normal((self.out_features, self.in_features))
        self.weight = Tensor((w * std).astype(dtype), requires_grad=True, op=self.name + ".weight")
        self.bias = Tensor(np.zeros(self.out_features, dtype=dtype), requires_grad=True,
                           op=self.name + ".bias")

    def __call__(self, x):
        return F.linear(x, self.weight, self.bias)

    def params(self):
        return [(self.name + ".weight", self.weight), (self.name + ".bias", self.bias)]


class DenseLayer:
    """Pre-activation bottleneck composite; adds growth_rate channels."""

    def __init__(self, name, in_ch, growth, bottleneck_factor):
        width = bottleneck_factor * growth
        self.bn1 = BatchNorm3d(f"{name}.bn1", in_ch)
        self.conv1 = Conv3d(f"{name}.conv1", in_ch, width, kernel=1)
        self.bn2 = BatchNorm3d(f"{name}.bn2", width)
        self.conv3 = Conv3d(f"{name}.conv3", width, growth, kernel=3, padding=1)
        self.in_channels = in_ch

    def components(self):
        return [self.bn1, self.conv1, self.bn2, self.conv3]


class Transition:
    """Compression + downsampling between consecutive dense blocks."""

    def __init__(self, name, in_ch, compression):
        out_ch = int(in_ch * compression)
        self.bn = BatchNorm3d(f"{name}.bn", in_ch)
        self.conv = Conv3d(f"{name}.conv", in_ch, out_ch, kernel=1)
        self.out_channels = out_ch

    def components(self):
        return [self.bn, self.conv]


class ForwardResult:
    def __init__(self, probs, logits, captured=None):
        self.probs = probs
        self.logits = logits
        self.captured = captured


class Model:
    def __init__(self, cfg: ArchConfig):
        self.cfg = cfg
        self.stem = Conv3d("stem.conv", 1, cfg.init_channels, kernel=3, padding=1)
        self.blocks = []
        self.transitions = []
        channels = cfg.init_channels
        for b in range(1, cfg.num_blocks + 1):
            layers = []
            for l in range(1, cfg.layers_per_block + 1):
                layers.append(DenseLayer(f"block{b}.layer{l}", channels,
                                         cfg.growth_rate, cfg.bottleneck_factor))
                channels += cfg.growth_rate
            self.blocks.append(layers)
            if b < cfg.num_blocks:
                tr = Transition(f"transition{b}", channels, cfg.compression)
                self.transitions.append(tr)
                channels = tr.out_channels
        self.head_bn = BatchNorm3d("head.bn", channels)
        self.head_linear = Linear("head.linear", channels, cfg.num_classes)
        self.feature_channels = channels

    def _components(self):
        comps = [self.stem]
        for b, layers in enumerate(self.blocks, start=1):
            for layer in layers:
                comps.extend(layer.components())
            if b <= len(self.transitions):
                comps.extend(self.transitions[b - 1].components())
        comps.extend([self.head_bn, self.head_linear])
        return comps

    def init_params(self, seed: int, dtype=np.float32):
        rng = np.random.default_rng(seed)
        for comp in self._components():
            comp.init_params(rng, dtype)
        return self

    def parameters(self):
        out = []
        for comp in self._components():
            out.extend(comp.params())
        return out

    def buffers(self):
        out = []
        for comp in self._components():
            if isinstance(comp, BatchNorm3d):
                out.extend(comp.buffers())
        return out

    def bn_layers(self):
        return [c for c in self._components() if isinstance(c, BatchNorm3d)]

    def capture_names(self):
        names = []
        for comp in self._components():
            names.append(comp.name)
        return names

    def forward(self, x, training=False, capture=None) -> ForwardResult:
        """Run the network; optionally return the activation of a named component."""
        if capture is not None and capture not in self.capture_names():
            raise ModelError(f"unknown capture layer {capture!r}; "
                             f"valid names include {self.capture_names()[:4]} ...")
        if not isinstance(x, Tensor):
            x = Tensor(np.asarray(x))
        if x.data.ndim != 5 or x.shape[1] != 1:
            raise ModelError(f"expected input (N,1,H,W,D), got {x.shape}")
        if tuple(x.shape[2:]) != self.cfg.input_shape:
            raise ModelError(f"input spatial shape {tuple(x.shape[2:])} does not match "
                             f"config {self.cfg.input_shape}")
        captured = [None]

        def tap(name, tensor):
            if capture == name:
                captured[0] = tensor
            return tensor

        out = tap(self.stem.name, self.stem(x))
        for b, layers in enumerate(self.blocks, start=1):
            for layer in layers:
                h = tap(layer.bn1.name, layer.bn1(out, training))
                h = F.relu(h)
                h = tap(layer.conv1.name, layer.conv1(h))
                h = tap(layer.bn2.name, layer.bn2(h, training))
                h = F.relu(h)
                h = tap(layer.conv3.name, layer.conv3(h))
                out = F.concat_channels([out, h])
            if b <= len(self.transitions):
                tr = self.transitions[b - 1]
                h = tap(tr.bn.name, tr.bn(out, training))
                h = F.relu(h)
                h = tap(tr.conv.name, tr.conv(h))
                out = F.avg_pool3d(h, window=2)
        h = tap(self.head_bn.name, self.head_bn(out, training))
        h = F.relu(h)
        pooled = F.global_avg_pool(h)
        logits = tap(self.head_linear.name, self.head_linear(pooled))
        probs = F.softmax(logits)
        return ForwardResult(probs, logits, captured[0])

    def param_count(self) -> int:
        return sum(int(np.prod(t.shape)) for _, t in self.parameters())

    def zero_grad(self):
        for _, t in self.parameters():
            t.grad = None


def build_model(cfg: ArchConfig, seed: int, dtype=np.float32) -> Model:
    """Deterministic He-normal initialization from (cfg, seed)."""
    return Model(cfg).init_params(seed, dtype)


def final_transition_conv(model: Model) -> str:
    """Default attention-capture layer: the conv of the last transition."""
    return model.transitions[-1].conv.name


# ---------------------------------------------------------------------------
# checkpoints: one JSON header line + little-endian float32 payloads

def save_checkpoint(path, model: Model, adam_state=None, meta=None) -> None:
    tensors = []
    arrays = []
    for name, t in model.parameters():
        tensors.append([name, list(t.shape), "param"])
        arrays.append(np.ascontiguousarray(t.data, dtype="<f4"))
    for name, buf in model.buffers():
        tensors.append([name, list(buf.shape), "buffer"])
        arrays.append(np.ascontiguousarray(buf, dtype="<f4"))
    adam_step = None
    if adam_state is not None:
        adam_step = adam_state.step
        for name, _ in model.parameters():
            for kind, store in (("adam_m", adam_state.m), ("adam_v", adam_state.v)):
                arr = store[name]
                tensors.append([name, list(arr.shape), kind])
                arrays.append(np.ascontiguousarray(arr, dtype="<f4"))
    header = {
        "magic": CKPT_MAGIC,
        "version": 1,
        "arch": asdict(model.cfg),
        "tensors": tensors,
        "adam_step": adam_step,
        "bn_batches": [bn.state.batches_tracked for bn in model.bn_layers()],
        "meta": meta or {},
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8"))
        fh.write(b"\n")
        for arr in arrays:
            fh.write(arr.tobytes())


def load_checkpoint(path, dtype=np.float32):
    """Returns (model, adam_state_dict_or_None, meta); validates every shape."""
    from .optim import AdamState

    if not os.path.exists(path):
        raise ModelError(f"no such checkpoint: {path}")
    with open(path, "rb") as fh:
        try:
            header = json.loads(fh.readline().decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise ModelError(f"bad checkpoint header: {exc}") from exc
        if header.get("magic") != CKPT_MAGIC:
            raise ModelError(f"bad checkpoint magic: {header.get('magic')!r}")
        arch = header["arch"]
        arch["input_shape"] = tuple(arch["input_shape"])
        cfg = ArchConfig(**arch)
        model = build_model(cfg, seed=0, dtype=dtype)
        params = dict(model.parameters())
        buffers = dict(model.buffers())
        adam = AdamState() if header.get("adam_step") is not None else None
        if adam is not None:
            adam.step = int(header["adam_step"])
        for name, shape, kind in header["tensors"]:
            n_items = int(np.prod(shape)) if shape else 1
            raw = fh.read(n_items * 4)
            if len(raw) != n_items * 4:
                raise ModelError(f"checkpoint payload truncated at {name}")
            arr = np.frombuffer(raw, dtype="<f4").reshape(shape)
            if kind == "param":
                if name not in params or list(params[name].shape) != list(shape):
                    raise ModelError(f"unexpected param {name} with shape {shape}")
                params[name].data = arr.astype(dtype)
            elif kind == "buffer":
                if name not in buffers or list(buffers[name].shape) != list(shape):
                    raise ModelError(f"unexpected buffer {name} with shape {shape}")
                buffers[name][...] = arr
            elif kind in ("adam_m", "adam_v"):
                store = adam.m if kind == "adam_m" else adam.v
                store[name] = arr.astype(np.float32).copy()
            else:
                raise ModelError(f"unknown tensor kind {kind!r}")
        for bn, batches in zip(model.bn_layers(), header.get("bn_batches", [])):
            bn.state.batches_tracked = int(batches)
    return model, adam, header.get("meta", {})
