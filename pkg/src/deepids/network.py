"""Network composition: residual blocks, the sequential and branched models,
and the builders for every architecture the toolkit trains.

All models share one interface: ``forward`` returns class probabilities,
``logits`` the pre-softmax scores, ``backward`` accumulates gradients into the
named parameters, and ``state_items`` walks every persistent array in a fixed
order (the checkpoint record order).
"""

from __future__ import annotations

import numpy as np

from . import ops
from .errors import ConfigError, ShapeError
from .layers import BatchNorm1d, Conv1d, Dense, Flatten, GlobalAveragePool, Layer, Param, ReLU

# filters and kernel lengths of the four hidden blocks, in order
HIDDEN_BLOCKS = ((64, 8), (128, 8), (256, 5), (128, 3))
MAX_KERNEL = max(k for _, k in HIDDEN_BLOCKS)


class ResidualBlock:
    """conv -> batchnorm -> (+ shortcut) -> relu.

    The shortcut is the identity when channel counts match; otherwise a
    kernel-1 convolution projects the input onto the block's channel count.
    The skip join happens before the activation.
    """

    def __init__(self, in_channels: int, out_channels: int, kernel_size: int,
                 rng: np.random.Generator):
        self.conv = Conv1d(in_channels, out_channels, kernel_size, rng)
        self.bn = BatchNorm1d(out_channels)
        self.relu = ReLU()
        self.projection = (Conv1d(in_channels, out_channels, 1, rng)
                           if in_channels != out_channels else None)

    def sub_items(self):
        items = [("conv", self.conv), ("bn", self.bn)]
        if self.projection is not None:
            items.append(("proj", self.projection))
        return items

    def forward(self, x, train=False):
        main = self.bn.forward(self.conv.forward(x, train), train)
        skip = self.projection.forward(x, train) if self.projection is not None else x
        return self.relu.forward(ops.residual_add(main, skip), train)

    def backward(self, grad_out):
        grad_pre = self.relu.backward(grad_out)
        grad_main = self.conv.backward(self.bn.backward(grad_pre))
        grad_skip = (self.projection.backward(grad_pre)
                     if self.projection is not None else grad_pre)
        return grad_main + grad_skip

    def set_frozen(self, frozen: bool) -> None:
        self.bn.frozen = frozen

    def specs(self) -> list[dict]:
        begin = {"kind": "residual_begin",
                 "projection": self.projection.spec() if self.projection is not None else None}
        return [begin, self.conv.spec(), self.bn.spec(), {"kind": "residual_end"},
                {"kind": "relu"}]


def _walk(name: str, component) -> list[tuple[str, object]]:
    """Flatten a component into (qualified name, leaf layer) pairs."""
    if isinstance(component, ResidualBlock):
        out = []
        for sub_name, sub in component.sub_items():
            out.extend(_walk(f"{name}.{sub_name}", sub))
        return out
    return [(name, component)]


class _BaseNetwork:
    """Shared parameter/state bookkeeping for both network families."""

    items: list[tuple[str, object]]   # ordered (name, component)
    classes: int
    input_channels: int
    window: int
    seed: int

    def _leaves(self) -> list[tuple[str, Layer]]:
        out = []
        for name, comp in self.items:
            out.extend(_walk(name, comp))
        return out

    def parameters(self) -> list[tuple[str, Param]]:
        out = []
        for name, leaf in self._leaves():
            out.extend((f"{name}.{p.name}", p) for p in leaf.params())
        return out

    def state_items(self) -> list[tuple[str, np.ndarray]]:
        out = []
        for name, leaf in self._leaves():
            out.extend((f"{name}.{key}", arr) for key, arr in leaf.state())
        return out

    def zero_grad(self) -> None:
        for _, p in self.parameters():
            p.grad[...] = 0.0

    def snapshot(self) -> dict[str, np.ndarray]:
        return {name: arr.copy() for name, arr in self.state_items()}

    def restore(self, saved: dict[str, np.ndarray]) -> None:
        for name, arr in self.state_items():
            arr[...] = saved[name]

    def forward(self, x, train: bool = False) -> np.ndarray:
        return ops.softmax(self.logits(x, train))

    def _check_input(self, x) -> np.ndarray:
        x = np.ascontiguousarray(x, dtype=np.float64)
        if x.ndim != 3:
            raise ShapeError(f"expected a [N, channels, window] batch, got shape {x.shape}")
        if x.shape[1] != self.input_channels or x.shape[2] != self.window:
            raise ShapeError(
                f"batch geometry {x.shape[1:]} does not match network input "
                f"({self.input_channels}, {self.window})")
        return x

    def logits(self, x, train: bool = False) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad_logits: np.ndarray) -> None:
        raise NotImplementedError

    def features(self, x) -> np.ndarray:
        raise NotImplementedError

    def arch(self) -> dict:
        raise NotImplementedError


class SequentialNetwork(_BaseNetwork):
    def __init__(self, items, classes, input_channels, window, seed, builder, builder_args):
        self.items = items
        self.classes = classes
        self.input_channels = input_channels
        self.window = window
        self.seed = seed
        self.builder = builder
        self.builder_args = builder_args
        # feature boundary: right after the last GAP (conv nets) or before the
        # head dense layer (mlp)
        self._feature_after = None
        for name, comp in items:
            if isinstance(comp, GlobalAveragePool):
                self._feature_after = name

    def hidden_blocks(self) -> list[tuple[str, ResidualBlock]]:
        return [(name, comp) for name, comp in self.items if isinstance(comp, ResidualBlock)]

    def logits(self, x, train=False):
        h = self._check_input(x)
        for _, comp in self.items:
            h = comp.forward(h, train)
        return h

    def backward(self, grad_logits):
        g = grad_logits
        for _, comp in reversed(self.items):
            g = comp.backward(g)
        return g

    def features(self, x):
        h = self._check_input(x)
        boundary = self._feature_after
        for name, comp in self.items:
            if boundary is None and isinstance(comp, Dense) and name == self.items[-1][0]:
                break  # mlp: features are the activations feeding the head
            h = comp.forward(h, train=False)
            if name == boundary:
                break
        return h

    def layer_specs(self) -> list[dict]:
        specs = []
        for _, comp in self.items:
            specs.extend(comp.specs() if isinstance(comp, ResidualBlock) else [comp.spec()])
        specs.append({"kind": "softmax"})
        return specs

    def arch(self) -> dict:
        return {"family": "sequential", "builder": self.builder, **self.builder_args,
                "seed": self.seed}


class MultiChannelNetwork(_BaseNetwork):
    """One single-channel hidden stack per input channel, merged by a dense head.

    Input is normalized across all channels, each channel then flows through
    its own branch of residual blocks, branch features are pooled and
    concatenated, and a dense + relu head feeds the classification layer.
    """

    def __init__(self, branches: int, window: int, classes: int, seed: int,
                 head_units: int = 128):
        if branches < 1:
            raise ConfigError("multi-channel network needs at least 1 branch")
        _validate_conv_geometry(window, classes)
        self.n_branches = branches
        self.head_units = head_units
        self.classes = classes
        self.input_channels = branches
        self.window = window
        self.seed = seed
        rng = np.random.default_rng(seed)
        self.input_bn = BatchNorm1d(branches)
        self.branches: list[list[ResidualBlock]] = []
        self.branch_gaps: list[GlobalAveragePool] = []
        for _ in range(branches):
            self.branches.append(_hidden_stack(1, rng))
            self.branch_gaps.append(GlobalAveragePool())
        feat = HIDDEN_BLOCKS[-1][0] * branches
        self.head_dense = Dense(feat, head_units, rng)
        self.head_relu = ReLU()
        self.out = Dense(head_units, classes, rng)
        self.items = self._build_items()

    def _build_items(self):
        items = [("input_bn", self.input_bn)]
        for k, stack in enumerate(self.branches, start=1):
            for j, block in enumerate(stack, start=1):
                items.append((f"branch{k}.block{j}", block))
        items.append(("head_dense", self.head_dense))
        items.append(("out", self.out))
        return items

    def branch_param_names(self) -> list[str]:
        return [name for name, _ in self.parameters() if name.startswith("branch")]

    def logits(self, x, train=False):
        h = self.input_bn.forward(self._check_input(x), train)
        feats = []
        for k, stack in enumerate(self.branches):
            b = h[:, k:k + 1, :]
            for block in stack:
                b = block.forward(b, train)
            feats.append(self.branch_gaps[k].forward(b, train))
        merged = np.concatenate(feats, axis=1)
        hidden = self.head_relu.forward(self.head_dense.forward(merged, train), train)
        return self.out.forward(hidden, train)

    def backward(self, grad_logits):
        g = self.head_dense.backward(self.head_relu.backward(self.out.backward(grad_logits)))
        width = HIDDEN_BLOCKS[-1][0]
        channel_grads = []
        for k, stack in enumerate(self.branches):
            gb = self.branch_gaps[k].backward(g[:, k * width:(k + 1) * width])
            for block in reversed(stack):
                gb = block.backward(gb)
            channel_grads.append(gb)
        return self.input_bn.backward(np.concatenate(channel_grads, axis=1))

    def features(self, x):
        h = self.input_bn.forward(self._check_input(x), train=False)
        feats = []
        for k, stack in enumerate(self.branches):
            b = h[:, k:k + 1, :]
            for block in stack:
                b = block.forward(b, train=False)
            feats.append(self.branch_gaps[k].forward(b, train=False))
        return np.concatenate(feats, axis=1)

    def set_branches_frozen(self, frozen: bool) -> None:
        for stack in self.branches:
            for block in stack:
                block.set_frozen(frozen)

    def layer_specs(self) -> dict:
        branch = []
        for block in self.branches[0]:
            branch.extend(block.specs())
        branch.append({"kind": "gap"})
        head = [self.head_dense.spec(), {"kind": "relu"}, self.out.spec(), {"kind": "softmax"}]
        return {"input": [self.input_bn.spec()], "branch": branch, "head": head}

    def arch(self) -> dict:
        return {"family": "multi", "builder": "multi", "branches": self.n_branches,
                "window": self.window, "classes": self.classes,
                "head_units": self.head_units, "seed": self.seed}


def _hidden_stack(in_channels: int, rng: np.random.Generator) -> list[ResidualBlock]:
    blocks = []
    channels = in_channels
    for filters, kernel in HIDDEN_BLOCKS:
        blocks.append(ResidualBlock(channels, filters, kernel, rng))
        channels = filters
    return blocks


def _validate_conv_geometry(window: int, classes: int) -> None:
    if window < MAX_KERNEL:
        raise ConfigError(f"window must be >= {MAX_KERNEL} (largest kernel), got {window}")
    if classes < 2:
        raise ConfigError(f"need at least 2 classes, got {classes}")


def build_presnet(channels: int, window: int, classes: int, seed: int) -> SequentialNetwork:
    """Four residual conv blocks, global average pooling, softmax head."""
    if channels < 1:
        raise ConfigError(f"channels must be >= 1, got {channels}")
    _validate_conv_geometry(window, classes)
    rng = np.random.default_rng(seed)
    items: list[tuple[str, object]] = []
    for j, block in enumerate(_hidden_stack(channels, rng), start=1):
        items.append((f"block{j}", block))
    items.append(("gap", GlobalAveragePool()))
    items.append(("head", Dense(HIDDEN_BLOCKS[-1][0], classes, rng)))
    return SequentialNetwork(items, classes, channels, window, seed, "presnet",
                             {"channels": channels, "window": window, "classes": classes})


def build_single_channel_dnn(window: int, classes: int, seed: int) -> SequentialNetwork:
    """The source model: input batch norm, the four hidden blocks on one
    channel, pooling, and a softmax head."""
    _validate_conv_geometry(window, classes)
    rng = np.random.default_rng(seed)
    items: list[tuple[str, object]] = [("input_bn", BatchNorm1d(1))]
    for j, block in enumerate(_hidden_stack(1, rng), start=1):
        items.append((f"block{j}", block))
    items.append(("gap", GlobalAveragePool()))
    items.append(("head", Dense(HIDDEN_BLOCKS[-1][0], classes, rng)))
    return SequentialNetwork(items, classes, 1, window, seed, "single",
                             {"window": window, "classes": classes})


def build_multi_channel_dnn(branches: int, window: int, classes: int, seed: int,
                            head_units: int = 128) -> MultiChannelNetwork:
    return MultiChannelNetwork(branches, window, classes, seed, head_units)


def build_baseline(kind: str, channels: int, window: int, classes: int, seed: int) -> SequentialNetwork:
    """Reference models: a 3x500 MLP and a 3-block fully convolutional net."""
    if channels < 1:
        raise ConfigError(f"channels must be >= 1, got {channels}")
    rng = np.random.default_rng(seed)
    if kind == "mlp":
        if classes < 2:
            raise ConfigError(f"need at least 2 classes, got {classes}")
        items: list[tuple[str, object]] = [("flatten", Flatten())]
        width = channels * window
        for j in range(1, 4):
            items.append((f"dense{j}", Dense(width, 500, rng)))
            items.append((f"relu{j}", ReLU()))
            width = 500
        items.append(("head", Dense(500, classes, rng)))
    elif kind == "fcn":
        _validate_conv_geometry(window, classes)
        items = []
        width = channels
        for j, (filters, kernel) in enumerate(((128, 8), (256, 5), (128, 3)), start=1):
            items.append((f"conv{j}", Conv1d(width, filters, kernel, rng)))
            items.append((f"bn{j}", BatchNorm1d(filters)))
            items.append((f"relu{j}", ReLU()))
            width = filters
        items.append(("gap", GlobalAveragePool()))
        items.append(("head", Dense(128, classes, rng)))
    else:
        raise ConfigError(f"unknown baseline kind {kind!r} (expected 'mlp' or 'fcn')")
    return SequentialNetwork(items, classes, channels, window, seed, kind,
                             {"channels": channels, "window": window, "classes": classes})


def build_from_arch(arch: dict):
    """Reconstruct a network from its ``arch()`` dictionary (checkpoint load)."""
    builder = arch.get("builder")
    if builder == "presnet":
        return build_presnet(arch["channels"], arch["window"], arch["classes"], arch["seed"])
    if builder == "single":
        return build_single_channel_dnn(arch["window"], arch["classes"], arch["seed"])
    if builder == "multi":
        return build_multi_channel_dnn(arch["branches"], arch["window"], arch["classes"],
                                       arch["seed"], arch.get("head_units", 128))
    if builder in ("mlp", "fcn"):
        return build_baseline(builder, arch["channels"], arch["window"], arch["classes"],
                              arch["seed"])
    raise ConfigError(f"unknown builder {builder!r} in architecture spec")


def count_params(net) -> int:
    """Total stored parameter values (weights, biases, and per-channel
    batch-norm arrays), the number reported next to timing results."""
    return int(sum(arr.size for _, arr in net.state_items()))
