"""Builders for the six malaria-classification architectures.

``scale`` multiplies every convolution width and hidden dense width (and the
DenseNet block depths / Xception middle-flow repeats); the two-unit output
layer never scales. ``scale=1`` reproduces the full-size networks.

All heads end in a 2-unit dense layer producing logits. Training and
inference normalize those with softmax; the activation named in each
architecture's original description is kept in ``metadata["described_activation"]``.
"""
from __future__ import annotations

from fractions import Fraction
from typing import Callable

import numpy as np

from .errors import ConfigError
from .graph import INPUT, Model
from .layers import (Activation, BatchNorm, ChannelScale, Concat, Conv2D, Dense,
                     DepthwiseSeparableConv2D, Dropout, Flatten, GlobalPool, Pool2D, ResidualAdd)
from . import tensor as T

DESK_SCALE = Fraction(1, 4)
DESK_INPUT = (64, 64, 3)
FULL_INPUT = (128, 128, 3)


def width(n: int, scale: float) -> int:
    return max(1, int(round(n * float(scale))))


def _check_input(name: str, input_shape, divisor: int) -> tuple[int, int, int]:
    shape = tuple(int(s) for s in input_shape)
    if len(shape) != 3 or min(shape) < 1:
        raise ConfigError(f"{name}: input shape must be [H, W, C], got {shape}")
    h, w, _ = shape
    if h % divisor or w % divisor:
        raise ConfigError(f"{name}: spatial extents {h}x{w} must be divisible by {divisor}")
    return shape


def _check_scale(scale) -> float:
    if float(scale) <= 0:
        raise ConfigError(f"scale must be positive, got {scale}")
    return float(scale)


def _conv_bn_relu(m: Model, prefix: str, filters: int, kernel: int, stride: int = 1,
                  padding: str = "same", use_bias: bool = True, eps: float = 1e-3, block=None,
                  inputs=None) -> str:
    m.add(f"{prefix}_conv", Conv2D(filters, kernel, stride, padding, use_bias=use_bias), inputs, block)
    m.add(f"{prefix}_bn", BatchNorm(eps=eps), block=block)
    return m.add(f"{prefix}_relu", Activation("relu"), block=block)


def build_custom_cnn(input_shape=FULL_INPUT, scale=1, seed: int = 0, dtype=T.DEFAULT_DTYPE,
                     dropout: float = 0.25) -> Model:
    """Three conv blocks (32/64/128 filters), each conv -> BN -> ReLU -> 2x2 max-pool -> dropout."""
    shape = _check_input("custom_cnn", input_shape, 8)
    scale = _check_scale(scale)
    m = Model("custom_cnn", shape, scale, seed, dtype,
              {"described_activation": "sigmoid", "output_activation": "softmax", "head_only_trainable": False})
    for i, filters in enumerate((32, 64, 128), start=1):
        block = f"block{i}"
        _conv_bn_relu(m, block, width(filters, scale), 3, block=block)
        m.add(f"{block}_pool", Pool2D("max", 2, 2), block=block)
        m.add(f"{block}_dropout", Dropout(dropout), block=block)
    m.add("flatten", Flatten())
    m.add("fc1", Dense(width(128, scale)))
    m.add("fc1_relu", Activation("relu"))
    m.add("output", Dense(2))
    return m


def build_alexnet(input_shape=FULL_INPUT, scale=1, seed: int = 0, dtype=T.DEFAULT_DTYPE) -> Model:
    """Five-conv AlexNet with two 4096-unit dense layers.

    Pooling is valid-padded for inputs of at least 67 pixels. Smaller inputs
    (down to 63) would shrink the final feature map below the 3x3 pooling
    window, so they switch the three pools to same padding.
    """
    shape = _check_input("alexnet", input_shape, 1)
    scale = _check_scale(scale)
    if min(shape[:2]) < 63:
        raise ConfigError(f"alexnet: input {shape[0]}x{shape[1]} too small for the stride-4 stem (need >= 63)")
    pool_pad = "valid" if min(shape[:2]) >= 67 else "same"
    m = Model("alexnet", shape, scale, seed, dtype,
              {"described_activation": "sigmoid", "output_activation": "softmax",
               "head_only_trainable": False, "pool_padding": pool_pad})
    m.add("conv1", Conv2D(width(96, scale), 11, 4, "valid"))
    m.add("conv1_relu", Activation("relu"))
    m.add("pool1", Pool2D("max", 3, 2, pool_pad))
    m.add("conv2", Conv2D(width(256, scale), 5, 1, "same"))
    m.add("conv2_relu", Activation("relu"))
    m.add("pool2", Pool2D("max", 3, 2, pool_pad))
    for i, filters in ((3, 384), (4, 384), (5, 256)):
        m.add(f"conv{i}", Conv2D(width(filters, scale), 3, 1, "same"))
        m.add(f"conv{i}_relu", Activation("relu"))
    m.add("pool5", Pool2D("max", 3, 2, pool_pad))
    m.add("flatten", Flatten())
    for i in (6, 7):
        m.add(f"fc{i}", Dense(width(4096, scale)))
        m.add(f"fc{i}_relu", Activation("relu"))
        m.add(f"fc{i}_dropout", Dropout(0.5))
    m.add("output", Dense(2))
    return m


VGG19_BLOCKS = ((2, 64), (2, 128), (4, 256), (4, 512), (4, 512))


def build_vgg19(input_shape=FULL_INPUT, scale=1, head_only_trainable: bool = True, seed: int = 0,
                dtype=T.DEFAULT_DTYPE) -> Model:
    shape = _check_input("vgg19", input_shape, 32)
    scale = _check_scale(scale)
    m = Model("vgg19", shape, scale, seed, dtype,
              {"described_activation": "sigmoid", "output_activation": "softmax",
               "head_only_trainable": head_only_trainable})
    base = []
    for b, (n_convs, filters) in enumerate(VGG19_BLOCKS, start=1):
        for c in range(1, n_convs + 1):
            base.append(m.add(f"block{b}_conv{c}", Conv2D(width(filters, scale), 3, 1, "same"), block="base"))
            base.append(m.add(f"block{b}_conv{c}_relu", Activation("relu"), block="base"))
        base.append(m.add(f"block{b}_pool", Pool2D("max", 2, 2), block="base"))
    if head_only_trainable:
        m.freeze(base)
    m.add("flatten", Flatten(), block="head")
    m.add("fc1", Dense(width(512, scale)), block="head")
    m.add("fc1_relu", Activation("relu"), block="head")
    m.add("output", Dense(2), block="head")
    return m


DENSENET121_BLOCKS = (6, 12, 24, 16)


def build_densenet121(input_shape=FULL_INPUT, scale=1, head_only_trainable: bool = True, seed: int = 0,
                      dtype=T.DEFAULT_DTYPE) -> Model:
    """DenseNet-121 base (bias-free convs, growth 32, compression 0.5) with a GAP/512/dropout head."""
    shape = _check_input("densenet121", input_shape, 32)
    scale = _check_scale(scale)
    growth = width(32, scale)
    eps = 1.001e-5
    m = Model("densenet121", shape, scale, seed, dtype,
              {"described_activation": "sigmoid", "output_activation": "softmax",
               "head_only_trainable": head_only_trainable})
    _conv_bn_relu(m, "stem", width(64, scale), 7, 2, "same", use_bias=False, eps=eps, block="base")
    x = m.add("stem_pool", Pool2D("max", 3, 2, "same"), block="base")
    for b, depth in enumerate(DENSENET121_BLOCKS, start=1):
        for layer in range(1, width(depth, scale) + 1):
            p = f"dense{b}_{layer}"
            m.add(f"{p}_bn1", BatchNorm(eps=eps), x, "base")
            m.add(f"{p}_relu1", Activation("relu"), block="base")
            m.add(f"{p}_conv1", Conv2D(4 * growth, 1, use_bias=False), block="base")
            m.add(f"{p}_bn2", BatchNorm(eps=eps), block="base")
            m.add(f"{p}_relu2", Activation("relu"), block="base")
            new = m.add(f"{p}_conv2", Conv2D(growth, 3, padding="same", use_bias=False), block="base")
            x = m.add(f"{p}_concat", Concat(), [x, new], "base")
        if b < len(DENSENET121_BLOCKS):
            channels = m.shape_of(x)[-1]
            m.add(f"transition{b}_bn", BatchNorm(eps=eps), x, "base")
            m.add(f"transition{b}_relu", Activation("relu"), block="base")
            m.add(f"transition{b}_conv", Conv2D(channels // 2, 1, use_bias=False), block="base")
            x = m.add(f"transition{b}_pool", Pool2D("avg", 2, 2), block="base")
    m.add("final_bn", BatchNorm(eps=eps), x, "base")
    m.add("final_relu", Activation("relu"), block="base")
    if head_only_trainable:
        m.freeze([n.name for n in m.nodes])
    m.add("gap", GlobalPool("avg"), block="head")
    m.add("fc1", Dense(width(512, scale)), block="head")
    m.add("fc1_relu", Activation("relu"), block="head")
    m.add("fc1_dropout", Dropout(0.5), block="head")
    m.add("output", Dense(2), block="head")
    return m


def build_residual_attention_net(input_shape=FULL_INPUT, scale=1, seed: int = 0,
                                 dtype=T.DEFAULT_DTYPE) -> Model:
    """Conv trunk with a sigmoid channel-attention branch fused as ``trunk + trunk * gate``."""
    shape = _check_input("res_attention", input_shape, 1)
    scale = _check_scale(scale)
    m = Model("res_attention", shape, scale, seed, dtype,
              {"described_activation": "sigmoid", "output_activation": "softmax",
               "head_only_trainable": False, "gate_fusion": "trunk + trunk * gate"})
    channels = width(64, scale)
    for i in (1, 2, 3):
        trunk = _conv_bn_relu(m, f"trunk{i}", channels, 3, block="trunk")
    m.add("attn_gap", GlobalPool("avg"), trunk, "attention")
    m.add("attn_fc1", Dense(width(32, scale)), block="attention")
    m.add("attn_fc1_relu", Activation("relu"), block="attention")
    m.add("attn_fc2", Dense(channels), block="attention")
    gate = m.add("attn_gate", Activation("sigmoid"), block="attention")
    scaled = m.add("attn_scale", ChannelScale(), [trunk, gate], "attention")
    m.add("attn_residual", ResidualAdd(), [trunk, scaled], "attention")
    m.add("gap", GlobalPool("avg"), block="head")
    m.add("output", Dense(2), block="head")
    return m


def build_xceptionnet(input_shape=FULL_INPUT, scale=1, head_only_trainable: bool = False, seed: int = 0,
                      dtype=T.DEFAULT_DTYPE, middle_repeats: int | None = None) -> Model:
    """Xception entry/middle/exit flows of bias-free separable convs, plus the dense head.

    Head: global max pool -> flatten -> dropout 0.3 -> dense 128 ReLU -> BN ->
    dropout 0.3 -> dense 64 ReLU -> dropout 0.25 -> dense 2 (softmax).
    """
    shape = _check_input("xception", input_shape, 32)
    scale = _check_scale(scale)
    if middle_repeats is None:
        middle_repeats = max(1, int(round(8 * scale)))
    m = Model("xception", shape, scale, seed, dtype,
              {"described_activation": "softmax", "output_activation": "softmax",
               "head_only_trainable": head_only_trainable, "middle_repeats": middle_repeats})
    w = lambda n: width(n, scale)  # noqa: E731

    def sep(name, filters, relu_first, inputs=None):
        if relu_first:
            m.add(f"{name}_relu", Activation("relu"), inputs, "base")
            inputs = None
        m.add(f"{name}_sepconv", DepthwiseSeparableConv2D(filters, 3, 1, "same", use_bias=False), inputs, "base")
        return m.add(f"{name}_bn", BatchNorm(), block="base")

    _conv_bn_relu(m, "entry1", w(32), 3, 2, "valid", use_bias=False, block="base")
    x = _conv_bn_relu(m, "entry2", w(64), 3, 1, "valid", use_bias=False, block="base")

    def downsample_block(name, filters_a, filters_b, x, relu_first):
        m.add(f"{name}_skip_conv", Conv2D(filters_b, 1, 2, "same", use_bias=False), x, "base")
        skip = m.add(f"{name}_skip_bn", BatchNorm(), block="base")
        sep(f"{name}_a", filters_a, relu_first, x)
        sep(f"{name}_b", filters_b, True)
        pooled = m.add(f"{name}_pool", Pool2D("max", 3, 2, "same"), block="base")
        return m.add(f"{name}_add", ResidualAdd(), [pooled, skip], "base")

    x = downsample_block("entry_block1", w(128), w(128), x, relu_first=False)
    x = downsample_block("entry_block2", w(256), w(256), x, relu_first=True)
    x = downsample_block("entry_block3", w(728), w(728), x, relu_first=True)
    for r in range(1, middle_repeats + 1):
        residual = x
        y = sep(f"middle{r}_a", w(728), True, x)
        y = sep(f"middle{r}_b", w(728), True)
        y = sep(f"middle{r}_c", w(728), True)
        x = m.add(f"middle{r}_add", ResidualAdd(), [y, residual], "base")
    x = downsample_block("exit_block", w(728), w(1024), x, relu_first=True)
    sep("exit_sep1", w(1536), False, x)
    m.add("exit_sep1_out_relu", Activation("relu"), block="base")
    sep("exit_sep2", w(2048), False)
    m.add("exit_sep2_out_relu", Activation("relu"), block="base")
    if head_only_trainable:
        m.freeze([n.name for n in m.nodes])

    m.add("global_max_pool", GlobalPool("max"), block="head")
    m.add("flatten", Flatten(), block="head")
    m.add("head_dropout1", Dropout(0.3), block="head")
    m.add("fc1", Dense(w(128)), block="head")
    m.add("fc1_relu", Activation("relu"), block="head")
    m.add("fc1_bn", BatchNorm(), block="head")
    m.add("head_dropout2", Dropout(0.3), block="head")
    m.add("fc2", Dense(w(64)), block="head")
    m.add("fc2_relu", Activation("relu"), block="head")
    m.add("head_dropout3", Dropout(0.25), block="head")
    m.add("output", Dense(2), block="head")
    return m


REGISTRY: dict[str, Callable[..., Model]] = {
    "densenet121": build_densenet121,
    "vgg19": build_vgg19,
    "alexnet": build_alexnet,
    "custom_cnn": build_custom_cnn,
    "res_attention": build_residual_attention_net,
    "xception": build_xceptionnet,
}

# display names used in reports, in the order the comparison table lists them
DISPLAY_NAMES = {
    "densenet121": "DenseNet-121",
    "vgg19": "VGG-19",
    "alexnet": "AlexNet",
    "custom_cnn": "CNN [Custom]",
    "res_attention": "Res_Attention_Net",
    "xception": "XceptionNet",
}


def build(name: str, input_shape=FULL_INPUT, scale=1, seed: int = 0, dtype=T.DEFAULT_DTYPE,
          head_only_trainable: bool | None = None) -> Model:
    if name not in REGISTRY:
        raise ConfigError(f"unknown architecture {name!r}; valid names: {', '.join(REGISTRY)}")
    kwargs = {}
    if head_only_trainable is not None:
        if name not in ("vgg19", "densenet121", "xception"):
            if head_only_trainable:
                raise ConfigError(f"{name} has no frozen backbone option")
        else:
            kwargs["head_only_trainable"] = head_only_trainable
    m = REGISTRY[name](input_shape, scale, seed=seed, dtype=dtype, **kwargs)
    m.metadata["seed"] = seed
    return m


def forward_shapes(m: Model, batch: int = 1, seed: int = 0) -> dict[str, tuple]:
    """Run a real forward pass and return every node's actual output shape (without batch)."""
    x = np.random.default_rng(seed).random((batch, *m.input_shape)).astype(m.dtype)
    shapes = {}
    from .layers import INFER

    values = {INPUT: x}
    for node in m.nodes:
        out = node.layer.forward(*(values[i] for i in node.inputs), ctx=INFER)
        node.layer._tape = None
        values[node.name] = out
        shapes[node.name] = out.shape[1:]
    return shapes
