"""Engine parameter names and the zoo-to-engine name mapping."""

from __future__ import annotations

import re
from typing import Dict, List, Tuple

BN_FIELDS = ("gamma", "beta", "moving_mean", "moving_variance")

# expansion, output channels, repeats, first stride
SEQUENCE = (
    (1, 16, 1, 1),
    (6, 24, 2, 2),
    (6, 32, 3, 2),
    (6, 64, 4, 2),
    (6, 96, 3, 1),
    (6, 160, 3, 2),
    (6, 320, 1, 1),
)
STEM_CHANNELS = 32
FINAL_CHANNELS = 1280


class UnmappedError(KeyError):
    def __init__(self, names):
        self.names = sorted(names)
        super().__init__("unmapped zoo layers: " + ", ".join(self.names))


def _conv(name: str, dims: Tuple[int, ...], cout: int) -> List[Tuple[str, Tuple[int, ...]]]:
    out = [(f"{name}.kernel", dims)]
    out += [(f"{name}_bn.{f}", (cout,)) for f in BN_FIELDS]
    return out


def engine_parameters() -> Dict[str, Tuple[int, ...]]:
    """Every backbone tensor the engine loads, with its extents."""
    params = _conv("stem_conv", (3, 3, 3, STEM_CHANNELS), STEM_CHANNELS)
    c, block = STEM_CHANNELS, 0
    for t, out, repeats, _ in SEQUENCE:
        for _ in range(repeats):
            hidden = c * t
            if t != 1:
                params += _conv(f"block_{block}_expand", (1, 1, c, hidden), hidden)
            params += _conv(f"block_{block}_depthwise", (3, 3, hidden), hidden)
            params += _conv(f"block_{block}_project", (1, 1, hidden, out), out)
            c, block = out, block + 1
    params += _conv("final_conv", (1, 1, c, FINAL_CHANNELS), FINAL_CHANNELS)
    return dict(params)


_BLOCK = re.compile(r"^block_(\d+)_(expand|depthwise|project)(_BN)?$")
_FIRST = re.compile(r"^expanded_conv_(depthwise|project)(_BN)?$")


def map_layer(layer: str) -> str:
    """Engine layer prefix for a Keras MobileNetV2 layer name."""
    fixed = {"Conv1": "stem_conv", "bn_Conv1": "stem_conv_bn", "Conv_1": "final_conv", "Conv_1_bn": "final_conv_bn"}
    if layer in fixed:
        return fixed[layer]
    m = _FIRST.match(layer)
    if m:
        return f"block_0_{m.group(1)}" + ("_bn" if m.group(2) else "")
    m = _BLOCK.match(layer)
    if m:
        return f"block_{m.group(1)}_{m.group(2)}" + ("_bn" if m.group(3) else "")
    raise UnmappedError([layer])


def map_zoo_name(layer: str, weight: str) -> str:
    """Engine tensor name for one weight (``kernel``, ``gamma``, ...) of a zoo layer."""
    prefix = map_layer(layer)
    if prefix.endswith("_bn"):
        if weight not in BN_FIELDS:
            raise UnmappedError([f"{layer}/{weight}"])
        return f"{prefix}.{weight}"
    if weight not in ("kernel", "depthwise_kernel"):
        raise UnmappedError([f"{layer}/{weight}"])
    return f"{prefix}.kernel"
