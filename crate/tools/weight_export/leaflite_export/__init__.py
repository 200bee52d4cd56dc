"""MobileNetV2 weight exporter and golden-activation dumper for leaflite."""

from .lwts import LwtsError, read_lwts, write_lwts, encode, decode
from .names import engine_parameters, map_zoo_name, UnmappedError

__all__ = [
    "LwtsError",
    "read_lwts",
    "write_lwts",
    "encode",
    "decode",
    "engine_parameters",
    "map_zoo_name",
    "UnmappedError",
]
