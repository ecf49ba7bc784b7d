"""Incremental 3D latent feature maps.

Thin wrappers over the compiled module: configs may be given as dicts, and
paths as ``str`` or ``os.PathLike``.
"""

import json as _json

from ._latmap import (
    LatmapError,
    Map,
    back_project,
    gradcheck,
    max_threads,
    run_cli,
    set_threads,
)
from . import _latmap

__all__ = [
    "LatmapError",
    "Map",
    "back_project",
    "build",
    "gradcheck",
    "max_threads",
    "replay",
    "run_cli",
    "set_threads",
    "synth",
]


def _dump(cfg):
    if cfg is None:
        return "{}"
    if isinstance(cfg, str):
        return cfg
    return _json.dumps(cfg)


def synth(out_dir, spec=None, seed=None):
    """Write a synthetic dataset. Returns (train, heldout, stream) frame counts."""
    return _latmap.synth(out_dir, _dump(spec), seed)


def build(dataset, config=None, steps=None, seed=None, decoder=None):
    """Fit a map to a dataset directory. Returns (Map, info dict)."""
    return _latmap.build(dataset, _dump(config), steps, seed, decoder)


def replay(map, stream, config=None, seed=None):
    """Online updates over a stream manifest. Returns (Map, reports)."""
    return _latmap.replay(map, stream, _dump(config), seed)
