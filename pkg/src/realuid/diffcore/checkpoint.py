"""Checkpoint pairs: ``<name>.manifest.json`` + ``<name>.params.bin``.

The blob is the little-endian float64 concatenation of the parameters in
manifest order (weights[0], biases[0], weights[1], ...).
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .nn import Generator, Mlp

FORMAT_VERSION = 1


def save(path_prefix, net: Mlp, **meta) -> tuple[Path, Path]:
    prefix = Path(path_prefix)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    manifest = {
        "format": FORMAT_VERSION,
        "layer_widths": net.layer_widths,
        "net": net.spec(),
        "tensors": [{"shape": list(p.shape)} for p in net.parameters()],
        "n_params": net.n_params,
        **meta,
    }
    mpath = prefix.with_name(prefix.name + ".manifest.json")
    bpath = prefix.with_name(prefix.name + ".params.bin")
    mpath.write_text(json.dumps(manifest, indent=2, sort_keys=True))
    bpath.write_bytes(net.get_flat().astype("<f8").tobytes())
    return mpath, bpath


def load_manifest(path_prefix) -> dict:
    prefix = Path(path_prefix)
    return json.loads(prefix.with_name(prefix.name + ".manifest.json").read_text())


def load(path_prefix) -> tuple[Mlp, dict]:
    prefix = Path(path_prefix)
    manifest = load_manifest(prefix)
    blob = np.frombuffer(prefix.with_name(prefix.name + ".params.bin").read_bytes(), dtype="<f8")
    net = Mlp.from_spec(manifest["net"])
    if blob.size != net.n_params:
        raise ValueError(f"{prefix}: blob holds {blob.size} values, manifest expects {net.n_params}")
    net.set_flat(blob.astype(np.float64))
    return net, manifest


def save_generator(path_prefix, gen: Generator, **meta):
    return save(path_prefix, gen.net, residual=gen.residual, conditional=gen.conditional, **meta)


def load_generator(path_prefix) -> tuple[Generator, dict]:
    net, manifest = load(path_prefix)
    return Generator(net, residual=manifest.get("residual", True),
                     conditional=manifest.get("conditional", False)), manifest


def exists(path_prefix) -> bool:
    prefix = Path(path_prefix)
    return (prefix.with_name(prefix.name + ".manifest.json").exists()
            and prefix.with_name(prefix.name + ".params.bin").exists())
