"""Checkpoint layout: one LAFT file per parameter and moment estimate, plus
``checkpoint.tsv`` listing them and ``denoiser.cfg`` describing the network.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np

from ..features import FormatError, load_tensor, save_tensor
from .denoisers import DenoiserConfig, NetworkDenoiser, make_denoiser


def save_checkpoint(net: NetworkDenoiser, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg = net.cfg
    (out / "denoiser.cfg").write_text(
        "\n".join(
            [
                f"architecture = {cfg.architecture}",
                f"channels = {cfg.channels}",
                f"base_channels = {cfg.base_channels}",
                f"hidden = {','.join(map(str, cfg.hidden))}",
                f"temb_dim = {cfg.temb_dim}",
                f"T = {net.T}",
                f"step = {net.params.step}",
            ]
        )
        + "\n",
        encoding="utf-8",
    )
    lines = ["# name\tshape\tparam\tfirst_moment\tsecond_moment"]
    for name, p in net.params.params.items():
        files = [f"params/{name}.laft", f"adam_m/{name}.laft", f"adam_v/{name}.laft"]
        save_tensor(out / files[0], p.value)
        save_tensor(out / files[1], net.params.m[name])
        save_tensor(out / files[2], net.params.v[name])
        shape = "x".join(map(str, p.value.shape))
        lines.append("\t".join([name, shape] + files))
    (out / "checkpoint.tsv").write_text("\n".join(lines) + "\n", encoding="utf-8")


def _read_kv(path: Path) -> dict[str, str]:
    kv = {}
    for line in path.read_text(encoding="utf-8").splitlines():
        if "=" in line:
            k, v = line.split("=", 1)
            kv[k.strip()] = v.strip()
    return kv


def load_checkpoint(ckpt_dir) -> NetworkDenoiser:
    d = Path(ckpt_dir)
    kv = _read_kv(d / "denoiser.cfg")
    cfg = DenoiserConfig(
        architecture=kv["architecture"],
        channels=int(kv["channels"]),
        base_channels=int(kv["base_channels"]),
        hidden=tuple(int(h) for h in kv["hidden"].split(",")),
        temb_dim=int(kv["temb_dim"]),
    )
    net = make_denoiser(cfg, int(kv["T"]))
    net.params.step = int(kv["step"])
    seen = set()
    for line in (d / "checkpoint.tsv").read_text(encoding="utf-8").splitlines():
        if not line or line.startswith("#"):
            continue
        name, shape, pf, mf, vf = line.split("\t")
        if name not in net.params.params:
            raise FormatError(f"checkpoint parameter {name!r} not in network")
        p = net.params[name]
        val = load_tensor(d / pf).astype(net.dtype)
        if val.shape != p.value.shape:
            raise FormatError(f"{name}: checkpoint shape {val.shape} != {p.value.shape}")
        p.value = val
        net.params.m[name] = load_tensor(d / mf).astype(net.dtype)
        net.params.v[name] = load_tensor(d / vf).astype(net.dtype)
        seen.add(name)
    missing = set(net.params.names()) - seen
    if missing:
        raise FormatError(f"checkpoint is missing parameters: {sorted(missing)}")
    return net
