"""Line-oriented network configuration.

One layer per line, ``#`` starts a comment::

    layer conv1 conv in=3 out=8 k=3 stride=1 pad=1 nl=bn:bn1.fmap,relu,maxpool:2:2 \\
          level=1 compress=on scratch_kb=64 weights=conv1.fmap

Optional keys: ``depthwise`` (flag), ``m=<2..15>``, ``frac=<bits>``,
``scale=block|channel`` and ``qtable=<file>``. Non-linear ops are
``relu``, ``leaky_relu[:alpha]``, ``prelu:<alpha|file>``, ``bn:<file>``
(a 4 x F tensor of gamma, beta, mean, var), ``maxpool[:k[:s]]`` and
``avgpool[:k[:s]]``. Relative paths resolve against the config's directory.
"""
from __future__ import annotations

import os
import shlex
from pathlib import Path

import numpy as np

from .core_types import FixedPointFormat
from .errors import ConfigError, MalformedStreamError
from .formats import read_tensor
from .pe_sim import (
    AvgPool, BatchNorm, ConvLayer, LeakyRelu, MaxPool, NonLinearConfig, PRelu, Relu,
)
from .pipeline import FusionLayerConfig
from .quant import load_qtable

_FC_KINDS = {"fc", "linear", "dense", "fully_connected"}
_REQUIRED = ("in", "out", "k", "weights")


def _int(value: str, key: str, line: int) -> int:
    try:
        return int(value)
    except ValueError:
        raise ConfigError(f"{key}={value!r} is not an integer", line) from None


def _load(path: Path, line: int) -> np.ndarray:
    try:
        data, _ = read_tensor(path)
    except FileNotFoundError:
        raise ConfigError(f"file not found: {path}", line) from None
    except MalformedStreamError as exc:
        raise ConfigError(f"{path}: {exc}", line) from None
    return data


def _parse_op(tok: str, base: Path, channels: int, line: int):
    name, *args = tok.split(":")
    try:
        if name == "relu" and not args:
            return Relu()
        if name == "leaky_relu":
            return LeakyRelu(float(args[0]) if args else 0.01)
        if name == "prelu" and len(args) == 1:
            try:
                alpha = np.full(channels, float(args[0]))
            except ValueError:
                alpha = _load(base / args[0], line).reshape(-1)
            if alpha.size != channels:
                raise ConfigError(f"prelu needs {channels} slopes, got {alpha.size}", line)
            return PRelu(alpha)
        if name in ("bn", "batch_norm") and len(args) == 1:
            coef = _load(base / args[0], line)
            if coef.shape != (4, channels):
                raise ConfigError(
                    f"bn file must be a 4x{channels} tensor, got {coef.shape}", line
                )
            return BatchNorm(*coef)
        if name in ("maxpool", "avgpool") and len(args) <= 2:
            size = int(args[0]) if args else 2
            stride = int(args[1]) if len(args) > 1 else size
            return (MaxPool if name == "maxpool" else AvgPool)(size, stride)
    except (ValueError, IndexError) as exc:
        raise ConfigError(f"bad non-linear op {tok!r}: {exc}", line) from None
    raise ConfigError(f"unknown non-linear op {tok!r}", line)


def parse_line(text: str, line: int, base: Path) -> FusionLayerConfig | None:
    text = text.split("#", 1)[0].strip()
    if not text:
        return None
    toks = shlex.split(text)
    if toks[0] != "layer" or len(toks) < 3:
        raise ConfigError("expected 'layer <name> <kind> key=value ...'", line)
    name, kind = toks[1], toks[2].lower()
    if kind in _FC_KINDS:
        raise ConfigError(
            f"layer {name!r}: fully-connected layers run on the host CPU and are "
            "not supported by the accelerator model", line,
        )
    if kind != "conv":
        raise ConfigError(f"layer {name!r}: unknown layer kind {kind!r}", line)
    opts: dict[str, str] = {}
    flags = set()
    for tok in toks[3:]:
        if "=" in tok:
            k, v = tok.split("=", 1)
            if k in opts:
                raise ConfigError(f"duplicate key {k!r}", line)
            opts[k] = v
        else:
            flags.add(tok)
    unknown_flags = flags - {"depthwise"}
    if unknown_flags:
        raise ConfigError(f"unknown flag(s) {sorted(unknown_flags)}", line)
    known = {"in", "out", "k", "stride", "pad", "nl", "level", "compress",
             "scratch_kb", "weights", "m", "frac", "scale", "qtable"}
    unknown = set(opts) - known
    if unknown:
        raise ConfigError(f"unknown key(s) {sorted(unknown)}", line)
    missing = [k for k in _REQUIRED if k not in opts]
    if missing:
        raise ConfigError(f"layer {name!r}: missing {', '.join(missing)}", line)

    c_in = _int(opts["in"], "in", line)
    c_out = _int(opts["out"], "out", line)
    k = _int(opts["k"], "k", line)
    depthwise = "depthwise" in flags
    if depthwise and c_in != c_out:
        raise ConfigError("depthwise layers need in == out", line)
    weights = _load(base / opts["weights"], line)
    expected = (c_out, 1, k, k) if depthwise else (c_out, c_in, k, k)
    if weights.shape != expected:
        raise ConfigError(f"weights shape {weights.shape}, expected {expected}", line)
    compress = opts.get("compress", "on").lower()
    if compress not in ("on", "off"):
        raise ConfigError(f"compress must be on or off, got {compress!r}", line)
    scale = opts.get("scale", "block")
    if scale not in ("block", "channel"):
        raise ConfigError(f"scale must be block or channel, got {scale!r}", line)
    level = _int(opts.get("level", "1"), "level", line)
    try:
        conv = ConvLayer(
            weights, stride=_int(opts.get("stride", "1"), "stride", line),
            padding=_int(opts.get("pad", "0"), "pad", line), depthwise=depthwise,
        )
        ops = []
        nl = opts.get("nl", "none")
        if nl != "none":
            ops = [_parse_op(t, base, c_out, line) for t in nl.split(",") if t]
        fmt = FixedPointFormat(16, _int(opts["frac"], "frac", line)) if "frac" in opts else None
        qtable = load_qtable(base / opts["qtable"], level) if "qtable" in opts else None
        return FusionLayerConfig(
            conv=conv, nonlinear=NonLinearConfig(tuple(ops)), level=level,
            compress=compress == "on",
            scratch_kb=_int(opts.get("scratch_kb", "64"), "scratch_kb", line),
            m=_int(opts.get("m", "8"), "m", line), per_block_scale=scale == "block",
            name=name, qtable=qtable, fmt=fmt,
        )
    except ConfigError:
        raise
    except (ValueError, OSError) as exc:
        raise ConfigError(f"layer {name!r}: {exc}", line) from None


def parse_network_text(text: str, base: str | os.PathLike = ".") -> list[FusionLayerConfig]:
    base = Path(base)
    layers: list[FusionLayerConfig] = []
    # Backslash-newline continues a line; errors point at the first line.
    logical: list[tuple[int, str]] = []
    pending, start = "", 0
    for lineno, raw in enumerate(text.splitlines(), 1):
        if not pending:
            start = lineno
        if raw.rstrip().endswith("\\"):
            pending += raw.rstrip()[:-1] + " "
            continue
        logical.append((start, pending + raw))
        pending = ""
    if pending:
        logical.append((start, pending))
    prev_out = None
    for lineno, line in logical:
        cfg = parse_line(line, lineno, base)
        if cfg is None:
            continue
        if prev_out is not None and cfg.conv.in_channels != prev_out:
            raise ConfigError(
                f"layer {cfg.name!r} expects {cfg.conv.in_channels} input channels "
                f"but the previous layer produces {prev_out}", lineno,
            )
        prev_out = cfg.conv.out_channels
        layers.append(cfg)
    if not layers:
        raise ConfigError("network config defines no layers")
    return layers


def parse_network(path: str | os.PathLike) -> list[FusionLayerConfig]:
    path = Path(path)
    return parse_network_text(path.read_text(), path.parent)
