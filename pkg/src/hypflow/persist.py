"""Config files, checkpoints and CSV tables.

* Config: ``key = value`` lines grouped in ``[target]``, ``[flow]`` and
  ``[training]`` sections. Lines before the first section header belong to a
  top-level section where ``target``, ``flow`` and ``dim`` are shorthands, so
  a minimal config is three lines.
* Checkpoint: JSON text. Floats are written with Python's shortest
  round-trip repr, so reloading is bit-exact.
* CSV: optional ``#`` comment lines, one header row, values in ``.17g``.

Every write goes to a temporary file in the destination directory that is
then renamed over the target.
"""

from __future__ import annotations

import configparser
import dataclasses
import json
import os
import re
import tempfile
from pathlib import Path
from typing import Sequence

import numpy as np

from . import flows as F
from .diffnet import Mlp
from .targets import TargetSpec
from .training import TrainConfig

CHECKPOINT_FORMAT = "hypflow-checkpoint"
CHECKPOINT_VERSION = 1
_TOP = "top"


class ConfigError(ValueError):
    """Malformed or incomplete config; message names the field and line."""


class VersionMismatch(ValueError):
    pass


def atomic_write(path: str | os.PathLike, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# -- config ------------------------------------------------------------------

_FLOW_KEYS = {"kind": ("flow", str), "dim": ("dim", int), "layers": ("n_layers", int),
              "n_layers": ("n_layers", int), "hidden": ("hidden", int)}
_TRAIN_KEYS = {"epochs": int, "batch_size": int, "lr": float, "seed": int,
               "warmup_epochs": int, "warmup_start_radius": float,
               "warmup_end_radius": float, "learn_curvature": bool, "clamp": float,
               "eval_samples": int, "test_fraction": float}
_TARGET_KEYS = {"kind": str, "count": int, "seed": int, "radius": float, "mean": "floats",
                "sigma": "floats", "means": "groups", "sigmas": "groups",
                "weights": "floats", "square": float, "extent": float, "turns": float,
                "spiral_radius": float, "noise": float}


@dataclasses.dataclass
class RunConfig:
    train: TrainConfig
    target: TargetSpec
    count: int = 500


def _line_numbers(text: str) -> dict[tuple[str, str], int]:
    out, section = {}, _TOP
    for i, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        m = re.match(r"^\[([^\]]+)\]$", line)
        if m:
            section = m.group(1).strip().lower()
            continue
        m = re.match(r"^([A-Za-z_][\w]*)\s*[=:]", line)
        if m:
            out[(section, m.group(1).lower())] = i
    return out


def _convert(raw: str, kind, where: str):
    raw = raw.strip()
    try:
        if kind is bool:
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if kind == "floats":
            return [float(v) for v in raw.split(",") if v.strip()]
        if kind == "groups":
            return [[float(v) for v in g.split(",") if v.strip()]
                    for g in raw.split(";") if g.strip()]
        if kind is int and raw.lower() in ("none", "full"):
            return None
        return kind(raw)
    except ValueError:
        raise ConfigError(f"{where}: cannot parse {raw!r}") from None


def parse_config(text: str) -> RunConfig:
    lines = _line_numbers(text)
    parser = configparser.ConfigParser(interpolation=None, default_section="__none__",
                                       inline_comment_prefixes=("#",))
    try:
        parser.read_string(f"[{_TOP}]\n" + text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None

    def where(section, key):
        line = lines.get((section, key))
        return f"{section}.{key}" + (f" (line {line})" if line else "")

    train: dict = {}
    target: dict = {}
    count = 500
    for section in parser.sections():
        for key, raw in parser.items(section):
            loc = where(section, key)
            if section == _TOP:
                if key == "target":
                    target["kind"] = raw.strip().lower()
                elif key == "flow":
                    train["flow"] = raw.strip().lower()
                elif key == "dim":
                    train["dim"] = _convert(raw, int, loc)
                elif key in _TRAIN_KEYS:
                    train[key] = _convert(raw, _TRAIN_KEYS[key], loc)
                else:
                    raise ConfigError(f"{loc}: unknown key")
            elif section == "flow":
                if key not in _FLOW_KEYS:
                    raise ConfigError(f"{loc}: unknown key")
                name, kind = _FLOW_KEYS[key]
                train[name] = raw.strip().lower() if kind is str else _convert(raw, kind, loc)
            elif section == "training":
                if key not in _TRAIN_KEYS:
                    raise ConfigError(f"{loc}: unknown key")
                train[key] = _convert(raw, _TRAIN_KEYS[key], loc)
            elif section == "target":
                if key not in _TARGET_KEYS:
                    raise ConfigError(f"{loc}: unknown key")
                if key == "count":
                    count = _convert(raw, int, loc)
                elif key == "kind":
                    target["kind"] = raw.strip().lower()
                else:
                    target[key] = _convert(raw, _TARGET_KEYS[key], loc)
            else:
                raise ConfigError(f"unknown section [{section}]")

    for field, present in (("target", "kind" in target), ("flow", "flow" in train),
                           ("dim", "dim" in train)):
        if not present:
            raise ConfigError(f"missing required field '{field}'")
    cfg = TrainConfig(**train)
    spec = TargetSpec(**target)
    try:
        cfg.validate()
    except ValueError as exc:
        raise ConfigError(f"invalid training settings: {exc}") from None
    try:
        spec.validate()
    except ValueError as exc:
        raise ConfigError(f"invalid target settings: {exc}") from None
    if spec.dim != cfg.dim:
        raise ConfigError(f"target dimension {spec.dim} does not match dim = {cfg.dim}")
    if count is None or count < 2:
        raise ConfigError("target.count must be at least 2")
    return RunConfig(cfg, spec, count)


def load_config(path: str | os.PathLike) -> RunConfig:
    return parse_config(Path(path).read_text(encoding="utf-8"))


# -- checkpoints ----------------------------------------------------------------

def checkpoint_dict(stack: F.FlowStack, config: TrainConfig, target: TargetSpec,
                    data_radius: float) -> dict:
    return {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "config": dataclasses.asdict(config),
        "target": dataclasses.asdict(target),
        "data_radius": data_radius,
        "flow": {
            "kind": stack.kind,
            "dim": stack.dim,
            "radius": stack.radius,
            "curvature": -1.0 / stack.radius ** 2,
            "max_norm": stack.max_norm,
            "layers": [{"index": layer.index, "mask": list(layer.mask.bits),
                        "s_dims": layer.s_net.layer_dims, "t_dims": layer.t_net.layer_dims}
                       for layer in stack.layers],
        },
        "parameters": [{"shape": list(p.shape), "values": [float(v) for v in p.ravel()]}
                       for p in stack.parameters()],
        "rng": {"algorithm": "philox4x64+box-muller", "seed": config.seed},
    }


def save_checkpoint(path, stack: F.FlowStack, config: TrainConfig, target: TargetSpec,
                    data_radius: float) -> None:
    doc = checkpoint_dict(stack, config, target, data_radius)
    atomic_write(path, json.dumps(doc, indent=1) + "\n")


def load_checkpoint(path) -> tuple[F.FlowStack, TrainConfig, TargetSpec, float]:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise VersionMismatch(f"{path} is not a {CHECKPOINT_FORMAT} file")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise VersionMismatch(
            f"checkpoint version {doc.get('version')} != supported {CHECKPOINT_VERSION}")
    flow = doc["flow"]
    layers = []
    for meta in flow["layers"]:
        s_dims, t_dims = meta["s_dims"], meta["t_dims"]
        layers.append(F.CouplingLayer(flow["kind"], F.BinaryMask(tuple(meta["mask"])),
                                      Mlp(s_dims, *_zero_params(s_dims)),
                                      Mlp(t_dims, *_zero_params(t_dims)), meta["index"]))
    stack = F.FlowStack(flow["dim"], flow["kind"], layers, radius=flow["radius"],
                        max_norm=flow["max_norm"])
    params = [np.array(p["values"], dtype=np.float64).reshape(p["shape"])
              for p in doc["parameters"]]
    stack.set_parameters(params)
    config = TrainConfig(**doc["config"])
    target = TargetSpec(**doc["target"])
    return stack, config, target, float(doc["data_radius"])


def _zero_params(dims: Sequence[int]):
    ws = [np.zeros((a, b)) for a, b in zip(dims[:-1], dims[1:])]
    bs = [np.zeros(b) for b in dims[1:]]
    return ws, bs


# -- CSV ---------------------------------------------------------------------------

def format_csv(columns: Sequence[str], rows: np.ndarray,
               comments: Sequence[str] = ()) -> str:
    lines = [f"# {c}" for c in comments]
    lines.append(",".join(columns))
    for row in np.atleast_2d(rows):
        lines.append(",".join(format(float(v), ".17g") for v in row))
    return "\n".join(lines) + "\n"


def write_csv(path, columns: Sequence[str], rows: np.ndarray,
              comments: Sequence[str] = ()) -> None:
    atomic_write(path, format_csv(columns, rows, comments))


def read_csv(path) -> tuple[list[str], np.ndarray, list[str]]:
    """Returns (columns, values with shape (rows, columns), comment lines)."""
    comments, header, rows = [], None, []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        if line.startswith("#"):
            comments.append(line[1:].strip())
        elif header is None:
            header = [c.strip() for c in line.split(",")]
        else:
            rows.append([float(v) for v in line.split(",")])
    if header is None:
        raise ValueError(f"{path}: missing header row")
    values = np.array(rows, dtype=np.float64).reshape(len(rows), len(header))
    return header, values, comments


def lorentz_columns(dim: int) -> list[str]:
    return [f"x{i}" for i in range(dim + 1)]


def write_points(path, points: np.ndarray, comments: Sequence[str] = ()) -> None:
    write_csv(path, lorentz_columns(points.shape[1] - 1), points, comments)


def read_points(path) -> np.ndarray:
    _, values, _ = read_csv(path)
    return values
