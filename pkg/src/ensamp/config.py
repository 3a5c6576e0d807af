"""Resource and kernel configuration files.

Both files use the same flat grammar::

    # comment
    key = value

Keys are case-sensitive; values are integers, decimals or bare words. Every
kernel key is either required or has the default listed in ``KERNEL_KEYS``.
"""

from __future__ import annotations

import re
from dataclasses import asdict, dataclass, fields
from typing import Any, Callable

_LINE = re.compile(r"^\s*([A-Za-z_][A-Za-z0-9_]*)\s*=\s*(\S+)\s*$")
_BOOL_WORDS = {"yes": True, "true": True, "on": True, "no": False, "false": False, "off": False}


class ConfigError(ValueError):
    def __init__(self, key: str | None, message: str, source: str | None = None):
        self.key = key
        self.message = message
        self.source = source
        where = f"{source}: " if source else ""
        what = f"key '{key}': " if key else ""
        super().__init__(f"{where}{what}{message}")


def _tokenize(text: str) -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0]
        if not line.strip():
            continue
        m = _LINE.match(line)
        if m is None:
            raise ConfigError(None, f"line {lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = m.groups()
        if key in out:
            raise ConfigError(key, f"line {lineno}: duplicate key")
        out[key] = value
    return out


def _as_int(key: str, value: str) -> int:
    try:
        return int(value)
    except ValueError:
        raise ConfigError(key, f"expected an integer, got {value!r}") from None


def _as_float(key: str, value: str) -> float:
    try:
        return float(value)
    except ValueError:
        raise ConfigError(key, f"expected a number, got {value!r}") from None


def _as_word(key: str, value: str) -> str:
    return value


def _as_bool(key: str, value: str) -> bool:
    try:
        return _BOOL_WORDS[value.lower()]
    except KeyError:
        raise ConfigError(key, f"expected yes/no, got {value!r}") from None


def _fmt(value: Any) -> str:
    if isinstance(value, bool):
        return "yes" if value else "no"
    if isinstance(value, float):
        return repr(value)
    return str(value)


# -- resource configuration ---------------------------------------------------

@dataclass(frozen=True)
class ResourceConfig:
    name: str
    total_slots: int
    walltime_limit: float | None = None
    poll_interval: float = 1e-3
    # accepted for compatibility with HPC resource files; unused locally
    username: str | None = None
    account: str | None = None
    queue: str | None = None

    def handle(self):
        from .core import ResourceHandle

        return ResourceHandle(self.name, self.total_slots, self.walltime_limit)


# file key -> (field, converter, required)
RESOURCE_KEYS: dict[str, tuple[str, Callable, bool]] = {
    "name": ("name", _as_word, True),
    "slots": ("total_slots", _as_int, True),
    "walltime": ("walltime_limit", _as_float, False),
    "poll_interval": ("poll_interval", _as_float, False),
    "username": ("username", _as_word, False),
    "account": ("account", _as_word, False),
    "queue": ("queue", _as_word, False),
}


def parse_resource_config(text: str) -> ResourceConfig:
    raw = _tokenize(text)
    values: dict[str, Any] = {}
    for key, value in raw.items():
        if key not in RESOURCE_KEYS:
            raise ConfigError(key, "unknown key")
        field_name, conv, _ = RESOURCE_KEYS[key]
        values[field_name] = conv(key, value)
    for key, (field_name, _, required) in RESOURCE_KEYS.items():
        if required and field_name not in values:
            raise ConfigError(key, "missing required key")
    if values["total_slots"] < 1:
        raise ConfigError("slots", "must be >= 1")
    if values.get("walltime_limit") is not None and values["walltime_limit"] <= 0:
        raise ConfigError("walltime", "must be > 0")
    if values.get("poll_interval", 1.0) <= 0:
        raise ConfigError("poll_interval", "must be > 0")
    return ResourceConfig(**values)


def serialize_resource_config(cfg: ResourceConfig) -> str:
    lines = []
    for key, (field_name, _, _) in RESOURCE_KEYS.items():
        value = getattr(cfg, field_name)
        if value is not None:
            lines.append(f"{key} = {_fmt(value)}")
    return "\n".join(lines) + "\n"


# -- kernel configuration -----------------------------------------------------

WORKFLOW_KINDS = ("dmdmd", "cocomd")
POTENTIAL_KINDS = ("double_well_1d", "double_well_2d", "mueller_brown")

_REQUIRED = object()

# key -> (converter, default or _REQUIRED)
KERNEL_KEYS: dict[str, tuple[Callable, Any]] = {
    "workflow": (_as_word, _REQUIRED),
    "num_iterations": (_as_int, 5),
    "num_replicas": (_as_int, 16),
    # molecular dynamics
    "potential": (_as_word, "double_well_2d"),
    "barrier_height": (_as_float, 8.0),
    "n_steps": (_as_int, 200),
    "dt": (_as_float, 1e-3),
    "temperature": (_as_float, 1.0),
    "friction": (_as_float, 1.0),
    "stride": (_as_int, 0),  # 0 means n_steps // 10
    "seed": (_as_int, 0),
    "start_basin": (_as_int, 0),
    "jitter": (_as_float, 0.05),
    # DM-d-MD
    "num_neighbors_for_local_scale": (_as_int, 8),
    "merge_threshold": (_as_float, 0.2),
    "spawn_threshold": (_as_float, 2.0),
    "dmap_dims": (_as_int, 2),
    "dynamic_instances": (_as_bool, False),
    "min_replicas": (_as_int, 2),
    "max_replicas": (_as_int, 0),  # 0 means 4 * num_replicas
    "normalize_weights": (_as_bool, False),
    # CoCo-MD
    "projection_dims": (_as_int, 2),
    "bins_per_dim": (_as_int, 10),
    "n_new_structures": (_as_int, 0),  # 0 means num_replicas
}


@dataclass(frozen=True)
class KernelConfig:
    workflow: str
    num_iterations: int = 5
    num_replicas: int = 16
    potential: str = "double_well_2d"
    barrier_height: float = 8.0
    n_steps: int = 200
    dt: float = 1e-3
    temperature: float = 1.0
    friction: float = 1.0
    stride: int = 0
    seed: int = 0
    start_basin: int = 0
    jitter: float = 0.05
    num_neighbors_for_local_scale: int = 8
    merge_threshold: float = 0.2
    spawn_threshold: float = 2.0
    dmap_dims: int = 2
    dynamic_instances: bool = False
    min_replicas: int = 2
    max_replicas: int = 0
    normalize_weights: bool = False
    projection_dims: int = 2
    bins_per_dim: int = 10
    n_new_structures: int = 0

    def __post_init__(self):
        validate_kernel_config(self)

    @property
    def effective_stride(self) -> int:
        return self.stride if self.stride > 0 else max(1, self.n_steps // 10)

    @property
    def effective_max_replicas(self) -> int:
        return self.max_replicas if self.max_replicas > 0 else 4 * self.num_replicas

    @property
    def effective_n_new(self) -> int:
        return self.n_new_structures if self.n_new_structures > 0 else self.num_replicas

    def replace(self, **changes) -> "KernelConfig":
        d = asdict(self)
        d.update(changes)
        return KernelConfig(**d)


def validate_kernel_config(cfg: KernelConfig) -> None:
    if cfg.workflow not in WORKFLOW_KINDS:
        raise ConfigError("workflow", f"must be one of {', '.join(WORKFLOW_KINDS)}")
    if cfg.potential not in POTENTIAL_KINDS:
        raise ConfigError("potential", f"must be one of {', '.join(POTENTIAL_KINDS)}")
    positive_ints = ["num_iterations", "n_steps", "num_neighbors_for_local_scale",
                     "dmap_dims", "bins_per_dim", "min_replicas"]
    for key in positive_ints:
        if getattr(cfg, key) < 1:
            raise ConfigError(key, "must be >= 1")
    for key in ("stride", "max_replicas", "n_new_structures", "start_basin"):
        if getattr(cfg, key) < 0:
            raise ConfigError(key, "must be >= 0")
    if cfg.num_replicas < 2:
        raise ConfigError("num_replicas", "must be >= 2")
    for key in ("dt", "temperature", "friction", "merge_threshold", "spawn_threshold"):
        if not getattr(cfg, key) > 0:
            raise ConfigError(key, "must be > 0")
    if cfg.barrier_height <= 0:
        raise ConfigError("barrier_height", "must be > 0")
    if cfg.jitter < 0:
        raise ConfigError("jitter", "must be >= 0")
    if cfg.min_replicas < 2:
        raise ConfigError("min_replicas", "must be >= 2")
    if cfg.max_replicas and cfg.max_replicas < cfg.min_replicas:
        raise ConfigError("max_replicas", "must be >= min_replicas")
    if cfg.bins_per_dim < 2:
        raise ConfigError("bins_per_dim", "must be >= 2")
    if cfg.workflow == "cocomd" and cfg.projection_dims not in (2, 3, 4):
        raise ConfigError("projection_dims", "CoCo projects onto a low (2-4 dimensional) space; must be 2, 3 or 4")


def parse_kernel_config(text: str) -> KernelConfig:
    raw = _tokenize(text)
    values: dict[str, Any] = {}
    for key, value in raw.items():
        if key not in KERNEL_KEYS:
            raise ConfigError(key, "unknown key")
        conv, _ = KERNEL_KEYS[key]
        values[key] = conv(key, value)
    for key, (_, default) in KERNEL_KEYS.items():
        if default is _REQUIRED and key not in values:
            raise ConfigError(key, "missing required key")
    return KernelConfig(**values)


def serialize_kernel_config(cfg: KernelConfig) -> str:
    return "".join(f"{f.name} = {_fmt(getattr(cfg, f.name))}\n" for f in fields(cfg))


def _read(path) -> str:
    try:
        with open(path) as fh:
            return fh.read()
    except OSError as exc:
        raise ConfigError(None, f"cannot read config file ({exc.strerror})", str(path)) from None


def load_resource_config(path) -> ResourceConfig:
    text = _read(path)
    try:
        return parse_resource_config(text)
    except ConfigError as exc:
        raise ConfigError(exc.key, exc.message, str(path)) from None


def load_kernel_config(path) -> KernelConfig:
    text = _read(path)
    try:
        return parse_kernel_config(text)
    except ConfigError as exc:
        raise ConfigError(exc.key, exc.message, str(path)) from None
