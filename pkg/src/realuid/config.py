"""JSON run configuration with sections ``path``, ``coeffs``, ``net``, ``train``,
``data``, ``eval`` (plus an optional ``run`` provenance block). Unknown keys
are rejected everywhere."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .data import CouplingSampler, DataSampler
from .engine import DistillConfig, EvalConfig, NetConfig, TeacherConfig
from .losses import Coeffs
from .paths import PathSpec

SECTIONS = ("path", "coeffs", "net", "train", "data", "eval", "run")


class ConfigError(ValueError):
    pass


@dataclass
class TrainSection:
    mode: str = "uid"
    k_fake_steps: int = 5
    n_iters: int = 20000
    batch_size: int = 256
    lr_fake: float = 3e-5
    lr_gen: float = 3e-5
    warmup_steps: int = 500
    ema_decay: float = 0.999
    clip_norm: float | None = 1.0
    betas: tuple = (0.0, 0.999)
    weight_decay: float = 0.0
    seed: int = 0
    alternation: str = "pseudocode"
    residual: bool = True
    init_generator_from_teacher: bool = False
    init_fake_from_teacher: bool = False
    lr_decay: str = "none"
    teacher: dict = field(default_factory=dict)


@dataclass
class DataSection:
    name: str = "gauss1d"
    params: dict = field(default_factory=dict)
    coupling: str | None = None


@dataclass
class RunConfig:
    path: PathSpec = field(default_factory=PathSpec)
    coeffs: Coeffs = field(default_factory=Coeffs)
    net: NetConfig = field(default_factory=NetConfig)
    train: TrainSection = field(default_factory=TrainSection)
    data: DataSection = field(default_factory=DataSection)
    eval: EvalConfig = field(default_factory=EvalConfig)
    run: dict = field(default_factory=dict)

    # -- resolution
    def teacher_config(self) -> TeacherConfig:
        t = dict(self.train.teacher)
        t.setdefault("seed", self.train.seed)
        t.setdefault("batch_size", self.train.batch_size)
        net = t.pop("net", None)
        cfg = _build(TeacherConfig, t, "train.teacher")
        cfg.net = self.net if net is None else _build(NetConfig, net, "train.teacher.net")
        cfg.net.hidden = tuple(cfg.net.hidden)
        cfg.betas = tuple(cfg.betas)
        if any(int(h) < 1 for h in cfg.net.hidden) or not cfg.net.hidden:
            raise ConfigError("net.hidden needs at least one layer of width >= 1")
        return cfg

    def distill_config(self) -> DistillConfig:
        """Raises :class:`losses.CoefficientError` on mode/coefficient inconsistency."""
        tr = {f.name: getattr(self.train, f.name) for f in fields(TrainSection) if f.name != "teacher"}
        tr["betas"] = tuple(tr["betas"])
        return DistillConfig(coeffs=self.coeffs, path=self.path, net=self.net, eval=self.eval, **tr)

    def sampler(self):
        if self.data.coupling is not None:
            return CouplingSampler(self.data.coupling, **self.data.params)
        return DataSampler(self.data.name, **self.data.params)

    def to_dict(self) -> dict:
        return json.loads(json.dumps(asdict(self)))

    def write(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")


def _build(cls, d, where):
    if not isinstance(d, dict):
        raise ConfigError(f"section {where!r} must be an object")
    names = {f.name for f in fields(cls)}
    unknown = set(d) - names
    if unknown:
        raise ConfigError(f"unknown keys in {where!r}: {sorted(unknown)}")
    try:
        return cls(**d)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid {where!r}: {exc}") from exc


def from_dict(d: dict) -> RunConfig:
    if not isinstance(d, dict):
        raise ConfigError("config must be a JSON object")
    unknown = set(d) - set(SECTIONS)
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    net = _build(NetConfig, d.get("net", {}), "net")
    net.hidden = tuple(int(h) for h in net.hidden)
    if not net.hidden or min(net.hidden) < 1:
        raise ConfigError("net.hidden needs at least one layer of width >= 1")
    if net.activation not in ("silu", "tanh"):
        raise ConfigError(f"unknown activation {net.activation!r}")
    cfg = RunConfig(
        path=_build(PathSpec, d.get("path", {}), "path"),
        coeffs=_build(Coeffs, d.get("coeffs", {}), "coeffs"),
        net=net,
        train=_build(TrainSection, d.get("train", {}), "train"),
        data=_build(DataSection, d.get("data", {}), "data"),
        eval=_build(EvalConfig, d.get("eval", {}), "eval"),
        run=dict(d.get("run", {})),
    )
    try:
        cfg.sampler()
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid data section: {exc}") from exc
    return cfg


def load(path) -> RunConfig:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    try:
        d = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{p}: invalid JSON ({exc})") from exc
    return from_dict(d)
