"""Simulation configuration and its strict JSON form."""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Tuple

from .errors import ConfigError


@dataclass(frozen=True)
class SimConfig:
    rounds: int = 30
    batch_size: int = 32
    lr: float = 0.05
    local_epochs: int = 1
    lam: float = 30.0  # weight of the alignment loss
    gamma: float = 1.0  # pull toward the neighbour reference model
    n_peers: int = 3
    k: int = 16
    t_dkm: int = 5
    sigma: float = 1.0
    n_freqs: int = 1024
    alpha_mix: float = 0.5
    beta_dist: float = 1.0
    seed: int = 0
    # data
    num_clients: int = 8
    num_classes: int = 4
    dim: int = 16
    num_samples: int = 4000
    spread: float = 2.0
    class_scale: float = 2.0
    dirichlet_alpha: float = 0.4
    test_fraction: float = 0.2
    hidden: Tuple[int, ...] = (32, 32)
    # delayed clients
    delayed_clients: Tuple[int, ...] = (7,)
    join_round: int = 5
    align_rounds: Optional[int] = None
    # compression
    wcp_max_iters: int = 50
    wcp_tol: float = 1e-6
    dense_exchange: bool = False
    shared_init: bool = True
    workers: int = 1

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        object.__setattr__(self, "delayed_clients", tuple(int(c) for c in self.delayed_clients))

    def problems(self):
        bad = []
        positive = ["batch_size", "lr", "local_epochs", "k", "t_dkm", "sigma", "n_freqs", "beta_dist",
                    "num_clients", "num_classes", "dim", "num_samples", "dirichlet_alpha", "wcp_max_iters",
                    "wcp_tol", "workers", "class_scale"]
        for name in positive:
            if getattr(self, name) <= 0:
                bad.append(f"{name}: must be > 0 (got {getattr(self, name)!r})")
        for name in ["rounds", "lam", "gamma", "n_peers", "spread", "join_round", "seed"]:
            if getattr(self, name) < 0:
                bad.append(f"{name}: must be >= 0 (got {getattr(self, name)!r})")
        if self.k < 2:
            bad.append("k: must be >= 2")
        if not 0.0 <= self.alpha_mix <= 1.0:
            bad.append("alpha_mix: must lie in [0, 1]")
        if not 0.0 < self.test_fraction < 1.0:
            bad.append("test_fraction: must lie in (0, 1)")
        if self.num_samples < self.num_classes:
            bad.append("num_samples: must be >= num_classes")
        if any(h <= 0 for h in self.hidden):
            bad.append("hidden: widths must be positive")
        if any(not 0 <= c < self.num_clients for c in self.delayed_clients):
            bad.append("delayed_clients: ids must lie in [0, num_clients)")
        if self.delayed_clients and self.join_round < 1:
            bad.append("join_round: delayed clients must join at round >= 1")
        if self.align_rounds is not None and self.align_rounds < 0:
            bad.append("align_rounds: must be >= 0 or null")
        return bad

    def validate(self) -> "SimConfig":
        bad = self.problems()
        if bad:
            raise ConfigError("invalid configuration:\n  " + "\n  ".join(bad))
        return self

    def join_rounds(self):
        return {c: (self.join_round if c in self.delayed_clients else 0) for c in range(self.num_clients)}

    def replace(self, **kw) -> "SimConfig":
        return dataclasses.replace(self, **kw)


SIM_FIELDS = {f.name for f in dataclasses.fields(SimConfig)}


@dataclass(frozen=True)
class RunConfig:
    sim: SimConfig = field(default_factory=SimConfig)
    out: str = "runs/default"
    label: str = "aligned"

    @classmethod
    def from_dict(cls, doc: dict) -> "RunConfig":
        if not isinstance(doc, dict):
            raise ConfigError("config must be a JSON object")
        unknown = sorted(set(doc) - SIM_FIELDS - {"out", "label"})
        if unknown:
            raise ConfigError("unknown config keys: " + ", ".join(unknown))
        sim_kw = {k: v for k, v in doc.items() if k in SIM_FIELDS}
        try:
            sim = SimConfig(**sim_kw)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad config value: {exc}") from exc
        return cls(sim.validate(), str(doc.get("out", cls.out)), str(doc.get("label", cls.label)))

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            doc = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: not valid JSON ({exc})") from exc
        return cls.from_dict(doc)

    def to_dict(self) -> dict:
        doc = dataclasses.asdict(self.sim)
        doc["hidden"] = list(doc["hidden"])
        doc["delayed_clients"] = list(doc["delayed_clients"])
        doc.update(out=self.out, label=self.label)
        return doc
