"""Run configuration: defaults, JSON config files and flag overrides."""
from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

ENV_MODEL = "POSEHYP_MODEL"
ENV_DICT = "POSEHYP_DICT"


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    k: int = 5
    n_samples: int = 300
    tau_factor: float = 0.25
    missing_threshold: float = 0.002
    grid_theta: int = 15
    grid_phi: int = 15
    grid_u2: int = 5
    grid_u3: int = 5
    beta: float = 1e-3
    sparsity: int = 8
    budget: int = 200_000
    iters: int = 10
    constrain_head: bool = True
    sampling: str = "chain"
    max_proposals: int = 2_000_000
    fallback: bool = True
    model_path: str | None = None
    dict_path: str | None = None

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if f.type in ("int", "float") and isinstance(v, bool):
                raise ConfigError(f"{f.name}: expected a number, got {v!r}")
            if f.type == "int":
                if not isinstance(v, int):
                    raise ConfigError(f"{f.name}: expected an integer, got {v!r}")
            elif f.type == "float":
                if not isinstance(v, (int, float)):
                    raise ConfigError(f"{f.name}: expected a number, got {v!r}")
                object.__setattr__(self, f.name, float(v))
            else:
                continue
            # the seed may be zero; every other numeric field must be positive
            if v < 0 or (v == 0 and f.name != "seed"):
                raise ConfigError(f"{f.name}: must be positive, got {v!r}")
        if self.sampling not in ("chain", "joint"):
            raise ConfigError(f"sampling: expected 'chain' or 'joint', got {self.sampling!r}")
        for name in ("constrain_head", "fallback"):
            if not isinstance(getattr(self, name), bool):
                raise ConfigError(f"{name}: expected true or false")

    def to_dict(self) -> dict:
        return asdict(self)

    def digest_dict(self) -> dict:
        """Fields that affect results (paths excluded)."""
        d = self.to_dict()
        d.pop("model_path")
        d.pop("dict_path")
        return d

    def merged(self, **overrides) -> "RunConfig":
        known = {f.name for f in fields(self)}
        bad = set(overrides) - known
        if bad:
            raise ConfigError(f"unknown config field(s): {', '.join(sorted(bad))}")
        return replace(self, **{k: v for k, v in overrides.items() if v is not None})


def load_config(path=None, env=None, **overrides) -> RunConfig:
    """Defaults, then the JSON config file, then environment paths, then flags."""
    cfg = RunConfig()
    if path is not None:
        try:
            doc = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}: line {e.lineno} column {e.colno}: {e.msg}") from None
        if not isinstance(doc, dict):
            raise ConfigError(f"{path}: expected a JSON object")
        cfg = cfg.merged(**doc)
    env = os.environ if env is None else env
    paths = {}
    if env.get(ENV_MODEL):
        paths["model_path"] = env[ENV_MODEL]
    if env.get(ENV_DICT):
        paths["dict_path"] = env[ENV_DICT]
    return cfg.merged(**paths).merged(**overrides)
