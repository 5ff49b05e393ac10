"""Run configuration documents.

JSON in, dataclasses out, strictly validated: unknown keys are rejected so
typos fail loudly instead of silently running defaults.  Parse, serialize,
parse again is the identity.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Optional

from .exceptions import ConfigError

SCENARIO_KINDS = ("gaussian-mixture", "sparse-regression", "custom")
ALGORITHMS = ("modular-mcmc", "modular-st")


def _require_keys(section: str, doc: dict, allowed: dict) -> dict:
    unknown = set(doc) - set(allowed)
    if unknown:
        raise ConfigError(f"unknown key(s) in {section}: {sorted(unknown)}")
    out = {}
    for key, (types, required, default) in allowed.items():
        if key in doc:
            value = doc[key]
            if value is not None and not isinstance(value, types):
                raise ConfigError(
                    f"{section}.{key} must be {types}, got {type(value).__name__}"
                )
            out[key] = value
        elif required:
            raise ConfigError(f"missing required key {section}.{key}")
        else:
            out[key] = default
    return out


@dataclass(frozen=True)
class ScenarioConfig:
    kind: str
    seed: int = 0
    d: Optional[int] = None
    rho: Optional[float] = None
    module: Optional[str] = None

    @classmethod
    def from_dict(cls, doc: dict) -> "ScenarioConfig":
        got = _require_keys(
            "scenario",
            doc,
            {
                "kind": ((str,), True, None),
                "seed": ((int,), False, 0),
                "d": ((int,), False, None),
                "rho": ((int, float), False, None),
                "module": ((str,), False, None),
            },
        )
        if got["kind"] not in SCENARIO_KINDS:
            raise ConfigError(f"scenario.kind must be one of {SCENARIO_KINDS}")
        if got["kind"] == "gaussian-mixture" and (got["d"] is None or got["rho"] is None):
            raise ConfigError("gaussian-mixture scenario needs scenario.d and scenario.rho")
        if got["kind"] == "custom" and not got["module"]:
            raise ConfigError("custom scenario needs scenario.module")
        if got["rho"] is not None:
            got["rho"] = float(got["rho"])
        return cls(**got)


@dataclass(frozen=True)
class SamplerConfig:
    algorithm: str = "modular-st"
    n_steps: int = 10_000
    burn_in: Optional[int] = None
    n_leapfrog: Optional[int] = None
    eps: Optional[float] = None
    eps0: Optional[float] = None
    snapshot_stride: int = 10

    @classmethod
    def from_dict(cls, doc: dict) -> "SamplerConfig":
        got = _require_keys(
            "sampler",
            doc,
            {
                "algorithm": ((str,), False, "modular-st"),
                "n_steps": ((int,), False, 10_000),
                "burn_in": ((int,), False, None),
                "n_leapfrog": ((int,), False, None),
                "eps": ((int, float), False, None),
                "eps0": ((int, float), False, None),
                "snapshot_stride": ((int,), False, 10),
            },
        )
        if got["algorithm"] not in ALGORITHMS:
            raise ConfigError(f"sampler.algorithm must be one of {ALGORITHMS}")
        if got["n_steps"] < 2:
            raise ConfigError("sampler.n_steps must be at least 2")
        for key in ("eps", "eps0"):
            if got[key] is not None:
                got[key] = float(got[key])
        return cls(**got)


@dataclass(frozen=True)
class TuningConfig:
    n_pilot: int = 2000
    pilot_burn_in: int = 500
    max_rounds: int = 20
    beta1: Optional[float] = None
    artifact: Optional[str] = None

    @classmethod
    def from_dict(cls, doc: dict) -> "TuningConfig":
        got = _require_keys(
            "tuning",
            doc,
            {
                "n_pilot": ((int,), False, 2000),
                "pilot_burn_in": ((int,), False, 500),
                "max_rounds": ((int,), False, 20),
                "beta1": ((int, float), False, None),
                "artifact": ((str,), False, None),
            },
        )
        if got["beta1"] is not None:
            got["beta1"] = float(got["beta1"])
        return cls(**got)


@dataclass(frozen=True)
class SeConfig:
    block_size: Optional[int] = None
    replicates: int = 1000

    @classmethod
    def from_dict(cls, doc: dict) -> "SeConfig":
        got = _require_keys(
            "se",
            doc,
            {
                "block_size": ((int,), False, None),
                "replicates": ((int,), False, 1000),
            },
        )
        return cls(**got)


@dataclass(frozen=True)
class RunConfig:
    scenario: ScenarioConfig
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    tuning: TuningConfig = field(default_factory=TuningConfig)
    se: SeConfig = field(default_factory=SeConfig)
    replications: int = 1
    seed: int = 0
    threads: Optional[int] = None
    output_dir: str = "out"

    @classmethod
    def from_dict(cls, doc: dict) -> "RunConfig":
        got = _require_keys(
            "config",
            doc,
            {
                "scenario": ((dict,), True, None),
                "sampler": ((dict,), False, {}),
                "tuning": ((dict,), False, {}),
                "se": ((dict,), False, {}),
                "replications": ((int,), False, 1),
                "seed": ((int,), False, 0),
                "threads": ((int,), False, None),
                "output_dir": ((str,), False, "out"),
            },
        )
        if got["replications"] < 1:
            raise ConfigError("replications must be at least 1")
        return cls(
            scenario=ScenarioConfig.from_dict(got["scenario"]),
            sampler=SamplerConfig.from_dict(got["sampler"] or {}),
            tuning=TuningConfig.from_dict(got["tuning"] or {}),
            se=SeConfig.from_dict(got["se"] or {}),
            replications=got["replications"],
            seed=got["seed"],
            threads=got["threads"],
            output_dir=got["output_dir"],
        )

    def to_dict(self) -> dict:
        return asdict(self)

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def loads(cls, text: str) -> "RunConfig":
        return cls.from_dict(json.loads(text))

    @classmethod
    def load(cls, path) -> "RunConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))
