"""Flat ``section.key = value`` run configuration.

Values are Python literals (numbers, strings, tuples, booleans); bare words are
kept as strings. Unknown keys are rejected by name.
"""

from __future__ import annotations

import ast
import hashlib
import os
from dataclasses import fields
from pathlib import Path

from .errors import ConfigurationError

# key -> default; None means "no default" (optional unless a command requires it)
SCHEMA = {
    "run.seed": 0,
    "run.out": "results",
    "run.id": "run",
    "mesh.path": None,
    "clouds.reference": None,
    "clouds.target": None,
    "clouds.test": None,
    "clouds.sorted": True,
    "space.n_lp": 6,
    "space.bc": "normal_zero",
    "space.kind": "full",
    "space.convention": "degree",
    "space.box_lo": None,
    "space.box_hi": None,
    "space.path": None,
    "objective.kind": "exp_jac",
    "objective.epsilon": 0.1,
    "objective.c_exp": None,
    "objective.kappa_msh": 10.0,
    "objective.lambda1": None,
    "objective.lambda2": None,
    "objective.quad_order": None,
    "objective.include_penalty": None,
    "objective.literal_mesh_sign": False,
    "method.name": "tykhonov",
    "method.xi": 1e-4,
    "method.delta": 1e-4,
    "method.delta_con": 1.0,
    "solver.max_iters": 500,
    "solver.grad_tol": 1e-6,
    "solver.memory": 20,
    "solver.barrier.mu0": 1.0,
    "solver.barrier.shrink": 0.2,
    "solver.barrier.rounds": 12,
    "solver.barrier.final_tol": 1e-8,
    "solver.auglag.penalty0": 10.0,
    "solver.auglag.growth": 10.0,
    "solver.auglag.constraint_tol": 1e-6,
    "solver.auglag.outer_iters": 30,
    "cpd.enabled": False,
    "cpd.beta": 1.0,
    "cpd.lam": 1.0,
    "cpd.w": 0.0,
    "cpd.max_em_iters": 300,
    "cpd.tol_coef": 1e-4,
    "cpd.tol_cover": 1e-5,
    "cpd.solver": "direct",
    "pod.tol": 1e-5,
}


def _experiment_keys():
    from .experiments import ExperimentConfig

    return {f"experiment.{f.name}": f.default for f in fields(ExperimentConfig)}


def _parse_value(text: str):
    text = text.strip()
    low = text.lower()
    if low in ("true", "false"):
        return low == "true"
    if low in ("none", "null", ""):
        return None
    try:
        return ast.literal_eval(text)
    except (ValueError, SyntaxError):
        return text


def parse_config_text(text: str, source: str = "<config>") -> dict:
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"{source}:{lineno}: expected 'section.key = value'")
        key, value = line.split("=", 1)
        key = key.strip()
        if not key or " " in key:
            raise ConfigurationError(f"{source}:{lineno}: malformed key {key!r}")
        out[key] = _parse_value(value)
    return out


class RunConfig(dict):
    """Resolved key-value configuration (schema defaults overlaid with the file)."""

    @classmethod
    def load(cls, path=None, overrides: dict | None = None) -> "RunConfig":
        schema = {**SCHEMA, **_experiment_keys()}
        values = {}
        if path is not None:
            p = Path(path)
            try:
                text = p.read_text()
            except OSError as exc:
                raise ConfigurationError(f"cannot read config file {p}: {exc.strerror}") from exc
            values.update(parse_config_text(text, str(p)))
        for k, v in (overrides or {}).items():
            if v is not None:
                values[k] = v
        unknown = sorted(set(values) - set(schema))
        if unknown:
            raise ConfigurationError(f"unknown configuration key {unknown[0]!r}")
        cfg = cls({**schema, **values})
        env_seed = os.environ.get("GRR_SEED")
        if env_seed is not None:
            try:
                cfg["run.seed"] = int(env_seed)
            except ValueError:
                raise ConfigurationError(f"GRR_SEED must be an integer, got {env_seed!r}") from None
        return cfg

    def require(self, *keys):
        missing = [k for k in keys if self.get(k) is None]
        if missing:
            raise ConfigurationError(f"missing required configuration key {missing[0]!r}")

    def section(self, prefix: str) -> dict:
        """Sub-dict of keys below ``prefix.`` with the prefix stripped."""
        n = len(prefix) + 1
        return {k[n:]: v for k, v in self.items() if k.startswith(prefix + ".")}

    def to_text(self) -> str:
        return "".join(f"{k} = {v!r}\n" for k, v in sorted(self.items()))

    def digest(self) -> str:
        return hashlib.sha256(self.to_text().encode()).hexdigest()
