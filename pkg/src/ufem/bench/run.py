"""Run configuration files and benchmark artifacts."""
from __future__ import annotations

import dataclasses
import json
import os
import time
from dataclasses import dataclass
from pathlib import Path

from ..adapt import adaptive_solve
from .problems import PROBLEMS, get_problem

__all__ = ["ConfigError", "RunConfig", "parse_config", "load_config", "dump_config", "run"]


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    problem: str = "ex1_u2"
    p: int = 1
    tol: float = 1e-3
    gamma: float = 0.5
    eta0: float = 0.05
    alpha0: float = 10.0
    delta0: float | None = None
    max_iter: int = 30
    max_dofs: int | None = None
    out: str = "out"
    seed: int = 0
    snapshot_every: int = 5

    def validate(self) -> "RunConfig":
        if self.problem not in PROBLEMS and not self.problem.startswith("ex3_eps"):
            raise ConfigError(f"unknown problem {self.problem!r}")
        if self.p < 1:
            raise ConfigError("p must be at least 1")
        if not 0 < self.gamma < 1:
            raise ConfigError("gamma must lie in (0, 1)")
        if not 0 < self.eta0 < 0.5:
            raise ConfigError("eta0 must lie in (0, 1/2)")
        if self.tol <= 0 or self.alpha0 <= 0:
            raise ConfigError("tol and alpha0 must be positive")
        if self.delta0 is not None and not 0 < self.delta0 <= 0.5:
            raise ConfigError("delta0 must lie in (0, 1/2]")
        if self.max_iter < 1:
            raise ConfigError("max_iter must be at least 1")
        if self.max_dofs is not None and self.max_dofs < 1:
            raise ConfigError("max_dofs must be positive")
        return self


_FIELDS = {f.name: f for f in dataclasses.fields(RunConfig)}


def _convert(name, text):
    kind = str(_FIELDS[name].type)
    if text.lower() in ("none", "") and "None" in kind:
        return None
    try:
        if kind.startswith("int"):
            return int(text)
        if kind.startswith("float"):
            return float(text)
    except ValueError:
        raise ConfigError(f"bad value for {name}: {text!r}") from None
    return text


def parse_config(text: str, **overrides) -> RunConfig:
    """``key = value`` lines; ``#`` starts a comment; unknown keys are errors."""
    values = {}
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {n}: expected 'key = value'")
        key, val = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in _FIELDS:
            raise ConfigError(f"line {n}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"line {n}: duplicate key {key!r}")
        values[key] = _convert(key, val)
    values.update({k: v for k, v in overrides.items() if v is not None})
    return RunConfig(**values).validate()


def load_config(path, **overrides) -> RunConfig:
    return parse_config(Path(path).read_text(encoding="utf-8"), **overrides)


def dump_config(cfg: RunConfig) -> str:
    return "".join(f"{k} = {'none' if v is None else v}\n" for k, v in dataclasses.asdict(cfg).items())


def run(cfg: RunConfig, log=None) -> dict:
    """Adaptive solve with CSV, SVG and summary artifacts under ``cfg.out``."""
    cfg.validate()
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    pr = get_problem(cfg.problem)
    t0 = time.perf_counter()
    rec = adaptive_solve(pr.domain, cfg.p, pr.f, pr.g, pr.g_grad, pr.exact, tol=cfg.tol, gamma=cfg.gamma,
                         eta0=cfg.eta0, alpha0=cfg.alpha0, max_iter=cfg.max_iter, max_dofs=cfg.max_dofs,
                         n0=pr.n0, snapshot_every=cfg.snapshot_every, log=log, delta0=cfg.delta0)
    rec.write_csv(out / "iterations.csv")
    if rec.rows:
        rec.snapshots.setdefault(rec.rows[-1].iteration, rec.induced.to_svg())
    for it, svg in sorted(rec.snapshots.items()):
        (out / f"mesh_{it:03d}.svg").write_text(svg, encoding="utf-8")
    last = rec.rows[-1]
    summary = {"problem": cfg.problem, "p": cfg.p, "iterations": len(rec.rows), "dofs": last.dofs,
               "estimator": last.estimator, "dg_error": last.dg_error, "effectivity": last.effectivity,
               "converged": rec.converged, "reason": rec.reason,
               "seconds": round(time.perf_counter() - t0, 3), "config": dataclasses.asdict(cfg)}
    (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n", encoding="utf-8")
    (out / "config.txt").write_text(dump_config(cfg), encoding="utf-8")
    return summary


def thread_count() -> int | None:
    """Thread count requested through ``UFEM_THREADS`` (None when unset)."""
    val = os.environ.get("UFEM_THREADS")
    return int(val) if val else None
