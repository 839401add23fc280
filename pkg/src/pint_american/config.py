"""Run configuration: example presets, flat ``key = value`` files and overrides."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .market_models import ModelKind, ModelParams


class ConfigError(ValueError):
    pass


METHODS = ("sequential", "pint", "direct")
PRECONDITIONERS = ("auto", "nkpa", "projected")
FORMATS = ("csv", "markdown", "json")


@dataclass
class RunConfig:
    model: str = "bs1d"
    K: float = 100.0
    T: float = 1.0
    r: float = 0.03
    sigma: Optional[float] = 0.15
    sigma1: Optional[float] = None
    sigma2: Optional[float] = None
    rho: float = 0.0
    kappa: Optional[float] = None
    eta: Optional[float] = None
    s_max: float = 300.0
    v_max: Optional[float] = None
    ns: int = 1280
    nv: Optional[int] = None
    nt: tuple = (20,)
    method: str = "pint"
    preconditioner: str = "auto"
    alpha: float = 1e-8
    tol1: float = 1e-6
    tol2: float = 1e-10
    psi: str = "average"
    max_iter: int = 200
    workers: int = 1
    eval_s: float = 100.0
    eval_v: Optional[float] = None
    reference: Optional[float] = None
    out: Optional[str] = None
    format: str = "csv"

    def params(self) -> ModelParams:
        return ModelParams(kind=self.model, K=self.K, T=self.T, r=self.r, sigma=self.sigma,
                           sigma1=self.sigma1, sigma2=self.sigma2, rho=self.rho,
                           kappa=self.kappa, eta=self.eta)

    @property
    def is_2d(self) -> bool:
        return ModelKind(self.model) is not ModelKind.BLACK_SCHOLES_1D

    @property
    def eval_point(self):
        return (self.eval_s, self.eval_v) if self.is_2d else self.eval_s

    def resolved_preconditioner(self) -> str:
        if self.preconditioner != "auto":
            return self.preconditioner
        return "projected" if self.is_2d else "nkpa"

    def validate(self) -> "RunConfig":
        try:
            ModelKind(self.model)
        except ValueError:
            raise ConfigError(f"unknown model {self.model!r}") from None
        if self.method not in METHODS:
            raise ConfigError(f"method must be one of {METHODS}")
        if self.preconditioner not in PRECONDITIONERS:
            raise ConfigError(f"preconditioner must be one of {PRECONDITIONERS}")
        if self.format not in FORMATS:
            raise ConfigError(f"format must be one of {FORMATS}")
        if self.psi not in ("average", "rounded", "mode"):
            raise ConfigError("psi must be average, rounded or mode")
        if self.tol1 <= 0 or self.tol2 <= 0:
            raise ConfigError("tolerances must be positive")
        if not 0 < self.alpha < 1:
            raise ConfigError("alpha must lie in (0, 1)")
        if not self.nt or any(n < 1 for n in self.nt):
            raise ConfigError("nt must be a nonempty list of positive integers")
        if self.ns < 1 or self.workers < 1 or self.max_iter < 1:
            raise ConfigError("ns, workers and max_iter must be positive")
        if self.is_2d:
            if self.nv is None or self.nv < 1 or self.v_max is None or self.v_max <= 0:
                raise ConfigError("2D models need nv >= 1 and v_max > 0")
            if self.eval_v is None or not 0 <= self.eval_v <= self.v_max:
                raise ConfigError("evaluation point outside the domain")
        if not 0 <= self.eval_s <= self.s_max:
            raise ConfigError("evaluation point outside the domain")
        try:
            self.params()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        return self


EXAMPLES = {
    1: dict(model="bs1d", K=100.0, T=1.0, r=0.03, sigma=0.15, s_max=300.0, ns=1280,
            nt=(20, 40, 80, 160, 320), eval_s=100.0, reference=4.820608),
    2: dict(model="spread2d", K=25.0, T=122.0 / 365.0, r=0.035, sigma=None, sigma1=0.35,
            sigma2=0.38, rho=0.6, s_max=300.0, v_max=300.0, ns=64, nv=64, nt=(10,),
            eval_s=127.68, eval_v=99.43, reference=6.932875),
    3: dict(model="heston2d", K=10.0, T=0.25, r=0.1, sigma=0.9, rho=0.1, kappa=5.0, eta=0.16,
            s_max=20.0, v_max=1.0, ns=80, nv=40, nt=(10,), eval_s=10.0, eval_v=0.25,
            reference=0.795968),
}


def _coerce(name: str, value):
    """Convert a string (or scalar) to the type of RunConfig field ``name``."""
    fields = {f.name: f for f in dataclasses.fields(RunConfig)}
    if name not in fields:
        raise ConfigError(f"unknown configuration key {name!r}")
    if not isinstance(value, str):
        if name == "nt":
            return (int(value),) if isinstance(value, int) else tuple(int(x) for x in value)
        return value
    text = value.strip()
    if text.lower() in ("", "none"):
        return None
    default = getattr(RunConfig(), name)
    try:
        if name == "nt":
            return tuple(int(x) for x in text.replace(",", " ").split())
        if name in ("ns", "nv", "workers", "max_iter"):
            return int(text)
        if isinstance(default, str) or name in ("out",):
            return text
        return float(text)
    except ValueError:
        raise ConfigError(f"bad value for {name}: {value!r}") from None


def parse_config_text(text: str) -> dict:
    """Parse flat ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, value = (part.strip() for part in line.split("=", 1))
        out[key] = _coerce(key, value)
    return out


def load_config_file(path: str | Path) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    return parse_config_text(text)


def build_config(example: Optional[int] = None, file_values: Optional[dict] = None,
                 overrides: Optional[dict] = None) -> RunConfig:
    """Preset, then file values, then overrides (flags win)."""
    values = {}
    if example is not None:
        if example not in EXAMPLES:
            raise ConfigError(f"unknown example {example}")
        values.update(EXAMPLES[example])
    for source in (file_values or {}, overrides or {}):
        for key, value in source.items():
            if value is not None:
                values[key] = _coerce(key, value)
    return RunConfig(**values).validate()
