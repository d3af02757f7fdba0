"""
Configuration management for kitsim

Manifests are plain text files of ``section.key = value`` lines (``#`` starts
a comment line). Sections: model, scaling, control, sim, init, sweep,
compare, contours. Every key is validated, unknown keys are rejected, and
all defaults are materialised so that the echoed manifest reproduces the
run exactly.
"""

import logging
import math
import sys
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from pathlib import Path
from typing import Dict, List, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from . import __version__
from .control import ControlStrategy, DesiredSpeedSpec, StrategyKind, VdMode
from .engine import InitDist, InitKind, ScalingParams, SimConfig
from .errors import ConfigError, KitsimError
from .experiments import DEFAULT_COMPARE_NU0, SweepSpec, default_rho_grid, nu0_label
from .kernel import DEFAULT_DELTA_V, DEFAULT_GAMMA, KernelParams

LOG = logging.getLogger(__name__)

DEFAULT_SWEEP_STRATEGIES = "none, variance:0.1, variance:10, desired:0.001"
DEFAULT_TAU_GRID = tuple(round(0.25 * k, 12) for k in range(21))
DEFAULT_N_BINS = 50

VERBOSITY_LEVELS = {0: logging.WARNING, 1: logging.INFO}


def setup_logging(verbose: int = 0) -> None:
    """Route kitsim logs to stderr: 0 = warnings, 1 = progress, 2+ = debug"""
    from rich.console import Console
    from rich.logging import RichHandler

    level = VERBOSITY_LEVELS.get(verbose, logging.DEBUG)
    handler = RichHandler(console=Console(file=sys.stderr), show_time=False, show_path=verbose >= 2)
    root = logging.getLogger("kitsim")
    root.handlers[:] = [handler]
    root.setLevel(level)
    root.propagate = False


def _split_list(value):
    if isinstance(value, str):
        return [item.strip() for item in value.split(",") if item.strip()]
    return value


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class ModelSection(_Section):
    rho: float = Field(ge=0.0, le=1.0)
    gamma: float = Field(DEFAULT_GAMMA, gt=0.0)
    delta_v: float = Field(DEFAULT_DELTA_V, gt=0.0)


class ScalingSection(_Section):
    epsilon: float = Field(1e-2, gt=0.0, le=1.0)
    dtau: Optional[float] = Field(None, gt=0.0)


class ControlSection(_Section):
    kind: str = "none"
    nu0: Optional[float] = Field(None, gt=0.0)
    vd_mode: VdMode = VdMode.LINEAR_CONGESTION
    vd: Optional[float] = Field(None, ge=0.0, le=1.0)

    @field_validator("kind")
    @classmethod
    def _known_kind(cls, value: str) -> str:
        try:
            return StrategyKind.parse(value).value
        except KitsimError as exc:
            raise ValueError(str(exc)) from None

    @model_validator(mode="after")
    def _required_fields(self):
        if self.kind != "none" and self.nu0 is None:
            raise ValueError(f"control.nu0 is required when control.kind = {self.kind}")
        if self.vd_mode is VdMode.CONSTANT and self.vd is None:
            raise ValueError("control.vd is required when control.vd_mode = constant")
        return self


class SimSection(_Section):
    n_particles: int = Field(10_000, ge=2)
    tau_end: float = Field(10.0, ge=0.0, allow_inf_nan=False)
    sample_stride: int = Field(10, ge=1)
    seed: int = Field(0, ge=0, lt=2 ** 64)
    workers: int = Field(1, ge=0)  # 0 = one per physical core


class InitSection(_Section):
    kind: InitKind = InitKind.UNIFORM01
    v0: Optional[float] = Field(None, ge=0.0, le=1.0)
    mean: Optional[float] = Field(None, ge=0.0, le=1.0)
    stddev: Optional[float] = Field(None, gt=0.0)

    @model_validator(mode="after")
    def _required_fields(self):
        if self.kind is InitKind.DIRAC and self.v0 is None:
            raise ValueError("init.v0 is required when init.kind = dirac")
        if self.kind is InitKind.TRUNCATED_GAUSSIAN and (self.mean is None or self.stddev is None):
            raise ValueError("init.mean and init.stddev are required when init.kind = truncated_gaussian")
        return self


class SweepSection(_Section):
    rho: List[float] = Field(default_factory=lambda: list(default_rho_grid()))
    tau_end: float = Field(100.0, ge=0.0, allow_inf_nan=False)
    strategies: List[str] = Field(default_factory=lambda: _split_list(DEFAULT_SWEEP_STRATEGIES))

    @field_validator("rho", "strategies", mode="before")
    @classmethod
    def _comma_lists(cls, value):
        return _split_list(value)

    @field_validator("rho")
    @classmethod
    def _sorted_unit_grid(cls, value: List[float]) -> List[float]:
        if not value:
            raise ValueError("sweep.rho must not be empty")
        if any(r < 0.0 or r > 1.0 for r in value):
            raise ValueError("sweep.rho values must lie in [0, 1]")
        if value != sorted(value):
            raise ValueError("sweep.rho must be sorted")
        return value


class CompareSection(_Section):
    kind: str = "variance"
    nu0: List[float] = Field(default_factory=lambda: list(DEFAULT_COMPARE_NU0))

    @field_validator("nu0", mode="before")
    @classmethod
    def _comma_lists(cls, value):
        return _split_list(value)

    @field_validator("kind")
    @classmethod
    def _controlled_kind(cls, value: str) -> str:
        try:
            kind = StrategyKind.parse(value)
        except KitsimError as exc:
            raise ValueError(str(exc)) from None
        if kind is StrategyKind.NONE:
            raise ValueError("compare.kind must be variance or desired")
        return kind.value

    @field_validator("nu0")
    @classmethod
    def _positive(cls, value: List[float]) -> List[float]:
        if any(not nu0 > 0 for nu0 in value):
            raise ValueError("compare.nu0 values must be > 0")
        return value


class ContoursSection(_Section):
    n_bins: int = Field(DEFAULT_N_BINS, ge=1)
    tau_grid: List[float] = Field(default_factory=lambda: list(DEFAULT_TAU_GRID))

    @field_validator("tau_grid", mode="before")
    @classmethod
    def _comma_lists(cls, value):
        return _split_list(value)

    @field_validator("tau_grid")
    @classmethod
    def _sorted_grid(cls, value: List[float]) -> List[float]:
        if not value or value != sorted(value) or value[0] < 0:
            raise ValueError("contours.tau_grid must be a non-empty, sorted list of times >= 0")
        return value


class ManifestSchema(_Section):
    model: ModelSection
    scaling: ScalingSection = Field(default_factory=ScalingSection)
    control: ControlSection = Field(default_factory=ControlSection)
    sim: SimSection = Field(default_factory=SimSection)
    init: InitSection = Field(default_factory=InitSection)
    sweep: SweepSection = Field(default_factory=SweepSection)
    compare: CompareSection = Field(default_factory=CompareSection)
    contours: ContoursSection = Field(default_factory=ContoursSection)


def read_key_values(path: Path) -> Dict[str, Dict[str, str]]:
    """Parse ``section.key = value`` lines into nested sections"""
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    sections: Dict[str, Dict[str, str]] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'section.key = value', got {line!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        section, dot, name = key.partition(".")
        if not dot or not section or not name or "." in name:
            raise ConfigError(f"{path}:{lineno}: key {key!r} must look like section.key")
        if name in sections.setdefault(section, {}):
            raise ConfigError(f"{path}:{lineno}: duplicate key {key}")
        sections[section][name] = value
    return sections


def _describe_validation(path: Path, exc: ValidationError) -> str:
    problems = []
    for error in exc.errors():
        key = ".".join(str(part) for part in error["loc"]) or "<root>"
        if error["type"] == "extra_forbidden":
            problems.append(f"unknown key {key}")
        elif error["type"] == "missing":
            problems.append(f"missing required key {key}")
        else:
            problems.append(f"{key}: {error['msg']}")
    return f"{path}: " + "; ".join(problems)


def parse_strategy(text: str, vd: DesiredSpeedSpec) -> ControlStrategy:
    """Parse 'none', 'variance:NU0' or 'desired:NU0' (as used in sweep.strategies)"""
    name, _, nu0_text = text.partition(":")
    kind = StrategyKind.parse(name)
    nu0 = None
    if nu0_text:
        try:
            nu0 = float(nu0_text)
        except ValueError:
            raise ConfigError(f"strategy {text!r}: bad penalisation {nu0_text!r}") from None
    if kind is StrategyKind.NONE:
        if nu0 is not None and not math.isinf(nu0):
            raise ConfigError(f"strategy {text!r}: 'none' takes no penalisation")
        return ControlStrategy.unconstrained()
    if nu0 is None:
        raise ConfigError(f"strategy {text!r} needs a penalisation, e.g. {kind.value}:0.1")
    if math.isinf(nu0):
        return ControlStrategy.unconstrained()
    if kind is StrategyKind.VARIANCE:
        return ControlStrategy.variance(nu0)
    return ControlStrategy.desired(nu0, vd)


def format_strategy(strategy: ControlStrategy) -> str:
    if strategy.kind is StrategyKind.NONE:
        return "none"
    return f"{strategy.kind.value}:{strategy.nu0!r}"


def _fmt(value: float) -> str:
    return nu0_label(value) if isinstance(value, float) and math.isinf(value) else repr(value)


@dataclass
class RunManifest:
    """Fully resolved run description; nothing is left implicit"""

    sim: SimConfig
    sweep: SweepSpec
    vd: DesiredSpeedSpec = field(default_factory=DesiredSpeedSpec)
    compare_kind: StrategyKind = StrategyKind.VARIANCE
    compare_nu0: Tuple[float, ...] = DEFAULT_COMPARE_NU0
    contours_n_bins: int = DEFAULT_N_BINS
    contours_tau_grid: Tuple[float, ...] = DEFAULT_TAU_GRID
    workers: int = 1
    version: str = __version__
    timestamp: str = field(default="", compare=False)
    source: Optional[Path] = field(default=None, compare=False)
    outputs: List[Path] = field(default_factory=list, compare=False)

    @property
    def seed(self) -> int:
        return self.sim.seed

    @classmethod
    def load(cls, config_path: Path, seed: Optional[int] = None) -> "RunManifest":
        """
        Load and validate a manifest file

        Args:
            config_path: path of the key=value file
            seed: optional override of sim.seed

        Raises:
            ConfigError: missing file, schema violation (names the key) or
                an invariant violation such as p > 1
        """
        config_path = Path(config_path)
        sections = read_key_values(config_path)
        if seed is not None:
            sections.setdefault("sim", {})["seed"] = str(seed)
        try:
            schema = ManifestSchema.model_validate(sections)
        except ValidationError as exc:
            raise ConfigError(_describe_validation(config_path, exc)) from None
        try:
            manifest = cls.from_schema(schema)
        except ConfigError as exc:
            raise ConfigError(f"{config_path}: {exc}") from None
        except KitsimError as exc:
            raise ConfigError(f"{config_path}: {exc}") from None
        manifest.source = config_path
        LOG.info(f"⚙️ Config: loaded {config_path} (seed={manifest.seed})")
        return manifest

    @classmethod
    def from_schema(cls, schema: ManifestSchema) -> "RunManifest":
        """Build domain objects from a validated schema"""
        control = schema.control
        vd = DesiredSpeedSpec(control.vd_mode, control.vd if control.vd_mode is VdMode.CONSTANT else None)
        kind = StrategyKind(control.kind)
        if kind is StrategyKind.NONE:
            strategy = ControlStrategy.unconstrained()
        elif kind is StrategyKind.VARIANCE:
            strategy = ControlStrategy.variance(control.nu0)
        else:
            strategy = ControlStrategy.desired(control.nu0, vd)
        init = schema.init
        sim = SimConfig(
            rho=schema.model.rho,
            n_particles=schema.sim.n_particles,
            kernel=KernelParams(schema.model.gamma, schema.model.delta_v),
            scaling=ScalingParams(schema.scaling.epsilon, schema.scaling.dtau),
            strategy=strategy,
            tau_end=schema.sim.tau_end,
            sample_stride=schema.sim.sample_stride,
            seed=schema.sim.seed,
            init=InitDist(init.kind, init.v0, init.mean, init.stddev),
        )
        sim.check_rate()
        try:
            strategies = tuple(parse_strategy(text, vd) for text in schema.sweep.strategies)
        except KitsimError as exc:
            raise ConfigError(f"sweep.strategies: {exc}") from None
        sweep = SweepSpec(
            base=sim,
            rho_grid=tuple(schema.sweep.rho),
            tau_end=schema.sweep.tau_end,
            strategies=strategies,
        )
        replace(sim, rho=max(sweep.rho_grid)).check_rate()
        workers = schema.sim.workers
        if workers == 0:
            from .experiments import default_workers
            workers = default_workers()
        return cls(
            sim=sim,
            sweep=sweep,
            vd=vd,
            compare_kind=StrategyKind(schema.compare.kind),
            compare_nu0=tuple(schema.compare.nu0),
            contours_n_bins=schema.contours.n_bins,
            contours_tau_grid=tuple(schema.contours.tau_grid),
            workers=workers,
            timestamp=datetime.now(timezone.utc).isoformat(timespec="seconds"),
        )

    def items(self) -> List[Tuple[str, str]]:
        """Resolved settings as ordered (dotted key, value) pairs"""
        sim = self.sim
        strategy = sim.strategy
        vd = self.vd
        pairs = [
            ("model.rho", repr(sim.rho)),
            ("model.gamma", repr(sim.kernel.gamma)),
            ("model.delta_v", repr(sim.kernel.delta_v)),
            ("scaling.epsilon", repr(sim.scaling.epsilon)),
            ("scaling.dtau", repr(sim.scaling.dtau)),
            ("control.kind", strategy.kind.value),
        ]
        if strategy.nu0 is not None:
            pairs.append(("control.nu0", repr(strategy.nu0)))
        pairs.append(("control.vd_mode", vd.mode.value))
        if vd.mode is VdMode.CONSTANT:
            pairs.append(("control.vd", repr(vd.value)))
        pairs += [
            ("sim.n_particles", str(sim.n_particles)),
            ("sim.tau_end", repr(sim.tau_end)),
            ("sim.sample_stride", str(sim.sample_stride)),
            ("sim.seed", str(sim.seed)),
            ("sim.workers", str(self.workers)),
            ("init.kind", sim.init.kind.value),
        ]
        for name in ("v0", "mean", "stddev"):
            value = getattr(sim.init, name)
            if value is not None:
                pairs.append((f"init.{name}", repr(value)))
        pairs += [
            ("sweep.rho", ", ".join(repr(r) for r in self.sweep.rho_grid)),
            ("sweep.tau_end", repr(self.sweep.tau_end)),
            ("sweep.strategies", ", ".join(format_strategy(s) for s in self.sweep.strategies)),
            ("compare.kind", self.compare_kind.value),
            ("compare.nu0", ", ".join(_fmt(n) for n in self.compare_nu0)),
            ("contours.n_bins", str(self.contours_n_bins)),
            ("contours.tau_grid", ", ".join(repr(t) for t in self.contours_tau_grid)),
        ]
        return pairs

    def provenance(self, overrides: Optional[Dict[str, str]] = None) -> List[Tuple[str, str]]:
        """
        Metadata embedded in every output file (no timestamp, so reruns are byte-identical)

        Args:
            overrides: effective values replacing resolved ones, for commands
                that derive a setting instead of reading it
        """
        overrides = overrides or {}
        unknown = set(overrides) - {key for key, _ in self.items()}
        if unknown:
            raise KitsimError(f"provenance overrides name unknown keys: {sorted(unknown)}")
        pairs = [(key, overrides.get(key, value)) for key, value in self.items()]
        return [("kitsim.version", self.version)] + pairs

    def dumps(self) -> str:
        lines = [f"# kitsim {self.version} resolved manifest"]
        lines += [f"{key} = {value}" for key, value in self.items()]
        return "\n".join(lines) + "\n"

    def save(self, config_path: Path) -> None:
        """Echo the resolved manifest in the input grammar"""
        config_path = Path(config_path)
        config_path.parent.mkdir(parents=True, exist_ok=True)
        with open(config_path, "w", encoding="utf-8", newline="\n") as f:
            f.write(self.dumps())
        LOG.info(f"💾 Config: wrote {config_path} (run started {self.timestamp})")
