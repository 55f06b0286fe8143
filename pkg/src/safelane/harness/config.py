"""Campaign configuration: dataclasses, presets, YAML loading and environment overrides.

YAML files mirror the dataclass layout::

    mode: feedback_rl
    densities: [0.2, 0.4]
    seeds: [0, 1, 2]
    episodes: 50
    epochs: 40
    road: {length: 500, closures: [{lane: 0, start: 200, end: 300}]}
    env: {reward_weight: 1.0}
    supervisor: {tau: 1.5}
    dqn: {lr: 0.001}

Validation errors carry ``file:line:column`` of the offending node.
"""
from __future__ import annotations

import dataclasses
import os
import types
import typing
from dataclasses import dataclass, fields, replace
from pathlib import Path

import yaml

from ..agent.dqn import DqnConfig
from ..dynamics import BicycleParams, InputBox
from ..reference_planner import PlannerParams
from ..safety_supervisor import SupervisorParams
from ..traffic_env.idm import GapAcceptanceParams, IdmParams
from ..traffic_env.road import Closure

MODES = ("feedback_rl", "vanilla_rl", "idm")
SCENARIOS = ("freeway", "road_closure")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RoadSettings:
    length: float = 1000.0
    lanes: int = 3
    lane_width: float = 3.5
    vehicle_length: float = 4.0
    density_unit: float = 5.0
    closures: tuple[Closure, ...] = ()


@dataclass(frozen=True)
class EnvSettings:
    population: str = "all_rl"
    rl_fraction: float = 0.5
    ticks_per_epoch: int = 50
    reward_weight: float = 1.0
    comfort_theta: float = 1.0
    lane_change_window: int = 10
    comm_range: float = 100.0
    noise_W: tuple[float, float, float, float] = (0.0, 0.0, 0.0, 0.0)
    init_speed_range: tuple[float, float] = (0.8, 1.0)
    init_max_closing: float = 10.0


@dataclass(frozen=True)
class CampaignConfig:
    scenario: str = "freeway"
    mode: str = "feedback_rl"
    densities: tuple[float, ...] = (0.3,)
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    episodes: int = 200
    epochs: int = 200
    eval_episodes: int = 1
    eval_window: int = 100
    eval_epochs: int | None = None
    checkpoint_every: int = 10
    workers: int = 1
    trace_qp: bool = False
    out: str | None = None
    road: RoadSettings = RoadSettings()
    env: EnvSettings = EnvSettings()
    supervisor: SupervisorParams = SupervisorParams()
    planner: PlannerParams = PlannerParams()
    idm: IdmParams = IdmParams()
    gap: GapAcceptanceParams = GapAcceptanceParams()
    bicycle: BicycleParams = BicycleParams()
    box: InputBox = InputBox()
    dqn: DqnConfig = DqnConfig()

    @property
    def eval_length(self) -> int:
        return self.epochs if self.eval_epochs is None else self.eval_epochs

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.scenario not in SCENARIOS:
            raise ConfigError(f"scenario must be one of {SCENARIOS}, got {self.scenario!r}")
        if self.episodes < 1 or self.epochs < 1:
            raise ConfigError("episodes and epochs must be at least 1")
        if self.eval_episodes < 0 or self.eval_window < 1:
            raise ConfigError("eval_episodes must be >= 0 and eval_window >= 1")
        if self.eval_epochs is not None and self.eval_epochs < 1:
            raise ConfigError("eval_epochs must be at least 1")
        if len(set(self.seeds)) != len(self.seeds) or not self.seeds:
            raise ConfigError("seeds must be a non-empty list of distinct integers")
        if not self.densities or any(d <= 0 for d in self.densities):
            raise ConfigError("densities must be a non-empty list of positive values")
        if self.scenario == "road_closure" and not self.road.closures:
            raise ConfigError("road_closure scenario needs at least one closure")


DEFAULT_CLOSURES = (Closure(lane=0, start=400.0, end=600.0),)

PRESETS: dict[str, CampaignConfig] = {
    # minutes on a laptop: ring of 1000 m = 200 density units, so rho=0.3 is 60 vehicles
    "desk": CampaignConfig(densities=(0.1, 0.3, 0.5, 0.7, 0.9), seeds=(0, 1, 2, 3, 4), episodes=200, epochs=200,
                           eval_window=100),
    # full grid: 100..900 vehicles on 1000 density units, 30 seeds
    "paper": CampaignConfig(densities=(0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9), seeds=tuple(range(30)),
                            episodes=2000, epochs=4000, eval_window=1000, road=RoadSettings(length=5000.0)),
    # sized for the acceptance suite
    "acceptance": CampaignConfig(densities=(0.2, 0.4, 0.6), seeds=(0, 1, 2, 3, 4), episodes=20, epochs=20,
                                 eval_epochs=100, eval_window=50, eval_episodes=1,
                                 road=RoadSettings(length=300.0)),
}


def preset(name: str) -> CampaignConfig:
    try:
        return PRESETS[name]
    except KeyError:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None


# --- YAML ----------------------------------------------------------------------------------------


def _where(node, source: str) -> str:
    m = node.start_mark
    return f"{source}:{m.line + 1}:{m.column + 1}"


def _convert(node, tp, source: str, path: str):
    """Build a value of annotated type ``tp`` from a YAML node, with positioned errors."""
    origin = typing.get_origin(tp)
    args = typing.get_args(tp)
    if origin is typing.Union or origin is types.UnionType:
        if isinstance(node, yaml.ScalarNode) and node.tag.endswith(":null"):
            return None
        return _convert(node, next(a for a in args if a is not type(None)), source, path)
    if dataclasses.is_dataclass(tp):
        if not isinstance(node, yaml.MappingNode):
            raise ConfigError(f"{_where(node, source)}: {path or 'config'} must be a mapping")
        return tp(**_mapping_kwargs(node, tp, source, path))
    if origin is tuple:
        if not isinstance(node, yaml.SequenceNode):
            raise ConfigError(f"{_where(node, source)}: {path} must be a list")
        items = node.value
        if len(args) == 2 and args[1] is Ellipsis:
            return tuple(_convert(v, args[0], source, f"{path}[{i}]") for i, v in enumerate(items))
        if len(items) != len(args):
            raise ConfigError(f"{_where(node, source)}: {path} needs exactly {len(args)} entries, got {len(items)}")
        return tuple(_convert(v, a, source, f"{path}[{i}]") for i, (v, a) in enumerate(zip(items, args)))
    if not isinstance(node, yaml.ScalarNode):
        raise ConfigError(f"{_where(node, source)}: {path} must be a scalar")
    value = yaml.safe_load(yaml.serialize(node))
    try:
        if tp is bool:
            if not isinstance(value, bool):
                raise TypeError
            return value
        if tp is int:
            if isinstance(value, bool) or not isinstance(value, int):
                raise TypeError
            return value
        if tp is float:
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise TypeError
            return float(value)
        if tp is str:
            if not isinstance(value, str):
                raise TypeError
            return value
    except TypeError:
        raise ConfigError(f"{_where(node, source)}: {path} expects {tp.__name__}, got {value!r}") from None
    return value


def _mapping_kwargs(node, cls, source: str, path: str) -> dict:
    hints = typing.get_type_hints(cls)
    known = {f.name for f in fields(cls) if f.init}
    out = {}
    for key_node, val_node in node.value:
        key = key_node.value
        sub = f"{path}.{key}" if path else key
        if key not in known:
            raise ConfigError(f"{_where(key_node, source)}: unknown key {sub!r}; expected one of {sorted(known)}")
        try:
            out[key] = _convert(val_node, hints[key], source, sub)
        except ConfigError:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{_where(val_node, source)}: invalid {sub}: {exc}") from None
    return out


def loads(text: str, base: CampaignConfig | None = None, source: str = "<string>") -> CampaignConfig:
    """Parse YAML text into a config, layering it over ``base`` (defaults when omitted).

    A top-level ``preset`` key selects the base.
    """
    try:
        root = yaml.compose(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{source}: {exc}") from None
    if root is None:
        return base or CampaignConfig()
    if not isinstance(root, yaml.MappingNode):
        raise ConfigError(f"{_where(root, source)}: top level must be a mapping")
    entries = list(root.value)
    for k, v in entries:
        if k.value == "preset":
            base = preset(yaml.safe_load(yaml.serialize(v)))
    entries = [(k, v) for k, v in entries if k.value != "preset"]
    base = base or CampaignConfig()
    kwargs = _mapping_kwargs(yaml.MappingNode(root.tag, entries, root.start_mark, root.end_mark),
                             CampaignConfig, source, "")
    # nested sections merge over the base instead of resetting siblings
    for key, val in list(kwargs.items()):
        cur = getattr(base, key)
        if dataclasses.is_dataclass(cur) and dataclasses.is_dataclass(val):
            node = next(v for k, v in entries if k.value == key)
            given = {k.value for k, _ in node.value}
            kwargs[key] = replace(cur, **{k: getattr(val, k) for k in given})
    try:
        return replace(base, **kwargs)
    except (TypeError, ValueError) as exc:
        # cross-field checks name the field first; point at it when present
        first = str(exc).split()[0] if str(exc) else ""
        node = next((k for k, _ in entries if k.value == first), None)
        where = _where(node, source) if node is not None else source
        raise ConfigError(f"{where}: {exc}") from None


def load(path) -> CampaignConfig:
    path = Path(path)
    return loads(path.read_text(), source=str(path))


def to_dict(cfg) -> dict:
    def conv(v):
        if dataclasses.is_dataclass(v):
            return {f.name: conv(getattr(v, f.name)) for f in fields(v)}
        if isinstance(v, (tuple, list)):
            return [conv(x) for x in v]
        return v
    return conv(cfg)


def dumps(cfg: CampaignConfig) -> str:
    return yaml.safe_dump(to_dict(cfg), sort_keys=False)


# --- flag and environment overrides -----------------------------------------------------------

ENV_PREFIX = "SAFELANE_"
OVERRIDE_KEYS = ("mode", "density", "seed", "episodes", "epochs", "out", "preset", "config")


def env_overrides(environ=None) -> dict:
    """``SAFELANE_<FLAG>`` variables mirroring the CLI flags."""
    environ = os.environ if environ is None else environ
    return {k: environ[ENV_PREFIX + k.upper()] for k in OVERRIDE_KEYS if ENV_PREFIX + k.upper() in environ}


def _floats(v) -> tuple[float, ...]:
    if isinstance(v, (list, tuple)):
        return tuple(float(x) for x in v)
    return tuple(float(x) for x in str(v).split(",") if x.strip())


def _ints(v) -> tuple[int, ...]:
    if isinstance(v, (list, tuple)):
        return tuple(int(x) for x in v)
    return tuple(int(x) for x in str(v).split(",") if x.strip())


def apply_overrides(cfg: CampaignConfig, overrides: dict) -> CampaignConfig:
    """Apply flag-style overrides (``None`` values are ignored)."""
    o = {k: v for k, v in overrides.items() if v is not None}
    changes = {}
    if "mode" in o:
        changes["mode"] = str(o["mode"])
    if "density" in o:
        changes["densities"] = _floats(o["density"])
    if "seed" in o:
        changes["seeds"] = _ints(o["seed"])
    if "episodes" in o:
        changes["episodes"] = int(o["episodes"])
    if "epochs" in o:
        changes["epochs"] = int(o["epochs"])
    if "out" in o:
        changes["out"] = str(o["out"])
    try:
        return replace(cfg, **changes)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def resolve(config_path=None, preset_name=None, overrides: dict | None = None, environ=None) -> CampaignConfig:
    """Precedence: preset < config file < environment variables < explicit flags."""
    env = env_overrides(environ)
    preset_name = preset_name or env.get("preset")
    config_path = config_path or env.get("config")
    cfg = preset(preset_name) if preset_name else CampaignConfig()
    if config_path:
        path = Path(config_path)
        cfg = loads(path.read_text(), base=cfg, source=str(path))
    cfg = apply_overrides(cfg, {k: v for k, v in env.items() if k not in ("preset", "config")})
    return apply_overrides(cfg, overrides or {})
