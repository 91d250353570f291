"""Flat INI configuration covering phantom, acquisition and solver settings.

Every key lives in exactly one of the sections ``[phantom]``,
``[acquisition]`` and ``[recon]``, and key names are unique across sections
so that a bare ``--key value`` override is unambiguous. Unknown keys are
errors.
"""
from __future__ import annotations

import configparser
import dataclasses
import types
import typing
from dataclasses import dataclass, field, fields

from .phantom import PhantomSpec
from .solvers import ReconConfig

__all__ = ["AcquisitionConfig", "AppConfig", "ConfigError", "load_config",
           "parse_value", "SECTIONS"]


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class AcquisitionConfig:
    """Trajectory, coil and noise settings of a simulated acquisition.

    ``snr_db`` is the measurement SNR, ``20 log10(||b|| / ||noise||)`` over
    all acquired samples; ``coil_compression`` is the PCA approximation-error
    bound (0 disables compression).
    """

    n_interleaves: int = 1000
    spirals_per_frame: int = 5
    samples_per_readout: int = 512
    density_inner: float = 0.2
    density_outer: float = 0.02
    inner_extent: float = 0.2
    navigator_every: int | None = None
    n_coils: int = 8
    snr_db: float = 30.0
    noise_seed: int = 1
    coil_compression: float = 0.05

    def validate(self) -> None:
        if self.n_interleaves < 1 or self.spirals_per_frame < 1:
            raise ConfigError("n_interleaves and spirals_per_frame must be positive")
        if self.spirals_per_frame > self.n_interleaves:
            raise ConfigError("spirals_per_frame exceeds n_interleaves")
        if self.n_coils < 1:
            raise ConfigError("n_coils must be positive")
        if self.navigator_every is not None and self.navigator_every < 1:
            raise ConfigError("navigator_every must be positive or none")
        if not 0 <= self.coil_compression < 1:
            raise ConfigError("coil_compression must lie in [0, 1)")


SECTIONS = {"phantom": PhantomSpec, "acquisition": AcquisitionConfig,
            "recon": ReconConfig}


@dataclass(frozen=True)
class AppConfig:
    phantom: PhantomSpec = field(default_factory=PhantomSpec)
    acquisition: AcquisitionConfig = field(default_factory=AcquisitionConfig)
    recon: ReconConfig = field(default_factory=ReconConfig)

    def to_dict(self) -> dict:
        return {name: dataclasses.asdict(getattr(self, name)) for name in SECTIONS}

    def to_ini(self) -> str:
        lines = []
        for name in SECTIONS:
            lines.append(f"[{name}]")
            for key, value in dataclasses.asdict(getattr(self, name)).items():
                lines.append(f"{key} = {'none' if value is None else value}")
            lines.append("")
        return "\n".join(lines)

    def validate(self) -> None:
        try:
            self.phantom.validate()
            self.acquisition.validate()
            self.recon.validate()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None


def _key_index():
    index = {}
    for section, cls in SECTIONS.items():
        hints = typing.get_type_hints(cls)
        for f in fields(cls):
            if f.name in index:
                raise RuntimeError(f"duplicate config key {f.name}")
            index[f.name] = (section, hints[f.name])
    return index


KEYS = _key_index()


def parse_value(key: str, text: str):
    """Convert the string ``text`` to the declared type of ``key``."""
    if key not in KEYS:
        raise ConfigError(f"unknown config key {key!r}")
    _, typ = KEYS[key]
    text = text.strip()
    optional = typing.get_origin(typ) in (typing.Union, types.UnionType)
    if optional:
        if text.lower() in ("none", ""):
            return None
        typ = next(t for t in typing.get_args(typ) if t is not type(None))
    try:
        if typ is bool:
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if typ is int:
            return int(text)
        if typ is float:
            return float(text)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {text!r} as {typ.__name__}") from None
    return text


def _line_of(path, key):
    try:
        with open(path) as fh:
            for no, line in enumerate(fh, 1):
                if line.split("=")[0].strip() == key:
                    return no
    except OSError:
        pass
    return None


def load_config(path=None, overrides: dict | None = None) -> AppConfig:
    """Read ``path`` (optional) and apply ``overrides`` (key -> string)."""
    values = {name: {} for name in SECTIONS}
    if path is not None:
        parser = configparser.ConfigParser(interpolation=None)
        parser.optionxform = str
        try:
            with open(path) as fh:
                parser.read_file(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        except configparser.Error as exc:
            raise ConfigError(f"{path}: {exc}") from None
        for section in parser.sections():
            if section not in SECTIONS:
                raise ConfigError(f"{path}: unknown section [{section}]")
            for key, text in parser.items(section):
                where = f"{path}:{_line_of(path, key)}"
                if key not in KEYS:
                    raise ConfigError(f"{where}: unknown key {key!r} in [{section}]")
                if KEYS[key][0] != section:
                    raise ConfigError(
                        f"{where}: key {key!r} belongs in [{KEYS[key][0]}], not [{section}]")
                try:
                    values[section][key] = parse_value(key, text)
                except ConfigError as exc:
                    raise ConfigError(f"{where}: {exc}") from None
    for key, text in (overrides or {}).items():
        key = key.replace("-", "_")
        if key not in KEYS:
            raise ConfigError(f"unknown override --{key}")
        values[KEYS[key][0]][key] = parse_value(key, text) if isinstance(text, str) else text
    try:
        cfg = AppConfig(**{name: cls(**values[name]) for name, cls in SECTIONS.items()})
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
    cfg.validate()
    return cfg
