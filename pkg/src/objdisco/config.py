"""Flat key-value pipeline configuration (`section.key = value` lines)."""

from __future__ import annotations

from dataclasses import dataclass, field, fields


@dataclass
class PathsSection:
    manifest: str = ""
    work_dir: str = "work"


@dataclass
class FsSection:
    epsilon: float = 1e-6
    tau: float = 0.4
    rho: float = 5.0
    sigma: float = 2.5


@dataclass
class OsSection:
    tau: float = 0.0
    rho: float = 2.0
    sigma: float = 2.0
    theta_img: float = 2.0
    theta_nbr: float = 3.0
    patch: int = 3
    k: int = 10


@dataclass
class GraphSection:
    k: int = 50
    beta: float = 3.0
    alpha: float = 0.99
    tol: float = 1e-6
    max_iter: int = 1000


@dataclass
class WhiteningSection:
    dim: int = 0  # 0 keeps the channel count
    shrinkage: float = 0.01


@dataclass
class EgmSection:
    kappa: float = 0.5
    extent: float = 2.0
    max_iterations: int = 50
    move_tolerance: float = 0.1
    mass_weighted: bool = True


@dataclass
class EvalSection:
    diffusion: bool = True


@dataclass
class PipelineConfig:
    paths: PathsSection = field(default_factory=PathsSection)
    fs: FsSection = field(default_factory=FsSection)
    os: OsSection = field(default_factory=OsSection)
    graph: GraphSection = field(default_factory=GraphSection)
    whitening: WhiteningSection = field(default_factory=WhiteningSection)
    egm: EgmSection = field(default_factory=EgmSection)
    eval: EvalSection = field(default_factory=EvalSection)


def _format_value(value: object) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    return repr(value) if isinstance(value, float) else str(value)


def _parse_value(text: str, target_type: type) -> object:
    if target_type is bool:
        if text not in ("true", "false"):
            raise ValueError(f"expected true/false, got {text!r}")
        return text == "true"
    if target_type is int:
        return int(text)
    if target_type is float:
        return float(text)
    return text


def serialize_config(config: PipelineConfig) -> str:
    lines = []
    for section_field in fields(config):
        section = getattr(config, section_field.name)
        for f in fields(section):
            lines.append(f"{section_field.name}.{f.name} = {_format_value(getattr(section, f.name))}\n")
    return "".join(lines)


def parse_config(text: str) -> PipelineConfig:
    config = PipelineConfig()
    section_names = {f.name for f in fields(config)}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'section.key = value', got {raw!r}")
        key, _, value = (part.strip() for part in line.partition("="))
        if "." not in key:
            raise ValueError(f"line {lineno}: key {key!r} is missing its section")
        section_name, field_name = key.split(".", 1)
        if section_name not in section_names:
            raise ValueError(f"line {lineno}: unknown section {section_name!r}")
        section = getattr(config, section_name)
        by_name = {f.name: f for f in fields(section)}
        if field_name not in by_name:
            raise ValueError(f"line {lineno}: unknown key {key!r}")
        current = getattr(section, field_name)
        try:
            setattr(section, field_name, _parse_value(value, type(current)))
        except ValueError as exc:
            raise ValueError(f"line {lineno}: bad value for {key!r}: {exc}") from None
    return config


def default_config_text() -> str:
    return serialize_config(PipelineConfig())
