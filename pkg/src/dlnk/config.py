"""Run configuration: an INI-style ``key = value`` file with one section per module.

Example::

    [run]
    seed = 7

    [network]
    architecture = fc        ; or conv
    n0 = 4
    widths = 8, 8            ; fc: N_1..N_L
    d = 2                    ; fc: output dimension
    precisions = 1, 1, 1     ; optional, lambda_0..lambda_L

    [data]
    train = train.csv        ; paths are relative to the config file
    test = test.csv
    beta = 10
    check_design = true      ; reject test inputs that make the design singular

Conv networks use ``channels = C_0, C_1, ..., C_L`` and ``mask = M`` in
place of ``widths`` and ``d``. Unknown sections or keys are rejected.
"""

from __future__ import annotations

import configparser
from pathlib import Path
from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from .conv import ConvNetworkSpec
from .errors import ConfigError
from .fc import FcNetworkSpec

MAX_U64 = (1 << 64) - 1


def _int_list(v):
    if isinstance(v, str):
        v = [p for p in (s.strip() for s in v.split(",")) if p]
    return v


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class RunSection(_Section):
    seed: int = Field(0, ge=0, le=MAX_U64)
    threads: int = Field(1, ge=1)
    out: Optional[str] = None


class NetworkSection(_Section):
    architecture: Literal["fc", "conv"] = "fc"
    n0: int = Field(..., ge=1)
    widths: Optional[list[int]] = None
    d: Optional[int] = Field(None, ge=1)
    channels: Optional[list[int]] = None
    mask: Optional[int] = None
    precisions: Optional[list[float]] = None

    _lists = field_validator("widths", "channels", "precisions", mode="before")(_int_list)

    def build(self):
        try:
            if self.architecture == "fc":
                if self.widths is None or self.d is None:
                    raise ConfigError("fc networks need 'widths' and 'd'")
                if self.channels is not None or self.mask is not None:
                    raise ConfigError("'channels' and 'mask' apply to conv networks only")
                return FcNetworkSpec(self.n0, tuple(self.widths), self.d,
                                     None if self.precisions is None else tuple(self.precisions))
            if self.channels is None or self.mask is None:
                raise ConfigError("conv networks need 'channels' and 'mask'")
            if self.widths is not None or self.d is not None:
                raise ConfigError("'widths' and 'd' apply to fc networks only")
            return ConvNetworkSpec(self.n0, tuple(self.channels), self.mask,
                                   None if self.precisions is None else tuple(self.precisions))
        except ConfigError:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from None


class DataSection(_Section):
    train: Optional[str] = None
    test: Optional[str] = None
    beta: Optional[float] = Field(None, gt=0)
    check_design: bool = True


class SamplerSection(_Section):
    method: Literal["is", "mh"] = "is"
    n_samples: int = Field(100_000, ge=1)
    n_steps: int = Field(5_000, ge=1)
    step_size: Optional[float] = Field(None, gt=0)
    n_chains: int = Field(16, ge=1)
    oracle_samples: int = Field(1_000_000, ge=1)


class EvidenceSection(_Section):
    methods: list[Literal["quadrature", "monte_carlo"]] = ["quadrature", "monte_carlo"]
    zero_temperature: list[Literal["log_convolution", "monte_carlo", "bessel_closed_form"]] = ["log_convolution"]
    n_samples: int = Field(1_000_000, ge=1)

    _lists = field_validator("methods", "zero_temperature", mode="before")(_int_list)


class LdpSection(_Section):
    objectives: list[Literal["lazy", "meanfield"]] = ["lazy"]
    widths: list[int] = [10, 100, 1000]
    n_draws: int = Field(20_000, ge=2)
    n_starts: int = Field(4, ge=1)
    alpha: Optional[float] = Field(None, ge=0)

    _lists = field_validator("objectives", "widths", mode="before")(_int_list)


class VerifySection(_Section):
    criteria: list[int] = list(range(1, 10))

    _lists = field_validator("criteria", mode="before")(_int_list)

    @field_validator("criteria")
    @classmethod
    def _known(cls, v):
        bad = [c for c in v if not 1 <= c <= 9]
        if bad:
            raise ValueError(f"unknown acceptance criteria {bad}; valid are 1..9")
        return v


class RunConfig(_Section):
    run: RunSection = RunSection()
    network: Optional[NetworkSection] = None
    data: DataSection = DataSection()
    sampler: SamplerSection = SamplerSection()
    evidence: EvidenceSection = EvidenceSection()
    ldp: LdpSection = LdpSection()
    verify: VerifySection = VerifySection()

    base_dir: str = "."

    def resolve(self, path: Optional[str]) -> Optional[Path]:
        if path is None:
            return None
        p = Path(path)
        return p if p.is_absolute() else Path(self.base_dir) / p

    def spec(self):
        if self.network is None:
            raise ConfigError("this command needs a [network] section")
        return self.network.build()

    def echo(self) -> dict:
        """Config as data, without the per-machine fields (threads, paths base)."""
        out = self.model_dump(mode="json", exclude={"base_dir"})
        out["run"].pop("threads", None)
        return out


def _format_validation(exc: ValidationError) -> str:
    parts = []
    for err in exc.errors():
        where = ".".join(str(p) for p in err["loc"])
        parts.append(f"{where}: {err['msg']}")
    return "; ".join(parts)


def load_config(path, overrides: dict | None = None) -> RunConfig:
    """Parse and validate a config file; ``overrides`` are dotted keys (flags win)."""
    path = Path(path)
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"), interpolation=None)
    parser.optionxform = str
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    try:
        parser.read_string(text, source=str(path))
    except (configparser.MissingSectionHeaderError, configparser.ParsingError) as exc:
        lineno = getattr(exc, "lineno", None) or exc.errors[0][0]
        raise ConfigError(f"{path}, line {lineno}: expected 'key = value' or '[section]'") from None
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc.message}") from None
    raw: dict = {name: dict(parser.items(name)) for name in parser.sections()}
    for key, value in (overrides or {}).items():
        section, _, field = key.partition(".")
        raw.setdefault(section, {})[field] = value
    raw["base_dir"] = str(path.parent)
    try:
        return RunConfig.model_validate(raw)
    except ValidationError as exc:
        raise ConfigError(_format_validation(exc)) from None
