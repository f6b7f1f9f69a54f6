"""Experiment configuration: a sectioned TOML file with strict keys and typed values."""
from __future__ import annotations

import copy
import re
from pathlib import Path

import tomli

from ..errors import ConfigError

SCHEMA_VERSION = 1

DEFAULTS: dict[str, dict] = {
    "dataset": {"image_size": 64, "counts": [600, 605, 607], "seed": 7, "folds": 5},
    "classifier": {"epochs": 30, "lr": 0.003, "dropout": 0.1, "batch_size": 32, "seed": 0},
    "cam": {
        "standard": 0.8,
        "coarse": 0.75,
        "fine": 0.85,
        "use_crf": True,
        "crf_appearance_weight": 5.0,
        "crf_appearance_xy": 20.0,
        "crf_appearance_rgb": 0.1,
        "crf_smoothness_weight": 3.0,
        "crf_smoothness_xy": 3.0,
        "crf_iterations": 5,
    },
    "segmentation": {
        "step1_epochs": 50,
        "rounds": 10,
        "lr": 0.003,
        "batch_size": 16,
        "lambda_dis": 1.0,
        "encoder_channels": [4, 8, 8],
        "decoder_channels": [8, 8, 4],
    },
    "al": {
        "strategies": ["deal", "random"],
        "cycles": 3,
        "budget_fraction": 0.10,
        "pseudo_every_cycle": False,
        "knee_sensitivity": 1.0,
        "entropy_full_binary": False,
        "folds": [],  # empty = every fold
        "seeds": [0, 1, 2],
        "include_full": True,
        "ablation_gt_fraction": 0.20,
    },
}


def _type_ok(default, value) -> bool:
    if isinstance(default, bool):
        return isinstance(value, bool)
    if isinstance(default, int):
        return isinstance(value, int) and not isinstance(value, bool)
    if isinstance(default, float):
        return isinstance(value, (int, float)) and not isinstance(value, bool)
    if isinstance(default, str):
        return isinstance(value, str)
    if isinstance(default, list):
        return isinstance(value, list)
    return False


def _line_of(text: str, section: str, key: str | None) -> int | None:
    current = None
    for n, line in enumerate(text.splitlines(), 1):
        stripped = line.strip()
        header = re.match(r"^\[\s*([^\]]+?)\s*\]", stripped)
        if header:
            current = header.group(1)
            if key is None and current == section:
                return n
            continue
        if key is not None and current == section and re.match(rf"^\"?{re.escape(key)}\"?\s*=", stripped):
            return n
    return None


def _where(source: str, text: str | None, section: str, key: str | None = None) -> str:
    line = _line_of(text, section, key) if text else None
    return f"{source}:{line}" if line else source


class ExperimentConfig:
    """Validated configuration; ``values`` mirrors ``DEFAULTS`` with overrides applied."""

    def __init__(self, values: dict | None = None, source: str = "<defaults>", text: str | None = None):
        merged = copy.deepcopy(DEFAULTS)
        for section, entries in (values or {}).items():
            if section not in DEFAULTS:
                raise ConfigError(f"{_where(source, text, section)}: unknown section [{section}]")
            if not isinstance(entries, dict):
                raise ConfigError(f"{_where(source, text, section)}: [{section}] must be a table")
            for key, value in entries.items():
                where = _where(source, text, section, key)
                if key not in DEFAULTS[section]:
                    raise ConfigError(f"{where}: unknown key '{key}' in [{section}]")
                if not _type_ok(DEFAULTS[section][key], value):
                    raise ConfigError(f"{where}: [{section}] {key} has the wrong type ({type(value).__name__})")
                merged[section][key] = float(value) if isinstance(DEFAULTS[section][key], float) else value
        self.values = merged
        self.source = source
        self._validate()

    def __getitem__(self, section: str) -> dict:
        return self.values[section]

    def __eq__(self, other) -> bool:
        return isinstance(other, ExperimentConfig) and self.values == other.values

    # ------------------------------------------------------------ builders

    def _validate(self) -> None:
        d = self["dataset"]
        if len(d["counts"]) != 3:
            raise ConfigError("[dataset] counts must list three class counts")
        from ..alloop import Strategy

        if not self["al"]["strategies"]:
            raise ConfigError("[al] strategies must list at least one strategy")
        for name in self["al"]["strategies"]:
            try:
                Strategy(name)
            except ValueError:
                raise ConfigError(f"[al] unknown strategy '{name}'; choose from {[s.value for s in Strategy]}") from None
        self.thresholds()
        self.crf()
        self.al_config()
        if not 0.0 < self["al"]["ablation_gt_fraction"] <= 1.0:
            raise ConfigError("[al] ablation_gt_fraction must be in (0, 1]")
        if not self["al"]["seeds"]:
            raise ConfigError("[al] seeds must list at least one seed")

    def thresholds(self):
        from ..cam import CamThresholds

        c = self["cam"]
        return CamThresholds(standard=c["standard"], coarse=c["coarse"], fine=c["fine"])

    def crf(self):
        from ..cam import CrfParams

        c = self["cam"]
        return CrfParams(
            appearance_weight=c["crf_appearance_weight"],
            appearance_xy=c["crf_appearance_xy"],
            appearance_rgb=c["crf_appearance_rgb"],
            smoothness_weight=c["crf_smoothness_weight"],
            smoothness_xy=c["crf_smoothness_xy"],
            iterations=c["crf_iterations"],
        )

    def schedule(self):
        from ..segmodel import Schedule

        s = self["segmentation"]
        return Schedule(step1_epochs=s["step1_epochs"], rounds=s["rounds"], lr=s["lr"], batch_size=s["batch_size"], lambda_dis=s["lambda_dis"])

    def al_config(self, strategy: str | None = None):
        from ..alloop import ALConfig, Strategy

        a, s = self["al"], self["segmentation"]
        if len(s["encoder_channels"]) != 3 or len(s["decoder_channels"]) != 3:
            raise ConfigError("[segmentation] channel lists must have three entries")
        return ALConfig(
            strategy=Strategy(strategy or a["strategies"][0]),
            cycles=a["cycles"],
            budget_fraction=a["budget_fraction"],
            pseudo_every_cycle=a["pseudo_every_cycle"],
            knee_sensitivity=a["knee_sensitivity"],
            entropy_full_binary=a["entropy_full_binary"],
            schedule=self.schedule(),
            encoder_channels=tuple(s["encoder_channels"]),
            decoder_channels=tuple(s["decoder_channels"]),
        )

    # ------------------------------------------------------------ io

    def with_overrides(self, section: str, **entries) -> "ExperimentConfig":
        values = copy.deepcopy(self.values)
        values[section].update(entries)
        return ExperimentConfig(values, self.source)

    def to_toml(self) -> str:
        lines = [f"# schema_version = {SCHEMA_VERSION}"]
        for section, entries in self.values.items():
            lines.append(f"\n[{section}]")
            for key, value in entries.items():
                lines.append(f"{key} = {_toml_value(value)}")
        return "\n".join(lines) + "\n"

    def write(self, path: str | Path) -> None:
        Path(path).write_text(self.to_toml())


def _toml_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, int):
        return str(value)
    if isinstance(value, str):
        return '"' + value.replace("\\", "\\\\").replace('"', '\\"') + '"'
    if isinstance(value, list):
        return "[" + ", ".join(_toml_value(v) for v in value) + "]"
    raise TypeError(f"cannot serialize {type(value).__name__}")


def parse_config(text: str, source: str = "<string>") -> ExperimentConfig:
    try:
        values = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"{source}: {exc}") from None
    return ExperimentConfig(values, source, text)


def load_config(path: str | Path | None) -> ExperimentConfig:
    if path is None:
        return ExperimentConfig()
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file {p} does not exist")
    return parse_config(p.read_text(), str(p))
