"""Experiment configuration: a flat key-value text format with one section
per optimizer arm, chosen so configs diff cleanly in version control.

Layout::

    [experiment]
    problem = portfolio          ; portfolio | quad | maml-case1 | maml-case2
    T = 1000
    seeds = 1,2,3
    output_rule = last-iterate   ; uniform-iterate | last-iterate | best-evaluated
    checkpoints = geometric      ; geometric | all | comma-separated t values
    sample_budget = 100000       ; optional
    box_clip = -1.0,1.0          ; optional
    figures = true

    [problem]
    ; kind-specific keys (regime/m/n/data_seed, p/q/noise, layers/tasks/...)

    [optimizer:cadam]
    kind = cadam
    C_alpha = 0.01
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

PROBLEM_KINDS = ("portfolio", "quad", "maml-case1", "maml-case2")
OPTIMIZER_KINDS = ("cadam", "scgd", "ascpg", "adam", "sgd")


class ConfigError(ValueError):
    """The experiment configuration is malformed or inconsistent."""


@dataclass(frozen=True)
class ProblemSpec:
    kind: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in PROBLEM_KINDS:
            raise ConfigError(f"unknown problem kind {self.kind!r}; choose from {PROBLEM_KINDS}")


@dataclass(frozen=True)
class OptimizerArm:
    name: str
    kind: str
    options: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in OPTIMIZER_KINDS:
            raise ConfigError(f"unknown optimizer kind {self.kind!r}; choose from {OPTIMIZER_KINDS}")


@dataclass
class ExperimentConfig:
    problem: ProblemSpec
    optimizers: list[OptimizerArm]
    T: int
    seeds: list[int]
    out_dir: Optional[Path] = None
    output_rule: str = "last-iterate"
    checkpoints: str = "geometric"
    sample_budget: Optional[int] = None
    box_clip: Optional[tuple[float, float]] = None
    figures: bool = True

    def __post_init__(self):
        if not self.optimizers:
            raise ConfigError("need at least one optimizer arm")
        if not self.seeds:
            raise ConfigError("need at least one seed")
        if self.T < 1:
            raise ConfigError(f"T must be >= 1, got {self.T}")
        names = [arm.name for arm in self.optimizers]
        if len(names) != len(set(names)):
            raise ConfigError(f"duplicate optimizer arm names: {names}")
        if self.box_clip is not None:
            lo, hi = self.box_clip
            if not lo < hi:
                raise ConfigError(f"box_clip bounds must satisfy lo < hi, got {self.box_clip}")


def _coerce(text: str):
    text = text.strip()
    low = text.lower()
    if low in ("true", "false"):
        return low == "true"
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        pass
    return text


def _coerce_section(section) -> dict:
    return {key: _coerce(value) for key, value in section.items()}


def _int_list(text: str, what: str) -> list[int]:
    try:
        return [int(tok) for tok in str(text).split(",") if tok.strip()]
    except ValueError as exc:
        raise ConfigError(f"{what} must be a comma-separated integer list, got {text!r}") from exc


def parse_config(text: str) -> ExperimentConfig:
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"could not parse config: {exc}") from exc

    if "experiment" not in parser:
        raise ConfigError("config needs an [experiment] section")
    exp = parser["experiment"]

    required = ("problem", "T", "seeds")
    for key in required:
        if key not in exp:
            raise ConfigError(f"[experiment] is missing required key {key!r}")

    problem_params = _coerce_section(parser["problem"]) if "problem" in parser else {}
    spec = ProblemSpec(kind=exp["problem"].strip(), params=problem_params)

    arms = []
    for section in parser.sections():
        if not section.startswith("optimizer:"):
            continue
        name = section.split(":", 1)[1].strip()
        options = _coerce_section(parser[section])
        kind = str(options.pop("kind", name))
        arms.append(OptimizerArm(name=name, kind=kind, options=options))

    box_clip = None
    if "box_clip" in exp:
        parts = [p for p in exp["box_clip"].split(",") if p.strip()]
        if len(parts) != 2:
            raise ConfigError(f"box_clip needs exactly two bounds, got {exp['box_clip']!r}")
        try:
            box_clip = (float(parts[0]), float(parts[1]))
        except ValueError as exc:
            raise ConfigError(f"box_clip bounds must be numeric: {exp['box_clip']!r}") from exc

    try:
        T = int(exp["T"])
    except ValueError as exc:
        raise ConfigError(f"T must be an integer, got {exp['T']!r}") from exc

    budget = None
    if "sample_budget" in exp:
        try:
            budget = int(exp["sample_budget"])
        except ValueError as exc:
            raise ConfigError(f"sample_budget must be an integer, got {exp['sample_budget']!r}") from exc

    return ExperimentConfig(
        problem=spec,
        optimizers=arms,
        T=T,
        seeds=_int_list(exp["seeds"], "seeds"),
        output_rule=exp.get("output_rule", "last-iterate").strip(),
        checkpoints=exp.get("checkpoints", "geometric").strip(),
        sample_budget=budget,
        box_clip=box_clip,
        figures=exp.get("figures", "true").strip().lower() != "false",
    )


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    return parse_config(path.read_text())
