"""Experiment configuration files and named noise presets.

The file format is ``[section]`` headers followed by ``key = value`` lines
(read with :mod:`configparser`). Tuples are comma separated; booleans in
tuples accept T/F/true/false. Only the ``[noise]`` section is mandatory.
"""

import configparser
import re
from dataclasses import asdict, dataclass, field, fields, replace

from .errors import EnsembleCastError, MissingSection, ParseError, UnknownKey
from .griddata import DatasetSplit, DayRange
from .noise import FractalPerlin, Gaussian, Perlin
from .stepper.train import TrainConfig

NOISE_PRESETS = {
    "gauss_0.1": Gaussian(mu=0.0, sigma=0.1),
    "gauss_0.05": Gaussian(mu=0.0, sigma=0.05),
    "gauss_0.01": Gaussian(mu=0.0, sigma=0.01),
    "P_res_2x3x3": Perlin(res=(2, 3, 3), tileable=(True, False, False)),
    "P_res_2x12x12": Perlin(res=(2, 12, 12), tileable=(True, False, False)),
    "PF_res_15x15": FractalPerlin(res=(15, 15), tileable=(False, True)),
    "PF_res_5x5": FractalPerlin(res=(5, 5), tileable=(False, True)),
    "PF_res_15x15_without_tileable": FractalPerlin(res=(15, 15), tileable=(False, False)),
    "PF_res_15x15_a0.05": FractalPerlin(res=(15, 15), tileable=(False, True), scale=0.05),
    "PF_res_15x15_a0.4": FractalPerlin(res=(15, 15), tileable=(False, True), scale=0.4),
}
# fractal table rows by letter
FRACTAL_ROWS = {
    "A": "PF_res_15x15",
    "B": "PF_res_5x5",
    "C": "PF_res_15x15_without_tileable",
    "D": "PF_res_15x15_a0.05",
    "E": "PF_res_15x15_a0.4",
}

# Small enough to train on a 32x32 grid in seconds.
DESK_TRAIN = {
    "linear": TrainConfig(lr=0.03, warmup_epochs=2, epochs=20, batch_size=4),
    "graph": TrainConfig(lr=3e-3, warmup_epochs=2, epochs=15, batch_size=4),
    "persistence": TrainConfig(lr=0.0, warmup_epochs=0, epochs=1),
}


@dataclass(frozen=True)
class DataConfig:
    path: str = None  # OFS1 file; synthetic data is generated when absent
    n_lat: int = 32
    n_lon: int = 32
    n_days: int = 200
    seed: int = 0
    epoch: int = 0


@dataclass(frozen=True)
class StepperConfig:
    kind: str = "linear"
    width: int = 16
    n_layers: int = 2
    level_res: tuple = (16, 4)
    init_std: float = 1e-3
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("persistence", "linear", "graph"):
            raise EnsembleCastError(f"unknown stepper kind {self.kind!r}")


@dataclass(frozen=True)
class EnsembleSection:
    members: int = 5
    horizon: int = 15
    base_seed: int = 0


@dataclass(frozen=True)
class ExperimentConfig:
    noise: object
    data: DataConfig = field(default_factory=DataConfig)
    split: DatasetSplit = field(
        default_factory=lambda: DatasetSplit(DayRange(0, 120), DayRange(120, 150), DayRange(150, 200))
    )
    stepper: StepperConfig = field(default_factory=StepperConfig)
    train: TrainConfig = None
    ensemble: EnsembleSection = field(default_factory=EnsembleSection)
    output: str = "out"

    def __post_init__(self):
        if self.train is None:
            object.__setattr__(self, "train", DESK_TRAIN[self.stepper.kind])

    def to_dict(self):
        return {
            "data": asdict(self.data),
            "split": {k: str(getattr(self.split, k)) for k in ("train", "val", "test")},
            "stepper": asdict(self.stepper),
            "train": self.train.to_dict(),
            "ensemble": asdict(self.ensemble),
            "noise": noise_to_dict(self.noise),
            "output": {"directory": self.output},
        }


def noise_to_dict(cfg):
    out = {"type": cfg.kind}
    for f in fields(cfg):
        value = getattr(cfg, f.name)
        if f.name == "lacunarity":
            value = float(value)
        if f.name != "shape" or value is not None:
            out[f.name] = value
    return out


# ---------------------------------------------------------------- parsing


def _fmt(value):
    if isinstance(value, bool):
        return "T" if value else "F"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (tuple, list)):
        return ", ".join(_fmt(v) for v in value)
    return str(value)


def noise_text(cfg):
    lines = ["[noise]"]
    lines += [f"{k} = {_fmt(v)}" for k, v in noise_to_dict(cfg).items()]
    return "\n".join(lines) + "\n"


def preset_text(name):
    """Canonical config file text for a named preset."""
    try:
        cfg = NOISE_PRESETS[name]
    except KeyError:
        raise EnsembleCastError(f"unknown noise preset {name!r}; known: {', '.join(NOISE_PRESETS)}") from None
    return noise_text(cfg)


def config_text(cfg):
    d = cfg.to_dict()
    lines = []
    for section in ("data", "split", "stepper", "train", "ensemble"):
        lines.append(f"[{section}]")
        lines += [f"{k} = {_fmt(v)}" for k, v in d[section].items() if v is not None]
        lines.append("")
    lines.append(noise_text(cfg.noise))
    lines += ["[output]", f"directory = {cfg.output}", ""]
    return "\n".join(lines)


_SECTION = re.compile(r"^\s*\[([^\]]+)\]")
_KEY = re.compile(r"^\s*([^=:#;\s][^=:]*?)\s*[=:]")


def _line_index(text):
    where, section = {}, None
    for no, line in enumerate(text.splitlines(), start=1):
        m = _SECTION.match(line)
        if m:
            section = m.group(1).strip()
            where.setdefault((section, None), no)
            continue
        m = _KEY.match(line)
        if m and section is not None:
            where.setdefault((section, m.group(1).strip().lower()), no)
    return where


def _bool(text):
    t = text.strip().lower()
    if t in ("t", "true", "yes", "1"):
        return True
    if t in ("f", "false", "no", "0"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _tuple(conv):
    def parse(text):
        return tuple(conv(p) for p in text.split(",") if p.strip())

    return parse


def _opt_str(text):
    return text.strip() or None


SCHEMA = {
    "data": {"path": _opt_str, "n_lat": int, "n_lon": int, "n_days": int, "seed": int, "epoch": int},
    "split": {"train": DayRange.parse, "val": DayRange.parse, "test": DayRange.parse},
    "stepper": {
        "kind": str.strip,
        "width": int,
        "n_layers": int,
        "level_res": _tuple(int),
        "init_std": float,
        "seed": int,
    },
    "train": {
        "lr": float,
        "warmup_epochs": int,
        "epochs": int,
        "batch_size": int,
        "beta1": float,
        "beta2": float,
        "weight_decay": float,
        "adam_eps": float,
        "rollout_steps": int,
        "schedule": str.strip,
        "optimizer": str.strip,
    },
    "ensemble": {"members": int, "horizon": int, "base_seed": int},
    "output": {"directory": str.strip},
}
NOISE_SCHEMA = {
    "gaussian": (Gaussian, {"mu": float, "sigma": float}),
    "perlin": (Perlin, {"res": _tuple(int), "tileable": _tuple(_bool), "shape": _tuple(int)}),
    "fractal": (
        FractalPerlin,
        {
            "res": _tuple(int),
            "tileable": _tuple(_bool),
            "octaves": int,
            "persistence": float,
            "lacunarity": float,
            "scale": float,
            "shape": _tuple(int),
        },
    ),
}


def _section_values(parser, section, schema, where):
    out = {}
    for key, raw in parser.items(section):
        line = where.get((section, key))
        if key not in schema:
            raise UnknownKey(f"line {line}: unknown key {key!r} in [{section}]")
        try:
            out[key] = schema[key](raw)
        except ValueError as exc:
            raise ParseError(f"[{section}] {key}: {exc}", line) from None
    return out


def _parse_noise(parser, where):
    items = dict(parser.items("noise"))
    if "preset" in items:
        if len(items) > 1:
            key = next(k for k in items if k != "preset")
            raise UnknownKey(f"line {where.get(('noise', key))}: [noise] preset takes no other keys, got {key!r}")
        name = items["preset"].strip()
        if name in FRACTAL_ROWS:
            name = FRACTAL_ROWS[name]
        if name not in NOISE_PRESETS:
            raise ParseError(f"unknown noise preset {name!r}", where.get(("noise", "preset")))
        return NOISE_PRESETS[name]
    kind = items.pop("type", None)
    if kind is None:
        raise MissingSection("[noise] needs either 'preset' or 'type'")
    kind = kind.strip().lower()
    if kind not in NOISE_SCHEMA:
        raise ParseError(f"unknown noise type {kind!r}", where.get(("noise", "type")))
    cls, schema = NOISE_SCHEMA[kind]
    parser.remove_option("noise", "type")
    return cls(**_section_values(parser, "noise", schema, where))


def parse_config_text(text, source="<config>"):
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"), default_section="\0")
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        raise ParseError(f"{source}: {exc.message.splitlines()[0]}", getattr(exc, "lineno", None)) from None
    where = _line_index(text)
    for section in parser.sections():
        if section not in SCHEMA and section != "noise":
            raise UnknownKey(f"line {where.get((section, None), '?')}: unknown section [{section}]")
    if not parser.has_section("noise"):
        raise MissingSection(f"{source}: a [noise] section is required")

    noise = _parse_noise(parser, where)
    kw = {"noise": noise}
    if parser.has_section("data"):
        kw["data"] = DataConfig(**_section_values(parser, "data", SCHEMA["data"], where))
    if parser.has_section("split"):
        base = ExperimentConfig(noise).split
        parts = _section_values(parser, "split", SCHEMA["split"], where)
        kw["split"] = replace(base, **parts)
    if parser.has_section("stepper"):
        kw["stepper"] = StepperConfig(**_section_values(parser, "stepper", SCHEMA["stepper"], where))
    if parser.has_section("train"):
        kind = kw.get("stepper", StepperConfig()).kind
        kw["train"] = replace(DESK_TRAIN[kind], **_section_values(parser, "train", SCHEMA["train"], where))
    if parser.has_section("ensemble"):
        kw["ensemble"] = EnsembleSection(**_section_values(parser, "ensemble", SCHEMA["ensemble"], where))
    if parser.has_section("output"):
        kw["output"] = _section_values(parser, "output", SCHEMA["output"], where).get("directory", "out")
    return ExperimentConfig(**kw)


def parse_config(path):
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    return parse_config_text(text, source=str(path))
