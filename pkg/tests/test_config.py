import hashlib
from pathlib import Path

import pytest

from ensemblecast.config import (
    FRACTAL_ROWS,
    NOISE_PRESETS,
    ExperimentConfig,
    StepperConfig,
    config_text,
    parse_config,
    parse_config_text,
    preset_text,
)
from ensemblecast.errors import EnsembleCastError, MissingSection, NegativeSigma, ParseError, UnknownKey
from ensemblecast.noise import FractalPerlin, Gaussian, Perlin

GOLDEN = Path(__file__).parent / "golden"


@pytest.mark.parametrize("name", sorted(NOISE_PRESETS))
def test_preset_matches_golden_file(name):
    golden = (GOLDEN / f"{name}.cfg").read_bytes()
    assert hashlib.sha256(preset_text(name).encode()).hexdigest() == hashlib.sha256(golden).hexdigest()
    assert parse_config(GOLDEN / f"{name}.cfg").noise == NOISE_PRESETS[name]


def test_fractal_row_a():
    cfg = parse_config_text("[noise]\npreset = A\n").noise
    assert isinstance(cfg, FractalPerlin)
    assert cfg.res == (15, 15) and cfg.tileable == (False, True)
    assert (cfg.persistence, cfg.octaves, cfg.scale, cfg.lacunarity) == (0.5, 3, 0.2, 2)


@pytest.mark.parametrize(
    "row, res, tileable, scale",
    [
        ("B", (5, 5), (False, True), 0.2),
        ("C", (15, 15), (False, False), 0.2),
        ("D", (15, 15), (False, True), 0.05),
        ("E", (15, 15), (False, True), 0.4),
    ],
)
def test_fractal_rows(row, res, tileable, scale):
    cfg = NOISE_PRESETS[FRACTAL_ROWS[row]]
    assert (cfg.res, cfg.tileable, cfg.scale, cfg.octaves) == (res, tileable, scale, 3)


def test_gaussian_and_perlin_presets():
    assert NOISE_PRESETS["gauss_0.05"] == Gaussian(0.0, 0.05)
    p = NOISE_PRESETS["P_res_2x12x12"]
    assert isinstance(p, Perlin) and p.res == (2, 12, 12) and p.tileable == (True, False, False)


@pytest.mark.parametrize("text", ["", "# nothing\n", "[data]\nseed = 1\n"])
def test_missing_noise_section(text):
    with pytest.raises(MissingSection):
        parse_config_text(text)


def test_negative_sigma():
    with pytest.raises(NegativeSigma):
        parse_config_text("[noise]\ntype = gaussian\nsigma = -0.1\n")


@pytest.mark.parametrize(
    "text",
    [
        "[noise]\ntype = gaussian\nsigmaa = 0.1\n",
        "[noise]\npreset = A\nsigma = 0.1\n",
        "[noise]\npreset = A\n[extra]\nx = 1\n",
        "[noise]\npreset = A\n[data]\nrows = 3\n",
    ],
)
def test_unknown_key(text):
    with pytest.raises(UnknownKey):
        parse_config_text(text)


def test_parse_error_reports_line():
    with pytest.raises(ParseError) as info:
        parse_config_text("[noise]\ntype = gaussian\n\nsigma = lots\n")
    assert info.value.line == 4
    with pytest.raises(ParseError):
        parse_config_text("[noise]\npreset = nope\n")
    with pytest.raises(ParseError):
        parse_config_text("no header here\n")


def test_full_round_trip():
    cfg = ExperimentConfig(NOISE_PRESETS["PF_res_5x5"], stepper=StepperConfig(kind="graph", width=8))
    back = parse_config_text(config_text(cfg))
    assert back == cfg
    assert back.train.lr == 3e-3


def test_bad_stepper_kind():
    with pytest.raises(EnsembleCastError):
        parse_config_text("[noise]\npreset = A\n[stepper]\nkind = lstm\n")


def test_train_overrides_keep_defaults():
    cfg = parse_config_text("[noise]\npreset = gauss_0.1\n[train]\nepochs = 3\n")
    assert cfg.train.epochs == 3 and cfg.train.lr == 0.03
