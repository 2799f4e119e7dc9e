"""Autoencoder-based spectral and spectral-spatial classification of hyperspectral cubes."""

from .errors import (
    ConfigError,
    ContractError,
    DataError,
    DivergenceError,
    HeaderError,
    HsiSaeError,
    MissingFileError,
    ShapeError,
    SizeMismatchError,
)
from .hsidata import GroundTruth, HsiCube, SplitIndex, SynthSpec, load_cube, save_cube, synth_scene
from .pipeline import ExperimentConfig, Report, run_experiment

__version__ = "0.1.0"
