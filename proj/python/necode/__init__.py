"""Python interface to the necode library."""

import json as _json
from pathlib import Path as _Path

from ._necode import (  # noqa: F401
    EVAL_CSV_HEADER,
    CalibrationError,
    ConfigError,
    Error,
    InvalidArgument,
    IoError,
    Model,
    NumericalError,
    RunConfig,
    SubspaceError,
    __version__,
    dataset,
    insensitive_subspace,
    parse_eval_csv,
    psnr_db,
    recode,
    run_eval,
    run_report,
    svd,
    train_grid,
)
from . import _necode

EVAL_CSV_COLUMNS = tuple(EVAL_CSV_HEADER.split(","))


def read_eval_csv(path):
    """Rows of an eval.csv file; raises IoError on a schema mismatch."""
    return parse_eval_csv(_Path(path).read_text())


def verify_retention(model, tau, sigma, t, trials=10000, seed=0):
    return _json.loads(_necode.verify_retention(model, tau, sigma, t, trials, seed))


def run_verify(config):
    """Runs the bound checks for the configured grid; returns the parsed bounds.json."""
    return _json.loads(_necode.run_verify(config))
