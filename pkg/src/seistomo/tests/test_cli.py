import json
import pytest
import tempfile
from pathlib import Path

import numpy as np
from click.testing import CliRunner

from .. import EXIT_CONVERGENCE, EXIT_IO, EXIT_VALIDATION, _exit_code, main
from ..modules.errors import BreakdownError, ConfigError, ConvergenceError, ParseError
from ..modules.file_formats import write_model


@pytest.fixture
def temp_dir():
    with tempfile.TemporaryDirectory() as d:
        yield Path(d)


def test_render_prints_json(temp_dir):
    model = write_model(temp_dir / "m.jssm", (6, 3), (1.0, 1.0), np.arange(18.0))
    result = CliRunner().invoke(main, ["render", "--model", str(model)])
    assert result.exit_code == 0
    payload = json.loads(result.stdout)
    assert (payload["width"], payload["height"]) == (6, 3)
    assert (temp_dir / "m.pgm").exists()


def test_corrupt_model_exits_with_io_code(temp_dir):
    bad = temp_dir / "bad.jssm"
    bad.write_bytes(b"JSSM1 2 6 3 1.0\n")
    result = CliRunner().invoke(main, ["render", "--model", str(bad)])
    assert result.exit_code == EXIT_IO


def test_unknown_config_key_exits_with_validation_code(temp_dir):
    config = temp_dir / "config.json"
    config.write_text(json.dumps({"grdi": {"n": [16, 8], "h": [10.0, 10.0]}}))
    result = CliRunner().invoke(main, ["simulate", "--config", str(config), "--out", str(temp_dir / "out")])
    assert result.exit_code == EXIT_VALIDATION


def test_malformed_config_exits_with_io_code(temp_dir):
    config = temp_dir / "config.json"
    config.write_text("{")
    result = CliRunner().invoke(main, ["invert", "--config", str(config)])
    assert result.exit_code == EXIT_IO


def test_unknown_mode_exits_with_validation_code(temp_dir):
    result = CliRunner().invoke(main, ["invert", "--mode", "joint", "--out", str(temp_dir)])
    assert result.exit_code == EXIT_VALIDATION


@pytest.mark.parametrize("error, code", [
    (ConfigError("bad"), EXIT_VALIDATION),
    (ConvergenceError("slow"), EXIT_CONVERGENCE),
    (BreakdownError("singular", 3), EXIT_CONVERGENCE),
    (ParseError("truncated", 7), EXIT_IO),
    (FileNotFoundError("gone"), EXIT_IO),
    (KeyError("x"), None),
])
def test_exit_codes(error, code):
    assert _exit_code(error) == code
