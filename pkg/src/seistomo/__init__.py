import click
from pathlib import Path
import logging
import sys
from typing import Any, Callable, Dict, Optional

from pydantic import BaseModel, ValidationError

from .modules.data_types import (
    BenchCommand,
    InvertCommand,
    RenderCommand,
    RunConfig,
    SimulateCommand,
    config_error,
    load_run_config,
    parse_run_config,
    resolve_mode,
)
from .modules.errors import ConvergenceError, InvalidArgumentError, ParseError
from .modules.functionality.bench import bench
from .modules.functionality.invert import invert
from .modules.functionality.render import render
from .modules.functionality.simulate import simulate

logger = logging.getLogger(__name__)

EXIT_VALIDATION = 2
EXIT_CONVERGENCE = 3
EXIT_IO = 4


def _exit_code(error: Exception) -> Optional[int]:
    if isinstance(error, (InvalidArgumentError, ValidationError)):
        return EXIT_VALIDATION
    if isinstance(error, ConvergenceError):
        return EXIT_CONVERGENCE
    if isinstance(error, (ParseError, OSError)):
        return EXIT_IO
    return None


def _run(action: Callable[[], BaseModel]) -> None:
    """Run a command, print its result as JSON and map failures to exit codes"""
    try:
        result = action()
    except Exception as e:
        if isinstance(e, ValidationError):
            e = config_error(e)
        code = _exit_code(e)
        if code is None:
            raise
        click.echo(f"Error: {e}", err=True)
        sys.exit(code)
    click.echo(result.model_dump_json(indent=2))


def _config(path: Optional[Path], overrides: Dict[str, Any]) -> RunConfig:
    config = load_run_config(path) if path is not None else RunConfig()
    updates = {k: v for k, v in overrides.items() if v is not None}
    if not updates:
        return config
    return parse_run_config({**config.model_dump(), **updates})


config_option = click.option("--config", "-c", "config_path", type=Path, help="JSON run configuration")
threads_option = click.option("--threads", type=int, help="Worker threads (overrides the config)")
seed_option = click.option("--seed", type=int, help="Random seed (overrides the config)")
out_option = click.option("--out", "out_dir", type=Path, help="Output directory (overrides the config)")


@click.group()
@click.option("-v", "--verbose", count=True)
def main(verbose: int) -> None:
    """seistomo - joint waveform and travel-time inversion"""
    logging_level = logging.WARN
    if verbose == 1:
        logging_level = logging.INFO
    elif verbose >= 2:
        logging_level = logging.DEBUG

    logging.basicConfig(level=logging_level, stream=sys.stderr)


@main.command("simulate")
@config_option
@threads_option
@seed_option
@out_option
def simulate_command(config_path: Optional[Path], threads: Optional[int], seed: Optional[int],
                     out_dir: Optional[Path]) -> None:
    """Simulate noisy waveform and travel-time data on the truth model"""
    def action():
        config = _config(config_path, {"threads": threads, "seed": seed, "output_dir": out_dir})
        return simulate(SimulateCommand(config=config, out_dir=config.output_dir))
    _run(action)


@main.command("invert")
@config_option
@click.option("--mode", help="fwi_only, tomo_then_fwi or joint_two_stage (overrides the config)")
@threads_option
@seed_option
@out_option
def invert_command(config_path: Optional[Path], mode: Optional[str], threads: Optional[int],
                   seed: Optional[int], out_dir: Optional[Path]) -> None:
    """Invert recorded data with the selected pipeline"""
    def action():
        config = _config(config_path, {
            "threads": threads, "seed": seed, "output_dir": out_dir,
            "mode": resolve_mode(mode) if mode is not None else None,
        })
        return invert(InvertCommand(config=config, mode=config.mode, out_dir=config.output_dir,
                                    data_path=config.data_file))
    _run(action)


@main.command("bench")
@config_option
@seed_option
@out_option
def bench_command(config_path: Optional[Path], seed: Optional[int], out_dir: Optional[Path]) -> None:
    """Time the multigrid block solvers on the configured grids"""
    def action():
        config = _config(config_path, {"seed": seed, "output_dir": out_dir})
        return bench(BenchCommand(spec=config.bench, out_dir=config.output_dir, seed=config.seed))
    _run(action)


@main.command("render")
@click.option("--model", "model_path", type=Path, required=True, help="JSSM1 model file")
@click.option("--out", "output_path", type=Path, help="PGM path (defaults to the model path with .pgm)")
@click.option("--slice-index", type=int, help="Slice along the second axis of a 3D model")
def render_command(model_path: Path, output_path: Optional[Path], slice_index: Optional[int]) -> None:
    """Render a model file as a grayscale PGM image"""
    _run(lambda: render(RenderCommand(model_path=model_path, output_path=output_path, slice_index=slice_index)))


if __name__ == "__main__":
    main()
