"""Typer CLI entrypoint for dsj-toolkit.

Every subcommand loads the configuration, runs one pipeline and writes its
files plus ``manifest.json``. Diagnostics go to stderr; stdout carries only
the manifest path. Exit codes: 0 success, 2 configuration, 3 infeasible
design, 4 numerical failure, 5 I/O, 1 anything else.
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Tuple

import typer

from dsj_toolkit import storage
from dsj_toolkit.exceptions import ConfigError, DSJError
from dsj_toolkit.logging_utils import configure_logging
from dsj_toolkit.models import validate_config
from dsj_toolkit.services import DesignService
from dsj_toolkit.settings import Settings, get_settings

logger = logging.getLogger(__name__)

LOG_LEVELS = ('DEBUG', 'INFO', 'WARNING', 'ERROR')
SUBCOMMANDS = ('synth', 'ellipse', 'grasp', 'step', 'validate')

app = typer.Typer(
    add_completion=False,
    help='Design and simulation of differential spiral joints.',
    no_args_is_help=True,
)

CONFIG_OPTION = typer.Option(
    None,
    '--config',
    '-c',
    help='Design configuration (JSON). Defaults to the shipped design.',
    dir_okay=False,
)
OUT_OPTION = typer.Option(
    None,
    '--out',
    '-o',
    help='Output directory. Defaults to DSJ_OUTPUT_DIR or ./results.',
)
SET_OPTION = typer.Option(
    None,
    '--set',
    help='Override a configuration key, e.g. schedule.alpha_max=0.7. '
    'Repeatable.',
)
LOG_OPTION = typer.Option(
    None,
    '--log-level',
    help='One of DEBUG, INFO, WARNING, ERROR.',
)


@dataclass(frozen=True)
class CliInvocation:
    """One pipeline run: subcommand, inputs and output directory."""

    subcommand: str
    config_path: Path
    out_dir: Path
    overrides: Tuple[str, ...] = ()

    def __post_init__(self):
        if self.subcommand not in SUBCOMMANDS:
            raise ConfigError(
                'Unknown subcommand',
                [f'{self.subcommand!r} is not one of {SUBCOMMANDS}'],
            )

    @property
    def command(self) -> str:
        """Subcommand plus overrides, as recorded in the manifest."""
        return ' '.join([
            self.subcommand,
            *(f'--set {item}' for item in self.overrides),
        ])


def run(invocation: CliInvocation, settings: Optional[Settings] = None) -> int:
    """Run one pipeline and write its artifacts plus the manifest.

    Nothing is written when the pipeline fails.

    Returns:
        Process exit status
    """
    settings = settings or get_settings()
    name = invocation.subcommand
    logger.info(
        '%s %s: %s',
        settings.APP_NAME,
        settings.APP_VERSION,
        invocation.command,
    )
    try:
        document = storage.load_config(
            invocation.config_path, list(invocation.overrides)
        )
        bundle = validate_config(document)
        artifacts = getattr(DesignService(bundle, settings), name)()
        artifacts['model.json'] = bundle.to_dict()
        manifest = storage.write_results(
            artifacts,
            invocation.out_dir,
            storage.config_digest(document),
            invocation.command,
        )
    except DSJError as exc:
        logger.error('%s failed: %s', name, exc)
        return exc.exit_code
    except Exception:
        logger.exception('%s failed unexpectedly', name)
        return 1

    typer.echo(str(manifest.path))
    return 0


def _parse_log_level(value: Optional[str]) -> str:
    level = (value or get_settings().LOG_LEVEL).upper()
    if level not in LOG_LEVELS:
        raise typer.BadParameter(
            f'log level must be one of {", ".join(LOG_LEVELS)}.'
        )
    return level


def _run(
    pipeline: str,
    config: Optional[Path],
    out: Optional[Path],
    overrides: Optional[List[str]],
    log_level: Optional[str],
) -> None:
    settings = get_settings()
    configure_logging(_parse_log_level(log_level))
    invocation = CliInvocation(
        subcommand=pipeline,
        config_path=(
            config or settings.CONFIG_PATH or storage.DEFAULT_CONFIG_PATH
        ),
        out_dir=out or settings.OUTPUT_DIR,
        overrides=tuple(overrides or ()),
    )
    status = run(invocation, settings)
    if status:
        raise typer.Exit(status)


@app.command('synth')
def synth(
    config: Optional[Path] = CONFIG_OPTION,
    out: Optional[Path] = OUT_OPTION,
    overrides: Optional[List[str]] = SET_OPTION,
    log_level: Optional[str] = LOG_OPTION,
) -> None:
    """Solve spiral radii, generate grooves and check assumptions."""
    _run('synth', config, out, overrides, log_level)


@app.command('ellipse')
def ellipse(
    config: Optional[Path] = CONFIG_OPTION,
    out: Optional[Path] = OUT_OPTION,
    overrides: Optional[List[str]] = SET_OPTION,
    log_level: Optional[str] = LOG_OPTION,
) -> None:
    """Regress stiffness ellipses at the probe stiffness fractions."""
    _run('ellipse', config, out, overrides, log_level)


@app.command('grasp')
def grasp(
    config: Optional[Path] = CONFIG_OPTION,
    out: Optional[Path] = OUT_OPTION,
    overrides: Optional[List[str]] = SET_OPTION,
    log_level: Optional[str] = LOG_OPTION,
) -> None:
    """Compute grasp force against deviation."""
    _run('grasp', config, out, overrides, log_level)


@app.command('step')
def step(
    config: Optional[Path] = CONFIG_OPTION,
    out: Optional[Path] = OUT_OPTION,
    overrides: Optional[List[str]] = SET_OPTION,
    log_level: Optional[str] = LOG_OPTION,
) -> None:
    """Simulate step responses and summarize them."""
    _run('step', config, out, overrides, log_level)


@app.command('validate')
def validate(
    config: Optional[Path] = CONFIG_OPTION,
    out: Optional[Path] = OUT_OPTION,
    overrides: Optional[List[str]] = SET_OPTION,
    log_level: Optional[str] = LOG_OPTION,
) -> None:
    """Validate the configuration and the small-slope assumptions."""
    _run('validate', config, out, overrides, log_level)
