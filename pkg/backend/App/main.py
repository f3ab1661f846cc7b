import logging
import sys

import typer
from rich.logging import RichHandler

from App.calibration import __version__
from App.commands.bench import bench_command
from App.commands.calibrate import calibrate_command
from App.commands.evaluate import evaluate_command
from App.commands.group import group_command
from App.commands.score import score_command
from App.commands.synth import synth_command

logger = logging.getLogger(__name__)

app = typer.Typer(name="multical", help="Calibration and multicalibration toolkit", add_completion=False)


def configure_logging(verbose: bool = False, quiet: bool = False) -> None:
    level = logging.DEBUG if verbose else logging.WARNING if quiet else logging.INFO
    handlers = [RichHandler(show_path=False)] if sys.stderr.isatty() else None
    logging.basicConfig(
        level=level,
        format='%(asctime)s - %(levelname)s - %(message)s',
        handlers=handlers,
        force=True,
    )


def _version(value: bool):
    if value:
        typer.echo(f"multical {__version__}")
        raise typer.Exit()


@app.callback()
def main(
    verbose: bool = typer.Option(False, "--verbose", "-v", help="Log every fitting round"),
    quiet: bool = typer.Option(False, "--quiet", "-q", help="Only log warnings and errors"),
    version: bool = typer.Option(False, "--version", callback=_version, is_eager=True),
):
    configure_logging(verbose, quiet)


app.command("score")(score_command)
app.command("group")(group_command)
app.command("synth")(synth_command)
app.command("calibrate")(calibrate_command)
app.command("evaluate")(evaluate_command)
app.command("bench")(bench_command)


if __name__ == "__main__":
    app()
