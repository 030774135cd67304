import logging

from rich.console import Console
from rich.logging import RichHandler


def setup_rich_logger(
    logfile: str | None = None, console_level: int = logging.INFO
) -> logging.Logger:
    """
    Console logging through rich, plus an optional DEBUG log file
    (used for work/file.log inside an output directory)
    """
    handlers: list[logging.Handler] = [
        RichHandler(level=console_level, markup=True, show_path=False)
    ]
    if logfile is not None:
        handlers.append(
            RichHandler(
                level=logging.DEBUG,
                console=Console(file=open(logfile, "w")),
                markup=True,
                show_path=False,
                omit_repeated_times=False,
            )
        )

    # force=True so repeated runs in one process swap the file handler
    logging.basicConfig(
        level="NOTSET",
        format="%(message)s",
        datefmt="[%X]",
        handlers=handlers,
        force=True,
    )
    return logging.getLogger("lanefree")
