import subprocess
import sys

import pytest

from trustyweb.cli import main


class CliResult:
    def __init__(self, code, out, err):
        self.code, self.out, self.err = code, out, err


@pytest.fixture
def cli(capsys):
    """Run the command line in-process: ``cli("mint", "--base", ...)``."""

    def run(*argv):
        try:
            code = main([str(a) for a in argv])
        except SystemExit as exc:  # argparse reports usage errors this way
            code = exc.code
        captured = capsys.readouterr()
        return CliResult(code, captured.out, captured.err)

    return run


@pytest.fixture
def spawn():
    """Start a ``trustyweb serve-*`` subprocess and return its base URL."""
    procs = []

    def start(*argv):
        proc = subprocess.Popen(
            [sys.executable, "-m", "trustyweb.cli", *map(str, argv)],
            stderr=subprocess.PIPE,
            text=True,
        )
        procs.append(proc)
        line = proc.stderr.readline()
        if "listening on " not in line:
            raise RuntimeError(f"service did not start: {line!r}")
        return line.rsplit("listening on ", 1)[1].strip()

    yield start
    for proc in procs:
        proc.terminate()
        proc.wait(timeout=10)
        proc.stderr.close()


# One line per acceptance criterion, printed in the terminal summary.
ACCEPTANCE: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
