import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

_RESULTS = {}
_NOTES = []


def record(n, ok, detail, extra=()):
    """Store the outcome of acceptance criterion ``n`` for the summary."""
    _RESULTS[n] = (ok, detail, list(extra))
    print(f"CRITERION {n}: {'PASS' if ok else 'FAIL'} - {detail}")


def note(header, lines=()):
    """Informational output shown after the criteria; never affects pass/fail."""
    _NOTES.append((header, list(lines)))
    print(header)


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS and not _NOTES:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_RESULTS):
        ok, detail, extra = _RESULTS[n]
        terminalreporter.write_line(f"CRITERION {n}: {'PASS' if ok else 'FAIL'} - {detail}")
        for line in extra:
            terminalreporter.write_line(f"    {line}")
    for header, lines in _NOTES:
        terminalreporter.write_line(f"NOTE: {header}")
        for line in lines:
            terminalreporter.write_line(f"    {line}")
