"""Shared helpers for the demo scripts: the bundled demo inputs and a work directory."""

import shutil
import sys
from pathlib import Path

import glorepp

DATA = Path(glorepp.__file__).parent / "data" / "demo"
WORK = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(__file__).parent / "_work"


def workdir() -> Path:
    WORK.mkdir(parents=True, exist_ok=True)
    for f in DATA.iterdir():
        if not (WORK / f.name).exists():
            shutil.copy(f, WORK / f.name)
    return WORK


def run(*argv) -> None:
    from glorepp.cli import dispatch

    print("$ glorepp " + " ".join(str(a) for a in argv))
    code = dispatch([str(a) for a in argv])
    if code:
        raise SystemExit(code)


def head(path, n=8) -> None:
    for line in Path(path).read_text().splitlines()[:n]:
        print("   ", line)
