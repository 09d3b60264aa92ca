"""Download the UCI classification sets that are not bundled (pima, ionos, spectf).

Files are written next to their schemas in ``src/eubovi/data``.  Usage:

    python scripts/fetch_uci.py [pima ionos spectf]
"""

import argparse
import sys
import urllib.request
from pathlib import Path

UCI = "https://archive.ics.uci.edu/ml/machine-learning-databases"
SOURCES = {
    "pima": ["https://raw.githubusercontent.com/jbrownlee/Datasets/master/"
             "pima-indians-diabetes.data.csv"],
    "ionos": [f"{UCI}/ionosphere/ionosphere.data"],
    "spectf": [f"{UCI}/spect/SPECTF.train", f"{UCI}/spect/SPECTF.test"],
}
DATA_DIR = Path(__file__).resolve().parents[1] / "src" / "eubovi" / "data"


def fetch(name: str) -> Path:
    lines = []
    for url in SOURCES[name]:
        with urllib.request.urlopen(url, timeout=60) as resp:
            text = resp.read().decode("utf-8")
        lines += [ln.strip() for ln in text.splitlines() if ln.strip()]
    out = DATA_DIR / f"{name}.csv"
    out.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return out


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("names", nargs="*", help=f"subset of {sorted(SOURCES)}")
    args = parser.parse_args(argv)
    unknown = set(args.names) - set(SOURCES)
    if unknown:
        parser.error(f"unknown data sets: {sorted(unknown)}")
    args.names = args.names or sorted(SOURCES)
    for name in args.names:
        try:
            print(f"{name}: wrote {fetch(name)}")
        except OSError as exc:
            print(f"{name}: download failed: {exc}", file=sys.stderr)
            return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
