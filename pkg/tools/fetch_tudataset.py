"""Download TUDataset archives into a data directory.

    python3 tools/fetch_tudataset.py PROTEINS DD --dest data

Each archive unpacks to ``<dest>/<NAME>/<NAME>_A.txt`` etc., the layout the
loader and the acceptance tests expect. Needs network access.
"""
import argparse
import io
import sys
import urllib.request
import zipfile
from pathlib import Path

BASE_URL = "https://www.chrsmrrs.com/graphkerneldatasets/{name}.zip"


def fetch(name: str, dest: Path, timeout: float = 60.0) -> Path:
    with urllib.request.urlopen(BASE_URL.format(name=name), timeout=timeout) as resp:
        payload = resp.read()
    with zipfile.ZipFile(io.BytesIO(payload)) as zf:
        zf.extractall(dest)
    return dest / name


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("names", nargs="+")
    p.add_argument("--dest", type=Path, default=Path("data"))
    args = p.parse_args()
    args.dest.mkdir(parents=True, exist_ok=True)
    failed = 0
    for name in args.names:
        try:
            print(name, "->", fetch(name, args.dest))
        except OSError as exc:
            print(f"{name}: download failed: {exc}", file=sys.stderr)
            failed += 1
    sys.exit(1 if failed else 0)


if __name__ == "__main__":
    main()
