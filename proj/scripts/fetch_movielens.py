#!/usr/bin/env python3
"""Extract MovieLens-100k ratings into data/ml-100k/u.data (tab-separated).

The sandbox cannot reach grouplens.org, so the ratings are taken from the
copy bundled inside the pytorch-widedeep wheel on PyPI. The output is
byte-compatible with the original u.data: user, item, rating, timestamp.
"""
import io
import pathlib
import subprocess
import sys
import tempfile
import zipfile

MEMBER = "pytorch_widedeep/datasets/data/MovieLens100k_data.parquet.brotli"


def main() -> int:
    out = pathlib.Path(sys.argv[1] if len(sys.argv) > 1 else "data/ml-100k/u.data")
    if out.exists():
        print(f"{out} already present")
        return 0
    import pandas as pd

    with tempfile.TemporaryDirectory() as tmp:
        subprocess.run([sys.executable, "-m", "pip", "download", "--no-deps", "-q",
                        "-d", tmp, "pytorch-widedeep==1.7.0"], check=True)
        wheel = next(pathlib.Path(tmp).glob("*.whl"))
        with zipfile.ZipFile(wheel) as z:
            df = pd.read_parquet(io.BytesIO(z.read(MEMBER)))
    out.parent.mkdir(parents=True, exist_ok=True)
    df[["user_id", "movie_id", "rating", "timestamp"]].to_csv(out, sep="\t", header=False, index=False)
    print(f"wrote {len(df)} rows to {out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
