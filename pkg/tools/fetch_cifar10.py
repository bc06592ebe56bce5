#!/usr/bin/env python3
"""Fetch CIFAR-10 and materialize the standard binary batch files.

Downloads the dataset's parquet copies from the Hugging Face hub
(uoft-cs/cifar10) and rewrites them as data_batch_1..5.bin / test_batch.bin
in the classic 3073-byte-record layout this package reads. Needs the
optional extras: pip install 'cnnscope[fetch]' (pyarrow + pillow).

Usage:
    python tools/fetch_cifar10.py [--out data/cifar-10-batches-bin]
                                  [--base-url https://huggingface.co]

Set --base-url (or HF_ENDPOINT) to a mirror if huggingface.co is proxied
in your environment.
"""

import argparse
import io
import os
import sys
import urllib.request
from pathlib import Path

FILES = {
    "train": "datasets/uoft-cs/cifar10/resolve/main/plain_text/train-00000-of-00001.parquet",
    "test": "datasets/uoft-cs/cifar10/resolve/main/plain_text/test-00000-of-00001.parquet",
}

CLASSES = ("airplane", "automobile", "bird", "cat", "deer",
           "dog", "frog", "horse", "ship", "truck")


def download(url: str, dest: Path):
    if dest.exists() and dest.stat().st_size > 0:
        print(f"already have {dest}")
        return
    print(f"downloading {url}")
    tmp = dest.with_suffix(".part")
    with urllib.request.urlopen(url) as resp, open(tmp, "wb") as f:
        while True:
            chunk = resp.read(1 << 20)
            if not chunk:
                break
            f.write(chunk)
    tmp.rename(dest)
    print(f"  -> {dest} ({dest.stat().st_size / 1e6:.1f} MB)")


def parquet_to_records(path: Path):
    import numpy as np
    import pyarrow.parquet as pq
    from PIL import Image

    table = pq.read_table(path)
    images = table.column("img").to_pylist()
    labels = table.column("label").to_pylist()
    records = []
    for img, label in zip(images, labels):
        arr = np.asarray(Image.open(io.BytesIO(img["bytes"])).convert("RGB"),
                         dtype=np.uint8)
        if arr.shape != (32, 32, 3):
            raise SystemExit(f"unexpected image shape {arr.shape} in {path}")
        planes = arr.transpose(2, 0, 1).reshape(-1)  # R plane, G plane, B plane
        records.append(bytes([label]) + planes.tobytes())
    return records


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="data/cifar-10-batches-bin")
    parser.add_argument("--base-url", default=os.environ.get("HF_ENDPOINT",
                                                             "https://huggingface.co"))
    parser.add_argument("--keep-parquet", action="store_true")
    args = parser.parse_args(argv)

    try:
        import pyarrow  # noqa: F401
        from PIL import Image  # noqa: F401
    except ImportError as e:
        print(f"missing dependency: {e.name}; install with pip install pyarrow pillow",
              file=sys.stderr)
        return 1

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cache = out / "_parquet"
    cache.mkdir(exist_ok=True)

    for split, rel in FILES.items():
        download(f"{args.base_url.rstrip('/')}/{rel}", cache / f"{split}.parquet")

    train = parquet_to_records(cache / "train.parquet")
    test = parquet_to_records(cache / "test.parquet")
    if len(train) != 50000 or len(test) != 10000:
        raise SystemExit(f"unexpected record counts: {len(train)} train, {len(test)} test")

    for i in range(5):
        (out / f"data_batch_{i + 1}.bin").write_bytes(
            b"".join(train[i * 10000:(i + 1) * 10000]))
    (out / "test_batch.bin").write_bytes(b"".join(test))
    (out / "batches.meta.txt").write_text("\n".join(CLASSES) + "\n")
    if not args.keep_parquet:
        for f in cache.iterdir():
            f.unlink()
        cache.rmdir()
    print(f"wrote CIFAR-10 binary batches under {out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
