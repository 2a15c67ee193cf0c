#!/usr/bin/env python3
"""Convert the digit JSON files shipped with the `mnist` npm package into IDX files.

The npm package stores 10,000 MNIST digits as per-class JSON arrays of
784 floats in [0, 1] with three decimals. Bytes are recovered as
round(v * 255), which reproduces the original pixel value exactly at the
binarization boundary (127 -> 0.498, 128 -> 0.502).

The digits are shuffled with a fixed seed and split into a training part
and a held-out part written under the standard MNIST file names.

    npm pack mnist && tar xzf mnist-*.tgz
    python3 tools/mnist_json_to_idx.py package/src/digits data --n-test 1000
"""
import argparse
import json
import random
import struct
from pathlib import Path


def write_idx(path, dims, payload):
    with open(path, "wb") as f:
        f.write(bytes([0, 0, 0x08, len(dims)]))
        for d in dims:
            f.write(struct.pack(">I", d))
        f.write(payload)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("digits_dir")
    ap.add_argument("out_dir")
    ap.add_argument("--n-test", type=int, default=1000)
    ap.add_argument("--seed", type=int, default=20121)
    args = ap.parse_args()

    samples = []
    for label in range(10):
        data = json.loads(Path(args.digits_dir, f"{label}.json").read_text())["data"]
        if len(data) % 784:
            raise SystemExit(f"{label}.json: length {len(data)} is not a multiple of 784")
        for i in range(0, len(data), 784):
            img = bytes(min(255, max(0, round(v * 255))) for v in data[i:i + 784])
            samples.append((img, label))

    random.Random(args.seed).shuffle(samples)
    test, train = samples[:args.n_test], samples[args.n_test:]
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for prefix, part in (("train", train), ("t10k", test)):
        write_idx(out / f"{prefix}-images-idx3-ubyte", (len(part), 28, 28),
                  b"".join(img for img, _ in part))
        write_idx(out / f"{prefix}-labels-idx1-ubyte", (len(part),),
                  bytes(label for _, label in part))
        print(f"{prefix}: {len(part)} samples")


if __name__ == "__main__":
    main()
