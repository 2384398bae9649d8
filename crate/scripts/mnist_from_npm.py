#!/usr/bin/env python3
"""Rebuild data/mnist10k-* from the digits bundled in the `mnist` npm package.

usage: npm pack mnist && tar xzf mnist-*.tgz && python3 scripts/mnist_from_npm.py package data
"""
import gzip
import json
import struct
import sys
from pathlib import Path

src = Path(sys.argv[1]) / "src" / "digits"
out = Path(sys.argv[2])
out.mkdir(parents=True, exist_ok=True)

images = bytearray()
labels = []
for digit in range(10):
    flat = json.loads((src / f"{digit}.json").read_text())["data"]
    assert len(flat) % 784 == 0
    for v in flat:
        images.append(max(0, min(255, round(v * 255))))
    labels.extend([digit] * (len(flat) // 784))

n = len(labels)
header = struct.pack(">IIII", 0x00000803, n, 28, 28)
with gzip.GzipFile(out / "mnist10k-images-idx3-ubyte.gz", "wb", mtime=0) as f:
    f.write(header + bytes(images))
(out / "mnist10k-labels.txt").write_text("".join(f"{c}\n" for c in labels))
print(n, "samples")
