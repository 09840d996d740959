#!/usr/bin/env python3
"""Converts the per-class JSON files of the npm package "fashion-mnist" to IDX.

The package ships about 7000 images per class without the canonical
train/test split. In file order, the first 6000 images of each class go to
the training files and the next 1000 to the test files; any surplus is
ignored. The result has the canonical sizes but not the canonical partition.

usage: fashion_json_to_idx.py PACKAGE_SRC_CLOTHES_DIR OUT_DIR
"""
import json
import struct
import sys
from pathlib import Path

TRAIN_PER_CLASS = 6000
TEST_PER_CLASS = 1000


def write_idx(prefix: Path, images, labels):
    with open(f"{prefix}-images-idx3-ubyte", "wb") as f:
        f.write(struct.pack(">IIII", 0x803, len(images), 28, 28))
        for img in images:
            f.write(bytes(img))
    with open(f"{prefix}-labels-idx1-ubyte", "wb") as f:
        f.write(struct.pack(">II", 0x801, len(labels)))
        f.write(bytes(labels))


def main():
    src, out = Path(sys.argv[1]), Path(sys.argv[2])
    out.mkdir(parents=True, exist_ok=True)
    train, test = ([], []), ([], [])
    for label in range(10):
        kept = [img for img in json.loads((src / f"{label}.json").read_text())["data"] if len(img) == 784]
        if len(kept) < TRAIN_PER_CLASS + TEST_PER_CLASS:
            sys.exit(f"class {label}: only {len(kept)} images")
        for img in kept[:TRAIN_PER_CLASS]:
            train[0].append(img)
            train[1].append(label)
        for img in kept[TRAIN_PER_CLASS:TRAIN_PER_CLASS + TEST_PER_CLASS]:
            test[0].append(img)
            test[1].append(label)
    write_idx(out / "train", *train)
    write_idx(out / "t10k", *test)
    print(f"wrote {len(train[1])} training and {len(test[1])} test images to {out}")


if __name__ == "__main__":
    main()
