#!/usr/bin/env python3
# Copyright 2026 The HCL Authors
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#    http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.

"""Regenerates the binary fixtures in this directory.

usage: make_fixtures.py DATA_DIR

DATA_DIR must hold mnist/ and cifar-10-batches-bin/ in their upstream
formats. The one-record files are cut from the first training record of
each; the CIFAR-100 record and the tiny MNIST-layout set are synthetic.
"""

import os
import struct
import sys

import numpy as np

HERE = os.path.dirname(os.path.abspath(__file__))


def idx_images(path, images):
    n, h, w = images.shape
    with open(path, "wb") as f:
        f.write(struct.pack(">IIII", 0x803, n, h, w))
        f.write(images.astype(np.uint8).tobytes())


def idx_labels(path, labels):
    with open(path, "wb") as f:
        f.write(struct.pack(">II", 0x801, len(labels)))
        f.write(np.asarray(labels, dtype=np.uint8).tobytes())


def main(data_dir):
    with open(os.path.join(data_dir, "mnist", "train-images-idx3-ubyte"), "rb") as f:
        f.seek(16)
        img = np.frombuffer(f.read(784), dtype=np.uint8).reshape(1, 28, 28)
    with open(os.path.join(data_dir, "mnist", "train-labels-idx1-ubyte"), "rb") as f:
        f.seek(8)
        lab = f.read(1)[0]
    idx_images(os.path.join(HERE, "mnist_one-images-idx3-ubyte"), img)
    idx_labels(os.path.join(HERE, "mnist_one-labels-idx1-ubyte"), [lab])

    with open(os.path.join(data_dir, "cifar-10-batches-bin", "data_batch_1.bin"), "rb") as f:
        rec = f.read(3073)
    with open(os.path.join(HERE, "cifar10_one.bin"), "wb") as f:
        f.write(rec)

    # coarse 3, fine 42, channel c pixel i = (7 * i + 85 * c) mod 256
    px = np.array([(7 * i + 85 * c) % 256 for c in range(3) for i in range(1024)], dtype=np.uint8)
    with open(os.path.join(HERE, "cifar100_one.bin"), "wb") as f:
        f.write(bytes([3, 42]) + px.tobytes())

    # Ten classes, each a bright horizontal band at rows 2c..2c+4, plus noise.
    rng = np.random.default_rng(20260101)
    os.makedirs(os.path.join(HERE, "tiny", "mnist"), exist_ok=True)
    for prefix, per_class in (("train", 12), ("t10k", 4)):
        labels = np.repeat(np.arange(10), per_class)
        rng.shuffle(labels)
        images = rng.integers(0, 60, size=(len(labels), 28, 28))
        for k, c in enumerate(labels):
            images[k, 2 * c + 2:2 * c + 6, 4:24] += 180
        idx_images(os.path.join(HERE, "tiny", "mnist", prefix + "-images-idx3-ubyte"), images)
        idx_labels(os.path.join(HERE, "tiny", "mnist", prefix + "-labels-idx1-ubyte"), labels)


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else "/root/data")
