"""Writes data/digits.mrvd from scikit-learn's bundled 8x8 digits.

Pixel intensities 0..16 are rescaled to 0..255. Layout: b"MRVD", version byte,
u32 count, height, width, classes (little-endian), count*h*w pixel bytes,
count label bytes.
"""
import struct
import sys
from pathlib import Path

import numpy as np
from sklearn.datasets import load_digits


def main() -> None:
    out = Path(sys.argv[1] if len(sys.argv) > 1 else "data/digits.mrvd")
    d = load_digits()
    pixels = np.rint(d.data * 255.0 / 16.0).astype(np.uint8)
    labels = d.target.astype(np.uint8)
    n = pixels.shape[0]
    header = b"MRVD" + struct.pack("<B4I", 1, n, 8, 8, 10)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_bytes(header + pixels.tobytes() + labels.tobytes())
    print(f"wrote {n} samples to {out}")


if __name__ == "__main__":
    main()
