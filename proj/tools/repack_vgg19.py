#!/usr/bin/env python3
"""Repack published 19-layer VGG weights into the coconet backbone format.

Accepted inputs:
  *.pth / *.pt   torchvision state dict (features.N.weight / features.N.bias)
  *.npz          same keys, or convS_I.weight / convS_I.bias

Only the 16 convolutions are kept; classifier layers are ignored.
"""

import argparse
import json
import struct
import sys
import zlib
from pathlib import Path

import numpy as np

STAGES = [(2, 64), (2, 128), (4, 256), (4, 512), (4, 512)]


def layout():
    out, cin, feature = [], 3, 0
    for s, (convs, width) in enumerate(STAGES, start=1):
        for i in range(1, convs + 1):
            out.append((f"conv{s}_{i}", cin, width, feature))
            cin = width
            feature += 2  # conv, relu
        feature += 1      # max pool
    return out


def load_tensors(path):
    if path.suffix in (".pth", ".pt"):
        import torch

        state = torch.load(path, map_location="cpu")
        if hasattr(state, "state_dict"):
            state = state.state_dict()
        return {k: v.detach().cpu().numpy() for k, v in state.items()}
    if path.suffix == ".npz":
        with np.load(path) as z:
            return {k: z[k] for k in z.files}
    sys.exit(f"unsupported input format: {path}")


def pick(tensors, name, feature, part):
    for key in (f"{name}.{part}", f"features.{feature}.{part}"):
        if key in tensors:
            return np.asarray(tensors[key], dtype="<f8")
    sys.exit(f"missing {part} for {name} (features.{feature})")


def serialize(arrays, metadata):
    manifest = {"kind": "vgg19", "version": 1, "metadata": metadata, "arrays": []}
    offset = 0
    for name, a in arrays:
        manifest["arrays"].append({"name": name, "shape": list(a.shape), "offset": offset, "count": int(a.size)})
        offset += a.size * 8
    text = json.dumps(manifest, separators=(",", ":")).encode()
    body = b"CCNTARCH" + struct.pack("<IQ", 1, len(text)) + text
    body += b"".join(np.ascontiguousarray(a).tobytes() for _, a in arrays)
    return body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("input", type=Path)
    ap.add_argument("output", type=Path)
    args = ap.parse_args()

    tensors = load_tensors(args.input)
    arrays = []
    for name, cin, cout, feature in layout():
        w = pick(tensors, name, feature, "weight")
        b = pick(tensors, name, feature, "bias")
        if w.shape != (cout, cin, 3, 3) or b.shape != (cout,):
            sys.exit(f"{name}: expected weight {(cout, cin, 3, 3)} and bias {(cout,)}, got {w.shape} and {b.shape}")
        arrays += [(f"{name}.weight", w), (f"{name}.bias", b)]

    tmp = args.output.with_name(args.output.name + ".tmp")
    tmp.write_bytes(serialize(arrays, {"source": args.input.name}))
    tmp.replace(args.output)
    print(f"wrote {len(arrays) // 2} layers to {args.output}")


if __name__ == "__main__":
    main()
