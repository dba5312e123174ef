#!/usr/bin/env python3
"""Convert torchvision AlexNet conv weights into an attnflow weights archive.

    python tools/convert_torchvision_alexnet.py alexnet.bin
    python tools/convert_torchvision_alexnet.py alexnet.bin --state-dict alexnet-owt-7be5be79.pth

Without --state-dict the ImageNet weights are fetched through torchvision.
"""

import argparse
import hashlib
import json
import struct
import sys

import numpy as np

FORMAT_VERSION = 1
CONV_INDICES = (0, 3, 6, 8, 10)  # conv layers inside alexnet.features


def load_state_dict(path):
    import torch
    import torchvision

    if path:
        return torch.load(path, map_location="cpu", weights_only=True)
    weights = torchvision.models.AlexNet_Weights.IMAGENET1K_V1
    return torchvision.models.alexnet(weights=weights).state_dict()


def string32(s):
    data = s.encode("utf-8")
    return struct.pack("<I", len(data)) + data


def archive_bytes(blocks, meta):
    out = bytearray(b"ATTNFLOW")
    out += struct.pack("<I", FORMAT_VERSION)
    out += string32("backbone_weights")
    text = json.dumps(meta, sort_keys=True).encode("utf-8")
    out += struct.pack("<Q", len(text)) + text
    out += struct.pack("<I", len(blocks))
    for name, array in blocks:
        values = np.ascontiguousarray(array, dtype="<f8")
        out += string32(name)
        out += struct.pack("<I", values.ndim)
        out += struct.pack(f"<{values.ndim}Q", *values.shape)
        out += struct.pack("<Q", values.size)
        out += values.tobytes()
    out += hashlib.sha256(out).digest()
    return bytes(out)


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("output", help="archive to write")
    parser.add_argument("--state-dict", help="local torchvision AlexNet state dict (.pth)")
    args = parser.parse_args(argv)

    state = load_state_dict(args.state_dict)
    blocks = []
    channels = []
    for stage, index in enumerate(CONV_INDICES, start=1):
        weight = state[f"features.{index}.weight"].double().numpy()
        bias = state[f"features.{index}.bias"].double().numpy()
        blocks.append((f"conv{stage}.weight", weight))
        blocks.append((f"conv{stage}.bias", bias))
        channels.append(int(weight.shape[0]))

    meta = {"source": "torchvision.alexnet", "channels": channels}
    if args.state_dict:
        meta["state_dict"] = args.state_dict
    with open(args.output, "wb") as f:
        f.write(archive_bytes(blocks, meta))
    print(f"wrote {args.output} ({len(blocks)} tensors, channels {channels})")
    return 0


if __name__ == "__main__":
    sys.exit(main())
