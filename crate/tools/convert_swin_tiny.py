#!/usr/bin/env python3
"""Convert a Swin-Tiny checkpoint (.pth or timm model) to a manifest + blob archive.

Usage:
    convert_swin_tiny.py swin_tiny_patch4_window7_224.pth out/swin_tiny.manifest
    convert_swin_tiny.py --timm swin_tiny_patch4_window7_224 out/swin_tiny.manifest

The manifest is a text file with one `name<TAB>dtype<TAB>shape<TAB>offset` line
per tensor; the blob holds the raw little-endian bytes back to back.
"""

import argparse
import pathlib
import re
import sys

import torch

DTYPES = {
    torch.float32: "f32",
    torch.float64: "f64",
    torch.float16: "f16",
    torch.bfloat16: "bf16",
    torch.int64: "i64",
    torch.int32: "i32",
    torch.uint8: "u8",
}


def load_state(args):
    if args.timm:
        import timm

        state = timm.create_model(args.source, pretrained=not args.no_pretrained).state_dict()
        return {official_name(k): v for k, v in state.items()}
    obj = torch.load(args.source, map_location="cpu", weights_only=False)
    for key in ("model", "state_dict"):
        if isinstance(obj, dict) and key in obj and isinstance(obj[key], dict):
            obj = obj[key]
    return obj


def official_name(name):
    """timm keeps patch merging at the start of the next stage and nests the
    classifier under `head.fc`; the mapper expects the original layout."""
    m = re.match(r"layers\.(\d+)\.downsample\.(.*)", name)
    if m:
        return f"layers.{int(m.group(1)) - 1}.downsample.{m.group(2)}"
    if name.startswith("head.fc."):
        return "head." + name[len("head.fc."):]
    return name


def main():
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("source")
    p.add_argument("manifest")
    p.add_argument("--timm", action="store_true", help="treat source as a timm model name")
    p.add_argument("--no-pretrained", action="store_true", help="with --timm, export the untrained model (layout checks)")
    args = p.parse_args()

    state = load_state(args)
    manifest = pathlib.Path(args.manifest)
    manifest.parent.mkdir(parents=True, exist_ok=True)
    blob = manifest.with_suffix(".bin")
    offset = 0
    lines = [f"# blob: {blob.name}"]
    with open(blob, "wb") as out:
        for name, t in state.items():
            if not torch.is_tensor(t):
                continue
            if t.dtype not in DTYPES:
                sys.exit(f"{name}: unsupported dtype {t.dtype}")
            t = t.detach().contiguous().cpu()
            raw = t.view(torch.int16) if t.dtype in (torch.float16, torch.bfloat16) else t
            data = raw.numpy().astype(raw.numpy().dtype.newbyteorder("<")).tobytes()
            shape = ",".join(str(d) for d in t.shape)
            lines.append(f"{name}\t{DTYPES[t.dtype]}\t{shape}\t{offset}")
            out.write(data)
            offset += len(data)
    manifest.write_text("\n".join(lines) + "\n")
    print(f"wrote {len(lines) - 1} tensors ({offset} bytes) to {manifest} and {blob}")


if __name__ == "__main__":
    main()
