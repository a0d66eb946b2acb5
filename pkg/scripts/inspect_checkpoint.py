#!/usr/bin/env python3
"""Print a checkpoint's header, stored config and layer shapes.

Usage: ``python scripts/inspect_checkpoint.py runs/segment_16s/best.pt``
"""
from __future__ import annotations

import sys

import yaml

from lesionnet.core_types import CheckpointError
from lesionnet.helpers.checkpoint import load_checkpoint, state_checksum


def main() -> None:
    if len(sys.argv) != 2:
        print(__doc__.strip(), file=sys.stderr)
        sys.exit(2)
    try:
        payload = load_checkpoint(sys.argv[1])
    except CheckpointError as e:
        print(f"error: {e}", file=sys.stderr)
        sys.exit(2)

    print(f"format:   {payload['format']} v{payload['version']}")
    print(f"kind:     {payload['kind']}")
    print(f"mode:     {payload.get('mode')}")
    print(f"batch:    {payload.get('batch')}")
    print(f"score:    {payload.get('score')}")
    print(f"checksum: {state_checksum(payload['state_dict'])}")
    print()
    print("config:")
    print(yaml.safe_dump(payload["config"], sort_keys=False))
    print("layers:")
    total = 0
    for name, shape in payload["shapes"].items():
        count = 1
        for dim in shape:
            count *= dim
        total += count
        print(f"  {name:<50} {str(shape):<20} {count:>10,d}")
    print(f"  {'total':<50} {'':<20} {total:>10,d}")


if __name__ == "__main__":
    main()
