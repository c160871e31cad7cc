"""Regenerate the annotated hex listing in docs/format.md.

Usage: python docs/format_example.py [out.drm]
"""
import math
import struct
import sys

import numpy as np

from dualdrm import persistence as fmt
from dualdrm.roadmap import build_roadmap, roadmap_payload
from dualdrm.robots import planar_demo_robot
from dualdrm.voxel_world import VoxelGrid


def row(off, raw, note):
    print(f"{off:08x}  {' '.join(f'{x:02x}' for x in raw):<48} {note}")


def main():
    grid = VoxelGrid.from_workspace((-0.6, -0.6, 0.4), (0.6, 0.6, 0.6), 0.2)
    r = build_roadmap(planar_demo_robot(), 1, math.pi / 6, math.pi / 4, grid)
    data = fmt.pack_file(fmt.KIND_ROADMAP, r.compat.hash64(), roadmap_payload(r))
    if len(sys.argv) > 1:
        with open(sys.argv[1], "wb") as f:
            f.write(data)

    u32 = lambda off: struct.unpack_from("<I", data, off)[0]  # noqa: E731
    u64 = lambda off: struct.unpack_from("<Q", data, off)[0]  # noqa: E731
    row(0, data[0:8], 'magic "DUALDRM\\0"')
    row(8, data[8:12], f"format_version = {u32(8)}")
    row(12, data[12:16], f"kind = {u32(12)} (roadmap)")
    row(16, data[16:24], f"checksum = 0x{u64(16):016x}")
    row(24, data[24:32], f"compat hash = 0x{u64(24):016x}")
    row(32, data[32:40], f"payload length = {u64(32)}")
    row(40, data[40:48], "reserved = 0")
    pos = 48
    while pos < len(data):
        tag, code, count = struct.unpack_from("<4sc3xQ", data, pos)
        row(pos, data[pos:pos + 16], f"block {tag.decode()} dtype {code.decode()!r} count {count}")
        pos += 16
        size = count * (1 if code == b"b" else 8)
        body = data[pos:pos + size]
        if code == b"b":
            row(pos, body[:16], repr(body[:16].decode()) + " ...")
        else:
            arr = np.frombuffer(body, "<i8" if code == b"i" else "<f8")
            row(pos, body[:16], f"{arr[:2].tolist()} ..." if len(arr) > 2 else str(arr.tolist()))
        if size > 16:
            print(f"{'':8}  {'...':<48} {size - 16} more bytes")
        pos += size
    print(f"{pos:08x}  (end of file)")


if __name__ == "__main__":
    main()
