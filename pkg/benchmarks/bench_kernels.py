"""Compiled vs pure-numpy kernels on pipeline-sized inputs.

Usage: python3 benchmarks/bench_kernels.py [--repeat N]
"""

from __future__ import annotations

import argparse
import timeit

import numpy as np

from sportcal import _kernels_py
from sportcal.camera import CameraPose
from sportcal.distance import distance_transform
from sportcal.render import downsample_edges, project_template, render_edge_image
from sportcal.lk import image_gradients, to_normalized
from sportcal.template import builtin_soccer

try:
    from sportcal import _kernels as compiled
except ImportError:
    compiled = None


def cases():
    template = builtin_soccer()
    pose = CameraPose(2000.0, 8.0, -10.0)
    edge = render_edge_image(template, pose)
    sites = np.ascontiguousarray(downsample_edges(edge, (640, 360)).pixels)
    segs = np.ascontiguousarray(project_template(template, pose))
    dist = distance_transform(downsample_edges(edge, (640, 360)), 20.0).astype(np.float32)
    gx, gy = (np.ascontiguousarray(g, dtype=np.float32) for g in image_gradients(dist))
    warp = np.array([[1.0, 0.01, 3.0], [0.0, 1.0, -2.0], [0.0, 0.0, 1.0]])
    hn = np.ascontiguousarray(to_normalized(warp, 640, 360))

    def draw(mod):
        img = np.zeros((720, 1280), dtype=np.uint8)
        mod.draw_segments(img, segs, 2.0)

    return {
        "squared_edt 640x360": lambda mod: mod.squared_edt(sites),
        f"draw_segments {len(segs)} segs 1280x720": draw,
        "lk_accumulate 640x360": lambda mod: mod.lk_accumulate(dist, dist, gx, gy, hn, True, 20.0),
    }


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args()
    backends = [("python", _kernels_py)]
    if compiled is not None:
        backends.insert(0, ("cython", compiled))
    else:
        print("compiled extension not built; timing the python fallback only")
    print(f"{'kernel':40s} " + " ".join(f"{name:>12s}" for name, _ in backends) + "   speedup")
    for label, fn in cases().items():
        times = []
        for _, mod in backends:
            fn(mod)  # warm-up
            times.append(min(timeit.repeat(lambda: fn(mod), number=1, repeat=args.repeat)))
        cols = " ".join(f"{t * 1e3:10.2f}ms" for t in times)
        speedup = f"{times[-1] / times[0]:8.1f}x" if len(times) == 2 else ""
        print(f"{label:40s} {cols} {speedup}")


if __name__ == "__main__":
    main()
