"""Time each kernel under the numpy and numba backends on representative inputs.

    python3 benchmarks/bench_kernels.py [--repeat 5]

Numba timings exclude the first (compiling) call.
"""
import argparse
import time

import numpy as np

from liorecon import kernels, sim
from liorecon.kernels import TRI_TABLE


def _inputs(rng):
    loop = sim.RoundedRectangleLoop.with_perimeter(50.0, duration=20.0)
    world = sim.loop_world(loop)
    spec = sim.SensorSpec()
    dirs, _ = spec.beam_directions()
    dirs = dirs.reshape(-1, 3)
    origins = np.tile([[4.0, 0.0, 0.0]], (len(dirs), 1))
    frame = sim.raycast_scan(world, loop, 5.0, spec, rng)
    ring0 = frame.points[frame.ring == 8]

    vals = rng.normal(0.0, 0.1, (20000, 8))
    cube_org = rng.integers(-50, 50, (20000, 3))
    return {
        "ray_triangle_hits": lambda m: m.ray_triangle_hits(origins, dirs, world.triangles, spec.max_range),
        "ring_curvature": lambda m: m.ring_curvature(ring0, 5),
        "tsdf_ray_samples": lambda m: m.tsdf_ray_samples(frame.points + [4.0, 0, 0], np.array([4.0, 0, 0]),
                                                         0.1, 0.4, 0.025),
        "mc_cube_triangles": lambda m: m.mc_cube_triangles(vals, cube_org, TRI_TABLE),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    cases = _inputs(np.random.default_rng(0))
    backends = kernels.backends()
    print(f"{'kernel':<20}" + "".join(f"{name:>12}" for name in backends) + f"{'speedup':>10}")
    for name, fn in cases.items():
        times = {}
        for bname, mod in backends.items():
            fn(mod)  # warm-up / compile
            best = np.inf
            for _ in range(args.repeat):
                t0 = time.perf_counter()
                fn(mod)
                best = min(best, time.perf_counter() - t0)
            times[bname] = best
        speed = times["numpy"] / times["numba"] if "numba" in times else float("nan")
        print(f"{name:<20}" + "".join(f"{1e3 * t:>10.2f}ms" for t in times.values()) + f"{speed:>9.1f}x")


if __name__ == "__main__":
    main()
