"""Filler volume from extraction against voxel counting, for crater pairs of
several depths on a fine icosphere.

    python scripts/volume_check.py --pairs 10
"""

import argparse
import sys
import time
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "tests"))
from oracles import voxel_volume_between  # noqa: E402

from woundfill.filling import WoundSegmentation, extract_filling  # noqa: E402
from woundfill.synthgen import carve_wound, generate_icosphere, random_direction  # noqa: E402


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--pairs", type=int, default=10)
    ap.add_argument("--level", type=int, default=5)
    ap.add_argument("--radius", type=float, default=5.0)
    ap.add_argument("--depths", type=float, nargs="+", default=[1.0, 2.0, 4.0])
    args = ap.parse_args()
    base = generate_icosphere(args.level, 50.0)
    print("seed depth wound_faces extracted voxels rel_diff seconds")
    for seed in range(args.pairs):
        d = random_direction(np.random.default_rng(seed))
        for depth in args.depths:
            t = time.perf_counter()
            w, lab = carve_wound(base, d, args.radius, depth, seed=seed, base_radius=50.0)
            res = extract_filling(w, base, WoundSegmentation.from_labels(w, lab))
            vox = voxel_volume_between(base, w, base.faces[lab == 1], d)
            print(f"{seed} {depth} {int(lab.sum())} {res.volume:.4f} {vox:.4f} "
                  f"{res.volume / vox - 1:+.4%} {time.perf_counter() - t:.2f}")


if __name__ == "__main__":
    main()
