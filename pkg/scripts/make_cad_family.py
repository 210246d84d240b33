"""Regenerate the shipped synthetic CAD keypoint collection and topology."""

import argparse
from pathlib import Path

from vehfit import cad
from vehfit.shape_model import KeypointSet, write_training_set
from vehfit.topology import write_topology

DATA = Path(__file__).resolve().parents[1] / "src" / "vehfit" / "data"


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seed", type=int, default=2020)
    ap.add_argument("--out", type=Path, default=DATA)
    args = ap.parse_args()
    args.out.mkdir(parents=True, exist_ok=True)
    family = cad.generate_family(seed=args.seed)
    write_training_set([KeypointSet(m.keypoints, m.type_label) for m in family], args.out / "cad_keypoints.txt")
    write_topology(cad.build_topology(), args.out / "topology_v1.txt")
    print(f"wrote {len(family)} models to {args.out}")


if __name__ == "__main__":
    main()
