"""Per-type keypoint reconstruction RMSE against the number of kept eigenvectors."""

import argparse

import numpy as np

from vehfit.assets import default_model, default_training_set
from vehfit.shape_model import fit_rmse


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--max-k", type=int, default=None, help="largest number of eigenvectors (default: all)")
    ap.add_argument("--csv", help="optional output file")
    args = ap.parse_args()

    model = default_model()
    samples = default_training_set()
    ks = range(0, min(args.max_k or model.n_all, model.n_all) + 1)
    rows = []
    for name in model.type_names:
        members = [s.points for s in samples if s.type_label == name]
        rows.append([np.mean([fit_rmse(model, m, k) for m in members]) for k in ks])
    header = "type," + ",".join(f"k{k}" for k in ks)
    lines = [header] + [name + "," + ",".join(f"{v:.4f}" for v in row) for name, row in zip(model.type_names, rows)]
    print("\n".join(lines))
    if args.csv:
        with open(args.csv, "w") as fh:
            fh.write("\n".join(lines) + "\n")


if __name__ == "__main__":
    main()
