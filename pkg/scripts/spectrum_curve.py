"""Mean/max T-pose reconstruction error against the number of retained frequencies."""
import argparse
import csv
import sys

from smd import experiments, spectral


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--identities", type=int, default=20)
    p.add_argument("--ks", type=int, nargs="+", default=None, help="default: the reference sweep scaled to N")
    p.add_argument("--out", default=None, help="optional CSV path")
    args = p.parse_args(argv)
    meshes, basis = experiments.spectrum_meshes(args.identities)
    ks = args.ks or experiments.scaled_ks(basis.n)
    rows = spectral.reconstruction_curve(meshes, ks, basis)
    writer = csv.writer(open(args.out, "w", newline="") if args.out else sys.stdout)
    writer.writerow(["k", "mean_error_mm", "max_error_mm"])
    for k, mean, mx in rows:
        writer.writerow([k, f"{mean:.4f}", f"{mx:.4f}"])


if __name__ == "__main__":
    main()
