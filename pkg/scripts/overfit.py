"""Overfit a small denoiser on four motions and report how far the total loss falls."""
import argparse

from smd import experiments


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--steps", type=int, default=2000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--log-every", type=int, default=250)
    args = p.parse_args(argv)
    r = experiments.overfit(args.steps, args.seed, log_every=args.log_every)
    print(f"first {r['first']:.4f}  last {r['last']:.4f}  reduction {r['reduction']:.1f}x  "
          f"weighted-sum gap {r['identity_rel_gap']:.1e}  {r['seconds']:.0f}s")


if __name__ == "__main__":
    main()
