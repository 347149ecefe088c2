"""Train the shape embedder on synthetic identities and score it on held-out poses."""
import argparse
import json

from smd import experiments


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--identities", type=int, default=20)
    p.add_argument("--train-poses", type=int, default=20)
    p.add_argument("--test-poses", type=int, default=5)
    p.add_argument("--steps", type=int, default=None, help="default: ShapeConfig.steps")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--log-every", type=int, default=500)
    args = p.parse_args(argv)
    r = experiments.shape_embedder_eval(args.identities, args.train_poses, args.test_poses, args.steps, args.seed,
                                        args.log_every)
    print(json.dumps(r, indent=2))


if __name__ == "__main__":
    main()
