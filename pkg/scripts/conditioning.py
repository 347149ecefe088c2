"""End-to-end check: does the shape condition steer generated bodies, and the action steer the root?

Trains the shape embedder and a small denoiser on walk/idle motions of a few
identities, then samples each (identity, action) pair against a held-out-pose
target mesh.
"""
import argparse
import dataclasses
import json

from smd import experiments


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    defaults = experiments.ConditioningSetup()
    for f in dataclasses.fields(defaults):
        if isinstance(f.default, tuple):
            p.add_argument("--" + f.name.replace("_", "-"), type=int, nargs="+", default=f.default)
        else:
            p.add_argument("--" + f.name.replace("_", "-"), type=type(f.default), default=f.default)
    p.add_argument("--log-every", type=int, default=500)
    args = vars(p.parse_args(argv))
    log_every = args.pop("log_every")
    args["actions"] = tuple(args["actions"])
    r = experiments.conditioning(experiments.ConditioningSetup(**args), log_every=log_every)
    for row in r.pop("rows"):
        print(json.dumps(row))
    print(json.dumps(r, indent=2))


if __name__ == "__main__":
    main()
