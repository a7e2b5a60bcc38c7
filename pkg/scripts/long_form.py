"""Stitch a long dance from a trained checkpoint and report seam smoothness.

    python scripts/long_form.py results/models/nash --seconds 12 --genre 0
"""

import argparse
import json

from gcdance.experiments import seam_report
from gcdance.model import GCDanceModel
from gcdance.motion import load_skeleton
from gcdance.training import synth_dataset


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("checkpoint")
    p.add_argument("--seconds", type=float, default=12.0)
    p.add_argument("--genre", type=int, default=0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--T", type=int, default=50)
    args = p.parse_args()
    model = GCDanceModel.load(args.checkpoint)
    k = int(round(args.seconds * 30)) + 60
    music = synth_dataset([args.genre], 1, k, 30, load_skeleton("smpl52"), seed=21).music[0]
    print(json.dumps(seam_report(model, music, args.genre, args.seconds, args.seed, args.T), indent=1))


if __name__ == "__main__":
    main()
