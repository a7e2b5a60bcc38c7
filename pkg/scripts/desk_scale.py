"""Train fixed/nash/aligned on synthetic genres and measure held-out loss and genre controllability.

    python scripts/desk_scale.py --out results/desk.json --save-dir results/models
    python scripts/desk_scale.py --steps 200 --clips 20 --modes fixed   # quick smoke run
"""

import argparse
import json
from dataclasses import fields
from pathlib import Path

from gcdance.experiments import DeskScaleConfig, run_desk_scale


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--out", default="results/desk_scale.json")
    p.add_argument("--save-dir", default=None, help="write one checkpoint per mode here")
    for f in fields(DeskScaleConfig):
        if isinstance(f.default, tuple):
            p.add_argument(f"--{f.name.replace('_', '-')}", nargs="+", default=None,
                           type={"genres": int, "weights": float}.get(f.name, str))
        else:
            p.add_argument(f"--{f.name.replace('_', '-')}", type=type(f.default), default=None)
    args = p.parse_args()
    overrides = {f.name: getattr(args, f.name) for f in fields(DeskScaleConfig) if getattr(args, f.name) is not None}
    overrides = {k: tuple(v) if isinstance(v, list) else v for k, v in overrides.items()}
    result = run_desk_scale(DeskScaleConfig(**overrides))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(result.summary(), indent=1, sort_keys=True) + "\n")
    if args.save_dir:
        for mode, model in result.models.items():
            model.save(Path(args.save_dir) / mode)
    print(f"best mode {result.best_mode}; summary in {out}")


if __name__ == "__main__":
    main()
