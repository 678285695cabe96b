"""Cached Catch runs shared by the ordering and ablation acceptance checks.

Run ``python tests/ordering_runs.py`` once to fill ``runs/acceptance``; the
acceptance tests reuse finished runs whose manifest matches the config hash,
seed and package version, and train any that are missing.
"""

from pathlib import Path

from avrl.config import parse_config
from avrl.runner import train_run

ROOT = Path(__file__).resolve().parent.parent / "runs" / "acceptance"
SEEDS = (0, 1, 2, 3, 4)
VARIANTS = {
    "sugarl": {},
    "random_view": {"kind": "random_view"},
    "single_policy": {"kind": "single_policy"},
    "unbalanced": {"balance": False},
    "positive": {"reward_sign": "positive"},
}


def base_config():
    # Catch, 20x20 fovea, no periphery, 200k steps under the desk preset
    return parse_config(text="[env]\nname = catch\nfovea = 20\nperipheral = false\n",
                        preset="desk")


def variant_config(name):
    return base_config().replace(agent=VARIANTS[name])


def variant_run(name, seed):
    return train_run(variant_config(name), seed, ROOT / name / f"seed_{seed}", resume=True)


def all_runs():
    return {name: {s: variant_run(name, s) for s in SEEDS} for name in VARIANTS}


if __name__ == "__main__":
    import time

    for seed in SEEDS:
        for name in VARIANTS:
            t = time.time()
            res = variant_run(name, seed)
            print(f"{name} seed={seed} final10={res.final_return():.2f} "
                  f"reused={res.reused} {time.time() - t:.0f}s", flush=True)
