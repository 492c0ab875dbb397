"""Pure ML against a physics-informed hybrid when training data runs out.

Trains a deep ensemble on (a) 80% of a synthetic dataset and (b) just nine
points, with and without a Biasi base model, and prints the test metrics.
With nine points the pure network has almost nothing to go on while the
hybrid only needs to learn a small correction to the correlation.

    python3 demos/data_scarcity.py --epochs 60
"""
import argparse
from dataclasses import replace

from chf_hybrid.dataset import shuffle_split, synth_generate
from chf_hybrid.hybrid import ExperimentConfig, run_experiment
from chf_hybrid.seeding import derive_seed

ap = argparse.ArgumentParser()
ap.add_argument("--seed", type=int, default=0)
ap.add_argument("--epochs", type=int, default=60, help="ensemble epochs (250 for the full protocol)")
ap.add_argument("--members", type=int, default=20)
args = ap.parse_args()

records = synth_generate(9188, seed=derive_seed(args.seed, "synth"))
template = ExperimentConfig(master_seed=args.seed, ensemble_epochs=args.epochs, n_members=args.members)
split = shuffle_split(records, seed=template.seeds()["split"])

print(f"{'model':<14} {'scenario':<10} {'mu_error':>9} {'mean rStd':>10} {'R2':>8}")
for scenario in ("plentiful", "limited"):
    for base in ("none", "biasi"):
        res = run_experiment(replace(template, base=base, scenario=scenario), records, split)
        m = res.metrics
        label = "pure ML" if base == "none" else f"{base} hybrid"
        print(f"{label:<14} {scenario:<10} {m.mu_error:8.2f}% {m.mean_rstd:9.2f}% {m.r2:8.4f}", flush=True)
