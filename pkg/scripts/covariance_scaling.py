"""Median-of-means ``1/det`` of the covariance matrix over shrinking horizons, with the fitted slope."""
import argparse

from hypokinetic.model import builtin_kinetic_model, free_model
from hypokinetic.subordinator import StableFamily, SubordinatorSpec, TemperedStableFamily, ZeroFamily
from hypokinetic.verify.probes import covariance_scaling_probe


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--model", choices=("free", "quadratic", "quartic"), default="free")
    ap.add_argument("--family", choices=("zero", "stable", "tempered"), default="stable")
    ap.add_argument("--alpha", type=float, default=0.5)
    ap.add_argument("--paths", type=int, default=10_000)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    fam = {"zero": ZeroFamily(), "stable": StableFamily(args.alpha), "tempered": TemperedStableFamily(args.alpha)}[args.family]
    drift = 1.0 if args.family == "zero" else 0.0
    if args.model == "free":
        model, spec, x0 = free_model(1), SubordinatorSpec((drift,), (fam,)), [0.0]
    else:
        model = builtin_kinetic_model(args.model, 1)
        spec, x0 = SubordinatorSpec.for_kinetic(1, fam, drift=drift), [0.0, 0.0]
    ts = [2.0**-k for k in range(2, 8)]
    r = covariance_scaling_probe(model, spec, x0, ts, args.paths, seed=args.seed)
    for row in r.table:
        print("  ".join(f"{k}={v:.4g}" if isinstance(v, float) else f"{k}={v}" for k, v in row.items()))
    print(f"slope {r.estimate:.3f} (bound {r.threshold:.2f}) -> {r.verdict}")


if __name__ == "__main__":
    main()
