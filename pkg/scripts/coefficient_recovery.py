"""Replication study: how often does the Cox fit recover the generating coefficients?"""

import argparse

import numpy as np

from survfix import Outcomes
from survfix.cox import fit_cox
from survfix.synth import SynthConfig, generate


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--reps", type=int, default=50)
    ap.add_argument("--n", type=int, default=2000)
    ap.add_argument("--censoring", type=float, default=0.3)
    ap.add_argument("--beta", type=float, nargs="+", default=[0.5, -0.5])
    args = ap.parse_args()

    truth = np.array(args.beta)
    est, inside, cens = [], [], []
    for seed in range(args.reps):
        ds = generate(SynthConfig(n_subjects=args.n, beta_true=tuple(truth), censoring=args.censoring, rng_seed=seed))
        fit = fit_cox(ds.frame[[f"x{i}" for i in range(truth.size)]],
                      Outcomes(ds.frame.time, ds.frame.event.astype(bool)), normalization="none")
        est.append(fit.beta)
        inside.append((np.log(fit.hr_ci_lower) <= truth) & (truth <= np.log(fit.hr_ci_upper)))
        cens.append(ds.censored_fraction)
    est, inside = np.array(est), np.array(inside)
    print(f"{args.reps} replications, n={args.n}, mean censoring {np.mean(cens):.3f}")
    for i, b in enumerate(truth):
        err = est[:, i] - b
        print(f"beta[{i}]={b:+.2f}  mean {est[:, i].mean():+.4f}  sd {est[:, i].std(ddof=1):.4f}  "
              f"|err|<=0.1 {np.mean(np.abs(err) <= 0.1):.2f}  CI coverage {inside[:, i].mean():.2f}")
    both = np.all(np.abs(est - truth) <= 0.1, axis=1) & inside.all(axis=1)
    print(f"replications with every coefficient within 0.1 and covered: {both.sum()}/{args.reps}")


if __name__ == "__main__":
    main()
