"""Quick look at the ten-stream delay/false-alarm trade-off.

Calibrates thresholds for the known-parameter and the double-mixture
detectors, then estimates the conditional delay for one to three affected
streams. The default budget is small so the script finishes in about a
minute; pass a larger one (e.g. ``--budget 100000``) for table-quality numbers.
"""

import argparse

from msqcd.sim import ExperimentConfig, run_experiment


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--budget", type=int, default=10_000)
    ap.add_argument("--seed", type=int, default=20240101)
    args = ap.parse_args()

    cfg = ExperimentConfig(budget=args.budget, seed=args.seed)
    print(f"N={cfg.n_streams}, S_n = n^{cfg.profile_gamma}, sigma={cfg.sigma}, theta={cfg.theta}, "
          f"grid {cfg.grid[0]}..{cfg.grid[1]}, {cfg.budget} replicates per cell\n")
    res = run_experiment(cfg)

    header = "detector  m " + "".join(f"{a:>10g}" for a in cfg.pfa_levels)
    print(header)
    print("-" * len(header))
    for det in cfg.detectors:
        for m in cfg.m_values:
            cells = [res.cell(det, m, a) for a in cfg.pfa_levels]
            print(f"{det:<9} {m} " + "".join(f"{c.add:10.2f}" for c in cells))
        print(f"{'(theory)':<9} - " + "".join(f"{res.cell(det, 1, a).add_theoretical:10.2f}" for a in cfg.pfa_levels))
    print("\nthresholds (R_pW):", ", ".join(f"{a:g}: {res.cell('R_pW', 1, a).threshold:.1f}" for a in cfg.pfa_levels))


if __name__ == "__main__":
    main()
