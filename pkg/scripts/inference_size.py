"""Empirical size of the chi-square test of gamma = gamma* with undersmoothing.

    python scripts/inference_size.py --reps 200 --exponent 0.25
"""
import argparse
import sys

import numpy as np

from frdct.estimator import EstimationConfig
from frdct.simulate import DgpConfig, run_monte_carlo


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--reps", type=int, default=200)
    ap.add_argument("--n", type=int, default=1000)
    ap.add_argument("--exponent", type=float, default=0.25)
    ap.add_argument("--scale", type=float, default=2.0)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--jobs", type=int, default=1)
    a = ap.parse_args(argv)
    est = EstimationConfig(bandwidth_constant=a.scale, bandwidth_exponent=a.exponent, covariance=True)
    rep = run_monte_carlo(DgpConfig(n=a.n, seed=a.seed), a.reps, estimators=("semiparametric",),
                          parallelism=a.jobs, est_config=est)
    rows = [o for o in rep.extras if "vcov" in o]
    p = np.array([o["wald_p"] for o in rows])
    se = np.array([np.sqrt(np.diag(o["vcov"])) for o in rows])
    print(f"bias {np.round(rep.bias, 3)} sd {np.round(rep.sd, 3)} median se {np.round(np.median(se, 0), 3)}")
    print(f"rejection at 5%: {np.mean(p < 0.05):.3f} over {len(rows)} runs")
    return 0


if __name__ == "__main__":
    sys.exit(main())
