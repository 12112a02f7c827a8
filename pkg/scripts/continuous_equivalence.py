#!/usr/bin/env python3
"""Step-size study for the continuous filter/gradient comparison on the
built-in continuous systems; prints per-dt deviations and measured orders.

Usage: python scripts/continuous_equivalence.py [--model pendulum-ct]
"""

import argparse

import numpy as np

from kalgrad.equivalence import check_continuous
from kalgrad.model import builtin


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--model", default="pendulum-ct", choices=["pendulum-ct", "linear-ct"])
    parser.add_argument("--horizon", type=float, default=1.0)
    parser.add_argument("--alpha", type=float, default=0.2)
    parser.add_argument("--eta0", type=float, default=0.5)
    parser.add_argument(
        "--dts", type=float, nargs="+", default=[1e-2, 1e-3, 1e-4]
    )
    args = parser.parse_args()

    model = builtin(args.model)
    result = check_continuous(
        model,
        model.init_state,
        0.5 * np.eye(model.dim_state),
        alpha=args.alpha,
        dts=args.dts,
        horizon=args.horizon,
        eta0=args.eta0,
    )
    print(f"{'dt':>10} {'max state dev':>15} {'max metric dev':>16}")
    for rep in result.reports:
        print(f"{rep.dt:>10.1e} {rep.max_state_dev:>15.3e} {rep.max_metric_dev:>16.3e}")
    print(f"measured order (state):  {result.order_state:.2f}")
    print(f"measured order (metric): {result.order_metric:.2f}")
    print(f"pass: {result.passed}")


if __name__ == "__main__":
    main()
