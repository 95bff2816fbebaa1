"""Fraction of nonzero coefficients and generalization error along lambda.

On a decade grid, the lambda that minimizes the generalization error lies
within one grid step of where the surviving fraction drops below one half.
"""
from rfcurves.cli import SweepConfig, run_sparsity_sweep

LAMBDAS = (1e-5, 1e-4, 1e-3, 1e-2, 1e-1, 1.0)


def main():
    for gamma in (0.3, 0.9, 1.5):
        rows = run_sparsity_sweep(
            SweepConfig(mode="sparsity", sweep_axis="lambda", axis_values=LAMBDAS, gamma=gamma, alpha=1e-3, empirical=False)
        )
        best = min(rows, key=lambda r: r["gen_theory"])
        print(f"gamma={gamma}")
        for r in rows:
            mark = "  <- lowest gen error" if r is best else ""
            print(f"  lambda={r['lambda']:<7g} nonzero/m={r['nonzero_over_m']:.3f} gen={r['gen_theory']:.4f}{mark}")


if __name__ == "__main__":
    main()
