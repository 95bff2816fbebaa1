"""Asymptotic generalization error along gamma = m/n for a few ridge strengths.

Light ridge regularization leaves a spike at the interpolation threshold
gamma = 1; heavier ridge smooths it away. Prints one column per alpha.
"""
from rfcurves.cli import SweepConfig, run_theory_sweep

GAMMAS = tuple(round(0.2 + 0.1 * k, 10) for k in range(19))
ALPHAS = (1e-4, 1e-2, 1e-1)


def main():
    curves = {a: run_theory_sweep(SweepConfig(axis_values=GAMMAS, lam=1e-3, alpha=a)) for a in ALPHAS}
    print("gamma  " + "  ".join(f"alpha={a:<8g}" for a in ALPHAS))
    for i, g in enumerate(GAMMAS):
        print(f"{g:5.2f}  " + "  ".join(f"{curves[a][i]['gen_theory']:<14.5f}" for a in ALPHAS))


if __name__ == "__main__":
    main()
