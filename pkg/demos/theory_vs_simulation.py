"""Compare the asymptotic curves with finite-size elastic-net fits.

Uses n + m = 1000 samples-plus-features, tanh features, noise 0.1 and a
signal that is half ones, half zeros. Five trials per point keep it quick;
the acceptance suite uses twenty.
"""
from rfcurves.cli import SweepConfig, run_compare


def main():
    cfg = SweepConfig(mode="compare", axis_values=(0.5, 1.0, 1.5), lam=1e-3, alpha=1e-2, trials=5, seed=1)
    for r in run_compare(cfg):
        print(
            f"gamma={r['gamma']:.2f}  train {r['train_theory']:.4f} vs {r['train_emp']:.4f} +- {r['train_se']:.4f}"
            f"  gen {r['gen_theory']:.4f} vs {r['gen_emp']:.4f} +- {r['gen_se']:.4f}"
        )


if __name__ == "__main__":
    main()
