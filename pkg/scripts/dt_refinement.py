"""Energy balance residual of the torus small-data run under time-step halving."""
import argparse
import math

from vnslab import config as cfgmod
from vnslab import runner
from vnslab.diagnostics import energy_balance_residual


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--T-end", type=float, default=2.0)
    ap.add_argument("--levels", type=int, default=3)
    ap.add_argument("--out", default="runs/dt_refinement")
    args = ap.parse_args()
    base = cfgmod.preset("torus-small-data")
    prev = None
    for k in range(args.levels):
        dt = base.time.dt / 2**k
        cfg = cfgmod.with_overrides(base, **{
            "time.dt": dt, "time.T_end": args.T_end, "monitors.jacobian_times": []})
        h = runner.read_csv(runner.run(cfg, f"{args.out}/{k}").csv_path)
        r = energy_balance_residual(h).lhs
        extra = "" if prev is None else f"  ratio {r / prev:.3f}  order {math.log2(prev / r):.2f}"
        print(f"dt={dt:.3e}  residual {r:.4e}{extra}")
        prev = r


if __name__ == "__main__":
    main()
