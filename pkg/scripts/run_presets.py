"""Run every preset (or the named ones) and print the headline diagnostics."""
import argparse
import time

from vnslab import config as cfgmod
from vnslab import runner


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("names", nargs="*", help="presets to run (default: all)")
    ap.add_argument("--out", default="runs")
    args = ap.parse_args()
    names = args.names or list(cfgmod.presets())
    for name in names:
        t0 = time.perf_counter()
        arts = runner.run(cfgmod.preset(name), f"{args.out}/{name}")
        s = arts.summary
        print(f"== {name}  {time.perf_counter() - t0:.1f} s  asserted pass: {s['all_asserted_pass']}")
        for pname, rec in s["probes"].items():
            flag = "*" if rec["asserted"] else " "
            print(f"  {flag} {pname:24s} {rec['lhs']:.3e} / {rec['rhs']:.3e}  pass={rec['pass']}")
        for col, fit in s["fits"].items():
            if "exponent" in fit:
                print(f"    fit {col:8s} {fit['kind']:5s} exponent {fit['exponent']:+.4f}  r2 {fit['r2']:.4f}")


if __name__ == "__main__":
    main()
