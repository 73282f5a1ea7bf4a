"""How much weight the polynomial operator leaves on distant joints, per joint and scale.

For every joint of the COCO-17 skeleton and every scale k, prints the mean
weight that Â^k gives to the joint's 1-hop neighbours and to its k-hop
neighbours, next to the normalised hop operator.  The last line counts the
(joint, k) pairs where the polynomial operator favours the near joints.

    python scripts/bias_diagnostic.py --max-scale 4
"""

import argparse

from heatgait.graph import bias_report, coco17


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--max-scale", type=int, default=4)
    args = ap.parse_args()
    rep = bias_report(coco17(), args.max_scale)
    print(rep.to_table())
    biased = sum(r.poly_mean_d1 > r.poly_mean_dk for r in rep.rows)
    print(f"\npolynomial weight on 1-hop > k-hop for {biased}/{len(rep.rows)} (joint, k) pairs")


if __name__ == "__main__":
    main()
