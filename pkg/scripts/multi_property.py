"""Ring count plus LogP alignment at increasing LogP weights; prints mean properties per weight."""

import argparse
import json
from pathlib import Path

from eralign.model.policy import SequencePolicy
from eralign.pipeline.experiments import DeskScale, multi_property_sweep, reference_policy


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--betas", type=float, nargs="+", default=[0.05, 0.3, 2.0])
    ap.add_argument("--reference", help="reuse a pretrained checkpoint")
    ap.add_argument("--out", default="runs/multi_property")
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    scale = DeskScale()
    if args.reference:
        reference = SequencePolicy.load(args.reference)
    else:
        reference, _ = reference_policy(scale, args.seed)
    rows = []
    for beta, report in zip(args.betas, multi_property_sweep(reference, scale, args.seed, betas=tuple(args.betas))):
        report.write(out / f"metrics_logp_beta{beta:g}.json")
        rows.append({"logp_beta": beta, "validity": report.validity,
                     **{p: s.mean for p, s in report.properties.items()}})
    print(json.dumps(rows, indent=1))


if __name__ == "__main__":
    main()
