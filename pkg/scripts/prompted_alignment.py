"""Prompted generation: fine-tune on one-token edits, align with similarity plus LogP energy, report per-prompt deltas."""

import argparse
import json
from pathlib import Path

from eralign.pipeline.experiments import (
    DeskScale,
    PromptedScale,
    held_out_prompts,
    prompted_alignment,
    prompted_reference,
    reference_policy,
)
from eralign.pipeline.metrics import identical_fraction, prompt_deltas


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="runs/prompted")
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    scale, pscale = DeskScale(), PromptedScale()
    reference, corpus = reference_policy(scale, args.seed)
    sft = prompted_reference(reference, corpus, scale, pscale, args.seed)
    sft.save(out / "prompted_reference.npz")
    prompts = held_out_prompts(corpus, pscale)
    before, after = prompted_alignment(sft, prompts, pscale, scale.k, args.seed)
    before.write(out / "metrics_reference.json")
    after.write(out / "metrics_aligned.json")
    deltas = prompt_deltas(after, before, "logp")
    print(json.dumps({
        "deltas": dict(zip(prompts.texts(), deltas)),
        "positive_fraction": sum(d is not None and d > 0 for d in deltas) / len(deltas),
        "identical_reference": identical_fraction(before),
        "identical_aligned": identical_fraction(after),
    }, indent=1))


if __name__ == "__main__":
    main()
