"""Command-line entry point: ``eralign <verb> [--config FILE] --seed N ...``.

Exit codes: 0 success, 2 configuration error, 3 convergence or training failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np
import yaml

from eralign.chem.energy import spec_from_dict, spec_properties
from eralign.chem.properties import PropertyTable
from eralign.errors import ConfigError, ConvergenceError, InvalidArgument, TrainingFailure
from eralign.model.policy import SequencePolicy
from eralign.pipeline.config import RunConfig, load_config, override
from eralign.pipeline.corpus import FAMILIES, generate_corpus
from eralign.pipeline.dataset import PromptSet, gen_preference_dataset, prompted_pairs, read_records, write_records
from eralign.pipeline.metrics import emit_metrics
from eralign.pipeline.run import pretrain_policy, run_align
from eralign.tabular import OptimizerConfig, load_instance, random_instance, verify_instance

log = logging.getLogger("eralign")

EXIT_OK, EXIT_CONFIG, EXIT_FAILURE = 0, 2, 3


def _base(args, task: str) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig(task=task)
    cfg = override(cfg, None, task=task, seed=args.seed)
    if getattr(args, "energy", None):
        try:
            cfg = override(cfg, None, energy=spec_from_dict(yaml.safe_load(args.energy)))
        except (InvalidArgument, TypeError, KeyError, AttributeError, yaml.YAMLError) as e:
            raise ConfigError(f"--energy: {e}") from None
    return cfg


def _table(cfg: RunConfig):
    return PropertyTable.read_csv(cfg.paths.property_table) if cfg.paths.property_table else None


def _prompts(cfg: RunConfig) -> PromptSet:
    if cfg.paths.prompts:
        cfg.require_paths(must_exist=("prompts",))
        return PromptSet.read(cfg.paths.prompts)
    return PromptSet.unprompted(cfg.dataset.groups)


def _write_lines(path, lines):
    text = "\n".join(lines) + "\n"
    if path:
        Path(path).write_text(text)
    else:
        sys.stdout.write(text)


# -- verbs -------------------------------------------------------------------------------


def cmd_tabular_verify(args) -> int:
    opt = OptimizerConfig(method=args.method, max_steps=args.max_steps)
    if args.instance:
        insts = [load_instance(args.instance)]
    else:
        if args.seed is None:
            raise ConfigError("--seed is required for random instances")
        rng = np.random.default_rng(args.seed)
        insts = [
            random_instance(rng, args.n_prompts, args.n_outcomes, args.beta, args.gamma) for _ in range(args.count)
        ]
    results = [verify_instance(inst, opt) for inst in insts]
    print(json.dumps(results if len(results) > 1 else results[0], indent=1))
    return EXIT_OK if all(r["converged"] for r in results) else EXIT_FAILURE


def cmd_gen_corpus(args) -> int:
    cfg = override(_base(args, "gen-corpus"), "corpus", family=args.family, size=args.size)
    corpus = generate_corpus(cfg.corpus.family, cfg.corpus.size, cfg.require_seed())
    _write_lines(args.out or cfg.paths.corpus, corpus)
    return EXIT_OK


def cmd_pretrain(args) -> int:
    cfg = _base(args, "pretrain")
    cfg = override(cfg, "paths", corpus=args.corpus, output=args.out)
    cfg = override(cfg, "pretrain", epochs=args.epochs, lr=args.lr, batch_size=args.batch_size)
    cfg = override(cfg, "model", layers=args.layers, heads=args.heads, width=args.width, max_len=args.max_len)
    cfg = override(cfg, "corpus", prompted_pairs=args.prompted_pairs)
    cfg.require_paths("output", must_exist=("corpus",))
    seed = cfg.require_seed()
    corpus = [s for s in Path(cfg.paths.corpus).read_text().split() if s]
    pairs = None
    if cfg.corpus.prompted_pairs:
        pairs = prompted_pairs(corpus, np.random.default_rng(seed), cfg.corpus.prompted_pairs)
    policy, report = pretrain_policy(corpus, cfg.model, cfg.pretrain, seed, pairs)
    policy.save(cfg.paths.output)
    log.info("epoch losses: %s", report.epoch_losses)
    return EXIT_OK


def cmd_gen_dataset(args) -> int:
    cfg = _base(args, "gen-dataset")
    cfg = override(cfg, "paths", reference=args.checkpoint, dataset=args.out, prompts=args.prompts,
                   property_table=args.property_table)
    cfg = override(cfg, "dataset", k=args.k, groups=args.groups)
    cfg.require_paths("dataset", must_exist=("reference",))
    if cfg.energy is None:
        raise ConfigError("an energy spec is required (--energy or config)")
    ref = SequencePolicy.load(cfg.paths.reference)
    records = gen_preference_dataset(ref, _prompts(cfg), cfg.energy, cfg.dataset.k, cfg.require_seed(), _table(cfg),
                                     cfg.sampling.temperature)
    write_records(cfg.paths.dataset, records)
    return EXIT_OK


def cmd_align(args) -> int:
    cfg = _base(args, "align")
    cfg = override(cfg, "paths", reference=args.reference, dataset=args.dataset, output=args.out, log=args.log)
    cfg = override(cfg, "align_opt", epochs=args.epochs, lr=args.lr, batch_size=args.batch_size)
    cfg = override(cfg, "align", mode=args.mode, beta=tuple(args.beta) if args.beta else None,
                   gamma=tuple(args.gamma) if args.gamma else None)
    cfg.require_paths("output", must_exist=("reference", "dataset"))
    seed = cfg.require_seed()
    ref = SequencePolicy.load(cfg.paths.reference)
    records = read_records(cfg.paths.dataset)
    grid = cfg.align.grid()
    for params in grid:
        out = Path(cfg.paths.output)
        logp = Path(cfg.paths.log) if cfg.paths.log else None
        if len(grid) > 1:
            tag = f"_b{params.beta:g}_g{params.gamma:g}"
            out = out.with_name(out.stem + tag + out.suffix)
            logp = logp.with_name(logp.stem + tag + logp.suffix) if logp else None
        _, run_log = run_align(ref, records, params, cfg.align_opt, seed, cfg.align.mode, cfg.align.dpo_temperature,
                               checkpoint_path=out)
        if logp:
            run_log.write(logp)
    return EXIT_OK


def cmd_sample(args) -> int:
    cfg = _base(args, "sample")
    cfg = override(cfg, "paths", checkpoint=args.checkpoint, output=args.out)
    cfg = override(cfg, "sampling", n_samples=args.n, temperature=args.temperature)
    cfg.require_paths(must_exist=("checkpoint",))
    policy = SequencePolicy.load(cfg.paths.checkpoint)
    rng = np.random.default_rng(cfg.require_seed())
    samples = policy.sample_tokens(args.prompt or "", cfg.sampling.n_samples, rng, cfg.sampling.temperature)
    _write_lines(cfg.paths.output, ["".join(s) for s in samples])
    return EXIT_OK


def cmd_metrics(args) -> int:
    cfg = _base(args, "metrics")
    cfg = override(cfg, "paths", checkpoint=args.checkpoint, output=args.out, prompts=args.prompts,
                   property_table=args.property_table)
    cfg = override(cfg, "sampling", n_samples=args.n, temperature=args.temperature,
                   properties=tuple(args.properties) if args.properties else None)
    cfg.require_paths("output", must_exist=("checkpoint",))
    policy = SequencePolicy.load(cfg.paths.checkpoint)
    prompts = PromptSet.read(cfg.paths.prompts) if cfg.paths.prompts else PromptSet.unprompted(1)
    props = list(cfg.sampling.properties)
    if cfg.energy is not None:
        props += [p for p in spec_properties(cfg.energy) if p not in props and p != "tanimoto"]
    report = emit_metrics(policy, prompts, cfg.sampling.n_samples, props, cfg.require_seed(), _table(cfg),
                          cfg.sampling.temperature)
    report.write(cfg.paths.output)
    return EXIT_OK


# -- argument parsing -----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="eralign", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="verb", required=True)

    def verb(name, func, seed_required=True, energy=False):
        p = sub.add_parser(name)
        p.add_argument("--config", help="YAML or JSON run config")
        p.add_argument("--seed", type=int, required=seed_required)
        if energy:
            p.add_argument("--energy", help="energy spec as inline YAML/JSON")
        p.set_defaults(func=func)
        return p

    p = verb("tabular-verify", cmd_tabular_verify, seed_required=False)
    p.add_argument("--instance", help="instance JSON file")
    p.add_argument("--count", type=int, default=1)
    p.add_argument("--n-prompts", type=int, default=2)
    p.add_argument("--n-outcomes", type=int, default=8)
    p.add_argument("--beta", type=float, default=1.0)
    p.add_argument("--gamma", type=float, default=0.0)
    p.add_argument("--method", choices=("newton", "gd"), default="newton")
    p.add_argument("--max-steps", type=int, default=50_000)

    p = verb("gen-corpus", cmd_gen_corpus)
    p.add_argument("--family", choices=FAMILIES)
    p.add_argument("--size", type=int)
    p.add_argument("--out")

    p = verb("pretrain", cmd_pretrain)
    p.add_argument("--corpus")
    p.add_argument("--out")
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--layers", type=int)
    p.add_argument("--heads", type=int)
    p.add_argument("--width", type=int)
    p.add_argument("--max-len", type=int)
    p.add_argument("--prompted-pairs", type=int, help="perturbation pairs per molecule for prompted training")

    p = verb("gen-dataset", cmd_gen_dataset, energy=True)
    p.add_argument("--checkpoint")
    p.add_argument("--out")
    p.add_argument("--prompts", help="file with one prompt SMILES per line")
    p.add_argument("--property-table")
    p.add_argument("--k", type=int)
    p.add_argument("--groups", type=int)

    p = verb("align", cmd_align)
    p.add_argument("--reference")
    p.add_argument("--dataset")
    p.add_argument("--out")
    p.add_argument("--log")
    p.add_argument("--mode", choices=("era", "dpo"))
    p.add_argument("--beta", type=float, nargs="+")
    p.add_argument("--gamma", type=float, nargs="+")
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", type=int)

    p = verb("sample", cmd_sample)
    p.add_argument("--checkpoint")
    p.add_argument("--prompt")
    p.add_argument("--n", type=int)
    p.add_argument("--temperature", type=float)
    p.add_argument("--out")

    p = verb("metrics", cmd_metrics, energy=True)
    p.add_argument("--checkpoint")
    p.add_argument("--prompts")
    p.add_argument("--property-table")
    p.add_argument("--properties", nargs="+")
    p.add_argument("--n", type=int)
    p.add_argument("--temperature", type=float)
    p.add_argument("--out")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (ConfigError, InvalidArgument, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (ConvergenceError, TrainingFailure) as e:
        print(f"failure: {e}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
