"""Sample statistics: validity, property histograms, diversity and per-prompt means."""

from __future__ import annotations

import itertools
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from eralign.chem.properties import PropertyTable, compute_property, fingerprint, tanimoto
from eralign.chem.smiles import parse_smiles
from eralign.errors import InvalidArgument, PropertyError

N_BINS = 30
# fixed histogram ranges; values outside are counted in the edge bins
HIST_RANGES = {
    "ring_count": (-0.5, 5.5),
    "logp": (-5.0, 10.0),
    "mr": (0.0, 150.0),
    "qed": (0.0, 1.0),
    "tanimoto": (0.0, 1.0),
}
METRICS_VERSION = 1


@dataclass
class Histogram:
    lo: float
    hi: float
    counts: list

    @classmethod
    def of(cls, values, lo: float, hi: float, bins: int = N_BINS) -> "Histogram":
        v = np.clip(np.asarray(values, dtype=float), lo, hi)
        counts, _ = np.histogram(v, bins=bins, range=(lo, hi))
        return cls(lo, hi, counts.tolist())

    @property
    def total(self) -> int:
        return int(sum(self.counts))


@dataclass
class PropertySummary:
    mean: float
    std: float
    histogram: Histogram


@dataclass
class PromptSummary:
    prompt: str
    n_samples: int
    n_valid: int
    identical_fraction: float  # samples equal to the prompt string
    means: dict = field(default_factory=dict)


@dataclass
class MetricsReport:
    n_samples: int
    n_valid: int
    validity: float
    uniqueness: float
    properties: dict
    diversity: Histogram | None
    prompts: list
    version: int = METRICS_VERSION

    def to_dict(self) -> dict:
        return asdict(self)

    def write(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def from_dict(cls, d) -> "MetricsReport":
        props = {
            k: PropertySummary(v["mean"], v["std"], Histogram(**v["histogram"])) for k, v in d["properties"].items()
        }
        div = Histogram(**d["diversity"]) if d.get("diversity") else None
        return cls(
            d["n_samples"], d["n_valid"], d["validity"], d["uniqueness"], props, div,
            [PromptSummary(**p) for p in d["prompts"]], d.get("version", METRICS_VERSION),
        )

    @classmethod
    def read(cls, path) -> "MetricsReport":
        return cls.from_dict(json.loads(Path(path).read_text()))


def _summary(values, name) -> PropertySummary:
    lo, hi = HIST_RANGES.get(name, (min(values, default=0.0), max(values, default=1.0) + 1e-9))
    if not values:
        return PropertySummary(float("nan"), float("nan"), Histogram.of([], lo, hi))
    a = np.asarray(values, dtype=float)
    return PropertySummary(float(a.mean()), float(a.std()), Histogram.of(a, lo, hi))


def summarize_samples(
    groups,
    properties,
    table: PropertyTable | None = None,
    max_diversity_pairs: int = 200_000,
    rng: np.random.Generator | None = None,
) -> MetricsReport:
    """Report over ``groups``: a list of (prompt text, list of sampled SMILES)."""
    values = {p: [] for p in properties}
    fps = []
    all_smiles = []
    per_prompt = []
    n_valid = 0
    for prompt, samples in groups:
        means = {p: [] for p in properties}
        g_valid = 0
        for smi in samples:
            all_smiles.append(smi)
            mol = parse_smiles(smi)
            if not mol.valid:
                continue
            props = {}
            try:
                for p in properties:
                    props[p] = compute_property(p, mol, table)
            except PropertyError:
                continue  # counted as invalid: no property can be reported
            g_valid += 1
            fps.append(fingerprint(mol))
            for p in properties:
                values[p].append(props[p])
                means[p].append(props[p])
        n_valid += g_valid
        per_prompt.append(
            PromptSummary(
                prompt,
                len(samples),
                g_valid,
                float(np.mean([s == prompt for s in samples])) if samples else 0.0,
                {p: (float(np.mean(v)) if v else None) for p, v in means.items()},
            )
        )
    n = len(all_smiles)
    if n == 0:
        raise InvalidArgument("no samples to summarize")
    diversity = None
    if len(fps) >= 2:
        pairs = itertools.combinations(range(len(fps)), 2)
        n_pairs = len(fps) * (len(fps) - 1) // 2
        if n_pairs > max_diversity_pairs:
            rng = rng or np.random.default_rng(0)
            i = rng.integers(len(fps), size=max_diversity_pairs)
            j = (i + rng.integers(1, len(fps), size=max_diversity_pairs)) % len(fps)
            pairs = zip(i.tolist(), j.tolist())
        diversity = Histogram.of([tanimoto(fps[a], fps[b]) for a, b in pairs], *HIST_RANGES["tanimoto"])
    return MetricsReport(
        n_samples=n,
        n_valid=n_valid,
        validity=n_valid / n,
        uniqueness=len(set(all_smiles)) / n,
        properties={p: _summary(values[p], p) for p in properties},
        diversity=diversity,
        prompts=per_prompt,
    )


def emit_metrics(policy, prompts, n_samples: int, properties, seed: int, table=None, temperature: float = 1.0) -> MetricsReport:
    """Sample ``n_samples`` completions per prompt entry and summarize them."""
    if n_samples < 1:
        raise InvalidArgument("n_samples must be at least 1")
    rng = np.random.default_rng(seed)
    groups = []
    for p in prompts.prompts:
        samples = policy.sample_tokens(p, n_samples, rng, temperature)
        groups.append(("".join(p), ["".join(y) for y in samples]))
    return summarize_samples(groups, properties, table, rng=rng)


def prompt_deltas(aligned: MetricsReport, reference: MetricsReport, prop: str) -> list:
    """Per-prompt mean-property difference (aligned minus reference); None where either side has no valid sample."""
    if len(aligned.prompts) != len(reference.prompts):
        raise InvalidArgument("reports cover different prompt sets")
    out = []
    for a, r in zip(aligned.prompts, reference.prompts):
        if a.prompt != r.prompt:
            raise InvalidArgument("reports cover different prompt sets")
        ma, mr = a.means.get(prop), r.means.get(prop)
        out.append(None if ma is None or mr is None else ma - mr)
    return out


def identical_fraction(report: MetricsReport) -> float:
    total = sum(p.n_samples for p in report.prompts)
    return sum(p.identical_fraction * p.n_samples for p in report.prompts) / total
