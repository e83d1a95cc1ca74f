"""Small molecule corpora built from parameterized families.

``alkanes`` and ``alcohols`` are enumerated in a fixed order (size first);
``rings`` and ``mixed`` are sampled by joining ring and chain blocks with a
seeded generator. Every emitted string parses as a valid molecule.
"""

from __future__ import annotations

import itertools

import numpy as np

from eralign.chem.properties import ring_count
from eralign.chem.smiles import parse_smiles
from eralign.errors import ConfigError

FAMILIES = ("alkanes", "alcohols", "rings", "mixed")
MAX_CARBONS = 14

# (smiles, rings)
RING_BLOCKS = (
    ("C1CC1", 1), ("C1CCC1", 1), ("C1CCCC1", 1), ("C1CCCCC1", 1), ("C1CCCCCC1", 1),
    ("c1ccccc1", 1), ("c1ccncc1", 1), ("c1ccoc1", 1), ("c1ccsc1", 1), ("C1CCNCC1", 1),
    ("C1CCOCC1", 1), ("C1CCOC1", 1), ("c1cc[nH]c1", 1),
    ("c1ccc2ccccc2c1", 2), ("C1CCC2CCCCC2C1", 2), ("c1ccc2c(c1)CCC2", 2), ("C1CC2CCC1C2", 2),
    ("c1ccc2[nH]ccc2c1", 2), ("c1ccc2occc2c1", 2),
    ("c1ccc2cc3ccccc3cc2c1", 3), ("C1CC2CCC3CCCC3C2C1", 3),
)
CHAIN_BLOCKS = ("C", "CC", "CCC", "CC(C)C", "C(C)(C)C", "CCCC", "OC", "CO", "CN", "NC", "C=C", "CC=C")
LINKERS = ("", "C", "CC", "O", "N", "C(=O)", "C(=O)N", "OC")
END_GROUPS = ("", "", "O", "N", "F", "Cl", "C", "C(=O)O", "C#N", "Br", "OC")


def _alkane_skeletons():
    """Linear chains by size, then singly branched isomers (methyl, ethyl)."""
    for n in range(1, MAX_CARBONS + 1):
        yield "C" * n
        seen = set()
        for branch in ("C", "CC"):
            b = len(branch)
            main = n - b
            for pos in range(2, main):
                # branch on carbon ``pos`` of the main chain, at least b carbons from
                # either end so the main chain stays the longest; skip mirror images
                if pos - 1 < b or main - pos < b or pos > main + 1 - pos:
                    continue
                smi = "C" * pos + f"({branch})" + "C" * (main - pos)
                if smi not in seen:
                    seen.add(smi)
                    yield smi


def _alcohols():
    for skel in _alkane_skeletons():
        yield skel + "O"
        if len(skel) > 2 and "(" not in skel:
            yield skel[:1] + "C(O)" + skel[2:]


def _enumerate(gen, size):
    out = list(itertools.islice(gen, size))
    if len(out) < size:
        raise ConfigError(f"family has only {len(out)} members, asked for {size}")
    return out


def _ring_total(parts) -> int:
    return sum(r for _, r in parts)


def random_molecule(rng: np.random.Generator, min_rings: int = 0, max_rings: int = 3) -> str:
    """Join 1-3 ring/chain blocks with linkers, then cap with an end group."""
    while True:
        n_blocks = int(rng.integers(1, 4))
        parts = []
        for _ in range(n_blocks):
            if rng.random() < 0.55:
                parts.append(RING_BLOCKS[int(rng.integers(len(RING_BLOCKS)))])
            else:
                parts.append((CHAIN_BLOCKS[int(rng.integers(len(CHAIN_BLOCKS)))], 0))
        if not min_rings <= _ring_total(parts) <= max_rings:
            continue
        smi = parts[0][0]
        for block, _ in parts[1:]:
            smi += LINKERS[int(rng.integers(len(LINKERS)))] + block
        smi += END_GROUPS[int(rng.integers(len(END_GROUPS)))]
        if parse_smiles(smi).valid:
            return smi


def _sample(rng, size, min_rings, max_tries_factor=200):
    out, seen = [], set()
    for _ in range(size * max_tries_factor):
        smi = random_molecule(rng, min_rings=min_rings)
        if smi not in seen:
            seen.add(smi)
            out.append(smi)
            if len(out) == size:
                return out
    raise ConfigError(f"could not draw {size} distinct molecules")


def generate_corpus(family: str, size: int, seed: int) -> list[str]:
    if size < 1:
        raise ConfigError("corpus size must be at least 1")
    if family == "alkanes":
        return _enumerate(_alkane_skeletons(), size)
    if family == "alcohols":
        return _enumerate(_alcohols(), size)
    rng = np.random.default_rng(seed)
    if family == "rings":
        return _sample(rng, size, min_rings=1)
    if family == "mixed":
        return _sample(rng, size, min_rings=0)
    raise ConfigError(f"unknown corpus family {family!r}; choose from {', '.join(FAMILIES)}")


def corpus_ring_counts(corpus) -> list[int]:
    return [ring_count(parse_smiles(s)) for s in corpus]
