"""Wildman-Crippen LogP and molar refractivity from per-atom contributions."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources

from eralign.chem.smarts import ExpandedGraph, Pattern
from eralign.chem.smiles import MolGraph
from eralign.errors import PropertyError


@dataclass(frozen=True)
class AtomType:
    name: str
    pattern: Pattern
    logp: float
    mr: float


def read_contributions(path=None) -> tuple[AtomType, ...]:
    """Load the ordered contribution table (``atom_type, pattern, logp_contrib, mr_contrib``)."""
    if path is None:
        text = resources.files("eralign.chem").joinpath("data/crippen.csv").read_text()
    else:
        with open(path) as f:
            text = f.read()
    lines = [ln for ln in text.splitlines() if ln.strip() and not ln.startswith("#")]
    rows = csv.DictReader(lines)
    return tuple(
        AtomType(r["atom_type"], Pattern(r["pattern"]), float(r["logp_contrib"]), float(r["mr_contrib"] or 0.0))
        for r in rows
    )


@lru_cache(maxsize=1)
def default_table() -> tuple[AtomType, ...]:
    return read_contributions()


def atom_types(mol: MolGraph, table=None) -> list[AtomType]:
    """Type of every atom in the hydrogen-expanded graph (heavy atoms first, then H)."""
    table = table or default_table()
    g = ExpandedGraph(mol)
    out = []
    for idx in range(len(g.nodes)):
        for t in table:
            if t.pattern.matches_at(g, idx):
                out.append(t)
                break
        else:
            raise PropertyError(f"no Wildman-Crippen type for atom {idx} (Z={g.nodes[idx].z})")
    return out


def crippen_contribs(mol: MolGraph, table=None) -> tuple[float, float]:
    types = atom_types(mol, table)
    return sum(t.logp for t in types), sum(t.mr for t in types)


def crippen_logp(mol: MolGraph) -> float:
    return crippen_contribs(mol)[0]


def crippen_mr(mol: MolGraph) -> float:
    return crippen_contribs(mol)[1]
