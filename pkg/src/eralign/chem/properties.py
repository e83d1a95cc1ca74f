"""Molecular properties: ring count, circular fingerprints, Tanimoto similarity."""

from __future__ import annotations

import csv
import hashlib
from dataclasses import dataclass
from pathlib import Path

from eralign.chem.crippen import crippen_logp, crippen_mr
from eralign.chem.smiles import AROMATIC, MolGraph, parse_smiles
from eralign.errors import InvalidArgument, PropertyError

FP_BITS = 2048
FP_RADIUS = 2


def ring_count(mol: MolGraph) -> int:
    """Cyclomatic number: bonds - atoms + connected components."""
    return mol.n_bonds - mol.n_atoms + mol.n_components


@dataclass(frozen=True)
class Fingerprint:
    bits: int  # bit i set <=> feature i present
    n_bits: int = FP_BITS

    @classmethod
    def from_bits(cls, on_bits, n_bits: int = FP_BITS) -> "Fingerprint":
        value = 0
        for b in on_bits:
            if not 0 <= b < n_bits:
                raise InvalidArgument(f"bit {b} outside fingerprint of length {n_bits}")
            value |= 1 << b
        return cls(value, n_bits)

    @property
    def count(self) -> int:
        return self.bits.bit_count()

    def on_bits(self) -> list[int]:
        return [i for i in range(self.n_bits) if self.bits >> i & 1]


def _hash(*parts) -> int:
    data = repr(parts).encode()
    return int.from_bytes(hashlib.blake2b(data, digest_size=8).digest(), "little")


def _bond_code(order: float) -> int:
    return 4 if order == AROMATIC else int(order)


def fingerprint(mol: MolGraph, radius: int = FP_RADIUS, n_bits: int = FP_BITS) -> Fingerprint:
    """Hashed circular atom environments of radius 0..radius.

    Atom invariants are (element, heavy degree, charge, aromatic flag); each
    iteration folds in the sorted (bond, neighbour identifier) list, so the
    result does not depend on atom input order.
    """
    ids = [_hash(0, a.atomic_number, mol.degree(i), a.charge, a.aromatic) for i, a in enumerate(mol.atoms)]
    features = set(ids)
    for r in range(1, radius + 1):
        ids = [
            _hash(r, ids[i], tuple(sorted((_bond_code(mol.bonds[k].order), ids[j]) for j, k in mol.neighbors[i])))
            for i in range(mol.n_atoms)
        ]
        features.update(ids)
    return Fingerprint.from_bits({f % n_bits for f in features}, n_bits)


def tanimoto(a: Fingerprint, b: Fingerprint) -> float:
    if a.n_bits != b.n_bits:
        raise InvalidArgument(f"fingerprint lengths differ: {a.n_bits} vs {b.n_bits}")
    union = (a.bits | b.bits).bit_count()
    if union == 0:
        return 1.0
    return (a.bits & b.bits).bit_count() / union


def smiles_tanimoto(a: str, b: str) -> float:
    ma, mb = parse_smiles(a), parse_smiles(b)
    if not (ma.valid and mb.valid):
        raise PropertyError("Tanimoto similarity needs two valid molecules")
    return tanimoto(fingerprint(ma), fingerprint(mb))


class PropertyTable:
    """Precomputed properties keyed by SMILES (CSV header: smiles, property_name, value)."""

    def __init__(self, values: dict[tuple[str, str], float] | None = None):
        self.values = dict(values or {})

    @classmethod
    def read_csv(cls, path) -> "PropertyTable":
        with open(Path(path), newline="") as f:
            reader = csv.DictReader(f)
            if not {"smiles", "property_name", "value"} <= set(reader.fieldnames or ()):
                raise InvalidArgument(f"{path}: expected header smiles,property_name,value")
            return cls({(r["smiles"], r["property_name"]): float(r["value"]) for r in reader})

    def lookup(self, smiles: str, name: str) -> float:
        try:
            return self.values[(smiles, name)]
        except KeyError:
            raise PropertyError(f"no precomputed {name} for {smiles!r}") from None


NATIVE_PROPERTIES = {"ring_count": ring_count, "logp": crippen_logp, "mr": crippen_mr}


def compute_property(name: str, mol: MolGraph, table: PropertyTable | None = None) -> float:
    if name in NATIVE_PROPERTIES:
        return float(NATIVE_PROPERTIES[name](mol))
    if table is not None:
        return table.lookup(mol.smiles, name)
    raise PropertyError(f"property {name!r} is not computed natively and no property table was given")
