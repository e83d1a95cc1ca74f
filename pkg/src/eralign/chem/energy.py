"""Energy functions over generated SMILES, in reduced units.

Every string maps to a finite energy: sequences that fail to parse, or whose
property cannot be evaluated, receive a property-specific fallback.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from eralign.chem.properties import PropertyTable, compute_property, fingerprint, tanimoto
from eralign.chem.smiles import parse_smiles
from eralign.errors import InvalidArgument, PropertyError

INVALID_ENERGY = {"tanimoto": 10.0, "qed": 4.5, "logp": 300.0, "mr": 400.0, "ring_count": 70.0}
NEGLOG_CLAMP = {"qed": 4.5, "tanimoto": 10.0}
IDENTITY_PENALTY = 3.5


def _default_invalid(prop: str, given):
    if given is not None:
        return float(given)
    if prop not in INVALID_ENERGY:
        raise InvalidArgument(f"no default invalid-sequence energy for property {prop!r}; set invalid_energy")
    return INVALID_ENERGY[prop]


@dataclass(frozen=True)
class Harmonic:
    """(f - mu)^2 / (2 sigma^2)."""

    property: str
    mu: float
    sigma: float = 1.0
    invalid_energy: float | None = None

    def __post_init__(self):
        if not self.sigma > 0:
            raise InvalidArgument("harmonic sigma must be positive")
        object.__setattr__(self, "invalid_energy", _default_invalid(self.property, self.invalid_energy))


@dataclass(frozen=True)
class NegLog:
    """min(-log f, clamp), with f = 0 mapped to the clamp."""

    property: str
    clamp: float | None = None
    invalid_energy: float | None = None

    def __post_init__(self):
        clamp = self.clamp if self.clamp is not None else NEGLOG_CLAMP.get(self.property)
        if clamp is None or not clamp > 0:
            raise InvalidArgument("neglog clamp must be positive")
        object.__setattr__(self, "clamp", float(clamp))
        object.__setattr__(self, "invalid_energy", _default_invalid(self.property, self.invalid_energy))


@dataclass(frozen=True)
class Composite:
    """Sum of beta_i * U_i."""

    terms: tuple = field(default_factory=tuple)  # ((beta, spec), ...)

    def __post_init__(self):
        terms = tuple((float(b), s) for b, s in self.terms)
        if not terms or any(b <= 0 for b, _ in terms):
            raise InvalidArgument("composite energy needs terms with positive weights")
        object.__setattr__(self, "terms", terms)


@dataclass(frozen=True)
class Prompted:
    """beta_sim * U_sim(y, x) + beta_prop * U_prop(y) for a prompt molecule x.

    U_sim is -log Tanimoto(y, x) clamped at ``similarity_clamp``; an exact match
    (similarity 1.0) costs ``identity_penalty`` instead of 0.
    """

    property_spec: object
    similarity_beta: float = 1.0
    property_beta: float = 1.0
    identity_penalty: float = IDENTITY_PENALTY
    similarity_clamp: float = NEGLOG_CLAMP["tanimoto"]
    similarity_invalid: float = INVALID_ENERGY["tanimoto"]

    def __post_init__(self):
        if self.similarity_beta <= 0 or self.property_beta <= 0:
            raise InvalidArgument("prompted energy weights must be positive")


EnergySpec = Harmonic | NegLog | Composite | Prompted


def harmonic_energy(f: float, mu: float, sigma: float) -> float:
    return (f - mu) ** 2 / (2.0 * sigma**2)


def neglog_energy(f: float, clamp: float) -> float:
    if f <= 0:
        return clamp
    return min(-math.log(f), clamp)


def similarity_energy(spec: Prompted, mol, prompt_fp) -> float:
    if mol is None:
        return spec.similarity_invalid
    sim = tanimoto(fingerprint(mol), prompt_fp)
    if sim == 1.0:
        return spec.identity_penalty
    return neglog_energy(sim, spec.similarity_clamp)


def _evaluate(spec, mol, prompt_fp, table) -> float:
    if isinstance(spec, Composite):
        return sum(b * _evaluate(s, mol, prompt_fp, table) for b, s in spec.terms)
    if isinstance(spec, Prompted):
        if prompt_fp is None:
            raise InvalidArgument("prompted energy needs a prompt")
        return spec.similarity_beta * similarity_energy(spec, mol, prompt_fp) + spec.property_beta * _evaluate(
            spec.property_spec, mol, prompt_fp, table
        )
    if mol is None:
        return spec.invalid_energy
    if spec.property == "tanimoto":
        if prompt_fp is None:
            raise InvalidArgument("tanimoto energy needs a prompt")
        f = tanimoto(fingerprint(mol), prompt_fp)
    else:
        try:
            f = compute_property(spec.property, mol, table)
        except PropertyError:
            return spec.invalid_energy
    if isinstance(spec, Harmonic):
        return harmonic_energy(f, spec.mu, spec.sigma)
    return neglog_energy(f, spec.clamp)


def evaluate_energy(spec, generated: str, prompt: str | None = None, table: PropertyTable | None = None) -> float:
    """Energy of ``generated`` (optionally relative to ``prompt``); finite for every input string."""
    mol = parse_smiles(generated)
    prompt_fp = None
    if prompt is not None:
        pm = parse_smiles(prompt)
        if not pm.valid:
            raise InvalidArgument(f"prompt {prompt!r} is not a valid molecule: {pm.reason}")
        prompt_fp = fingerprint(pm)
    elif _needs_prompt(spec):
        raise InvalidArgument("this energy needs a prompt")
    return float(_evaluate(spec, mol if mol.valid else None, prompt_fp, table))


def _needs_prompt(spec) -> bool:
    if isinstance(spec, Prompted):
        return True
    if isinstance(spec, Composite):
        return any(_needs_prompt(s) for _, s in spec.terms)
    return spec.property == "tanimoto"


# -- (de)serialization for config files ------------------------------------------------


def spec_from_dict(d: dict):
    d = dict(d)
    kind = d.pop("kind", None)
    if kind == "harmonic":
        return Harmonic(**d)
    if kind == "neglog":
        return NegLog(**d)
    if kind == "composite":
        return Composite(tuple((t["beta"], spec_from_dict(t["spec"])) for t in d["terms"]))
    if kind == "prompted":
        d["property_spec"] = spec_from_dict(d["property_spec"])
        return Prompted(**d)
    raise InvalidArgument(f"unknown energy kind {kind!r}")


def spec_to_dict(spec) -> dict:
    if isinstance(spec, Harmonic):
        return {"kind": "harmonic", "property": spec.property, "mu": spec.mu, "sigma": spec.sigma,
                "invalid_energy": spec.invalid_energy}
    if isinstance(spec, NegLog):
        return {"kind": "neglog", "property": spec.property, "clamp": spec.clamp, "invalid_energy": spec.invalid_energy}
    if isinstance(spec, Composite):
        return {"kind": "composite", "terms": [{"beta": b, "spec": spec_to_dict(s)} for b, s in spec.terms]}
    if isinstance(spec, Prompted):
        return {
            "kind": "prompted",
            "property_spec": spec_to_dict(spec.property_spec),
            "similarity_beta": spec.similarity_beta,
            "property_beta": spec.property_beta,
            "identity_penalty": spec.identity_penalty,
            "similarity_clamp": spec.similarity_clamp,
            "similarity_invalid": spec.similarity_invalid,
        }
    raise InvalidArgument(f"not an energy spec: {spec!r}")


def spec_properties(spec) -> list[str]:
    """Property names a spec depends on, in order of appearance."""
    if isinstance(spec, Composite):
        out = []
        for _, s in spec.terms:
            out += [p for p in spec_properties(s) if p not in out]
        return out
    if isinstance(spec, Prompted):
        return spec_properties(spec.property_spec)
    return [spec.property]
