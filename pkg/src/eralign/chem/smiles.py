"""Atom-wise SMILES tokenization and parsing to molecular graphs.

Supported dialect: organic-subset atoms, bracket atoms (isotope, chirality,
hydrogen count, charge, atom class), lowercase aromatic atoms, bonds
``- = # : / \\``, branches, ring closures (digits and ``%NN``) and ``.``
component separators. Stereo markers are tokenized but carry no structure.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

from eralign.chem.elements import AROMATIC_SYMBOLS, ATOMIC_NUMBER, ORGANIC_SUBSET, allowed_valences
from eralign.errors import TokenizationError

TOKEN_PATTERN = re.compile(
    r"(\[[^\[\]]*\]|Br|Cl|B|C|N|O|S|P|F|I|b|c|n|o|s|p|\(|\)|\.|=|#|-|\+|\\|/|:|~|@|\?|>|\*|\$|%[0-9]{2}|[0-9])"
)

BOND_SYMBOLS = {"-": 1.0, "=": 2.0, "#": 3.0, ":": 1.5, "/": 1.0, "\\": 1.0}
AROMATIC = 1.5


def tokenize_smiles(text: str) -> list[str]:
    """Split a SMILES string into atom-wise tokens; ``"".join(tokens) == text``."""
    tokens = []
    pos = 0
    while pos < len(text):
        if text[pos] == "[" and "]" not in text[pos:]:
            raise TokenizationError("unterminated bracket atom", pos)
        m = TOKEN_PATTERN.match(text, pos)
        if m is None:
            raise TokenizationError(f"unexpected character {text[pos]!r}", pos)
        tokens.append(m.group(0))
        pos = m.end()
    return tokens


@dataclass
class Atom:
    element: str
    aromatic: bool = False
    charge: int = 0
    explicit_h: int | None = None  # set for bracket atoms
    implicit_h: int = 0

    @property
    def atomic_number(self) -> int:
        return ATOMIC_NUMBER[self.element]

    @property
    def total_h(self) -> int:
        return self.implicit_h if self.explicit_h is None else self.explicit_h


@dataclass(frozen=True)
class Bond:
    begin: int
    end: int
    order: float  # 1, 2, 3 or 1.5 for aromatic

    @property
    def is_aromatic(self) -> bool:
        return self.order == AROMATIC


@dataclass
class MolGraph:
    atoms: list[Atom]
    bonds: list[Bond]
    smiles: str = ""
    neighbors: list[list[tuple[int, int]]] = field(default_factory=list, repr=False)
    valid: bool = field(default=True, init=False)

    def __post_init__(self):
        if not self.neighbors:
            self.neighbors = [[] for _ in self.atoms]
            for k, b in enumerate(self.bonds):
                self.neighbors[b.begin].append((b.end, k))
                self.neighbors[b.end].append((b.begin, k))

    @property
    def n_atoms(self) -> int:
        return len(self.atoms)

    @property
    def n_bonds(self) -> int:
        return len(self.bonds)

    @property
    def n_components(self) -> int:
        seen = [False] * self.n_atoms
        count = 0
        for start in range(self.n_atoms):
            if seen[start]:
                continue
            count += 1
            stack = [start]
            seen[start] = True
            while stack:
                a = stack.pop()
                for nb, _ in self.neighbors[a]:
                    if not seen[nb]:
                        seen[nb] = True
                        stack.append(nb)
        return count

    def degree(self, i: int) -> int:
        return len(self.neighbors[i])

    def ring_bonds(self) -> set[int]:
        """Indices of bonds lying on at least one cycle (non-bridges)."""
        n = self.n_atoms
        disc = [-1] * n
        low = [0] * n
        bridges = set()
        t = 0
        for root in range(n):
            if disc[root] != -1:
                continue
            disc[root] = low[root] = t
            t += 1
            stack = [(root, -1, iter(self.neighbors[root]))]
            while stack:
                v, via, it = stack[-1]
                advanced = False
                for nb, k in it:
                    if k == via:
                        continue
                    if disc[nb] == -1:
                        disc[nb] = low[nb] = t
                        t += 1
                        stack.append((nb, k, iter(self.neighbors[nb])))
                        advanced = True
                        break
                    low[v] = min(low[v], disc[nb])
                if advanced:
                    continue
                stack.pop()
                if stack:
                    parent = stack[-1][0]
                    low[parent] = min(low[parent], low[v])
                    if low[v] > disc[parent]:
                        bridges.add(via)
        return set(range(self.n_bonds)) - bridges

    def ring_atoms(self) -> set[int]:
        out = set()
        for k in self.ring_bonds():
            out.add(self.bonds[k].begin)
            out.add(self.bonds[k].end)
        return out


@dataclass
class InvalidSmiles:
    """Structured report for a string that does not describe a valid molecule."""

    smiles: str
    reason: str
    position: int | None = None
    valid: bool = field(default=False, init=False)


_BRACKET = re.compile(
    r"^\[(?P<iso>\d+)?(?P<sym>[A-Z][a-z]?|se|as|[bcnops])(?P<chiral>@{1,2})?"
    r"(?P<h>H\d?)?(?P<charge>\+\+|--|[+-]\d*)?(?::\d+)?\]$"
)


def _parse_bracket(tok: str):
    m = _BRACKET.match(tok)
    if m is None:
        return None
    sym = m.group("sym")
    aromatic = sym in AROMATIC_SYMBOLS
    element = AROMATIC_SYMBOLS.get(sym, sym)
    if element not in ATOMIC_NUMBER:
        return None
    h = m.group("h")
    n_h = 0 if h is None else (int(h[1:]) if len(h) > 1 else 1)
    c = m.group("charge")
    if c is None:
        charge = 0
    elif c in ("++", "--"):
        charge = 2 if c == "++" else -2
    else:
        mag = int(c[1:]) if len(c) > 1 else 1
        charge = mag if c[0] == "+" else -mag
    return Atom(element, aromatic, charge, explicit_h=n_h)


class _Invalid(Exception):
    def __init__(self, reason, position=None):
        super().__init__(reason)
        self.reason = reason
        self.position = position


def _build(text: str) -> MolGraph:
    try:
        tokens = tokenize_smiles(text)
    except TokenizationError as e:
        raise _Invalid(str(e), e.position) from None
    if not tokens:
        raise _Invalid("empty string", 0)

    atoms: list[Atom] = []
    bonds: list[Bond] = []
    bonded: set[tuple[int, int]] = set()
    branch_stack: list[int] = []
    open_rings: dict[str, tuple[int, float | None, int]] = {}
    prev: int | None = None
    pending: float | None = None
    pending_pos = 0
    pos = 0

    def add_bond(a, b, order, where):
        key = (min(a, b), max(a, b))
        if a == b or key in bonded:
            raise _Invalid("duplicate or self bond", where)
        bonded.add(key)
        if order is None:
            order = AROMATIC if atoms[a].aromatic and atoms[b].aromatic else 1.0
        bonds.append(Bond(a, b, order))

    last = None
    for tok in tokens:
        start = pos
        pos += len(tok)
        prev_tok, last = last, tok
        if tok in BOND_SYMBOLS:
            if prev is None or pending is not None:
                raise _Invalid("misplaced bond symbol", start)
            pending, pending_pos = BOND_SYMBOLS[tok], start
            continue
        if tok == "(":
            if prev is None or pending is not None:
                raise _Invalid("branch without a preceding atom", start)
            branch_stack.append(prev)
            continue
        if tok == ")":
            if not branch_stack or pending is not None or prev_tok == "(":
                raise _Invalid("unbalanced, empty or dangling branch", start)
            prev = branch_stack.pop()
            continue
        if tok == ".":
            if prev is None or pending is not None or branch_stack:
                raise _Invalid("misplaced component separator", start)
            prev = None
            continue
        if tok[0] == "%" or tok.isdigit():
            if prev is None:
                raise _Invalid("ring closure without an atom", start)
            if tok in open_rings:
                other, order, opos = open_rings.pop(tok)
                if order is not None and pending is not None and order != pending:
                    raise _Invalid("conflicting ring-closure bond orders", start)
                add_bond(other, prev, pending if pending is not None else order, start)
            else:
                open_rings[tok] = (prev, pending, start)
            pending = None
            continue
        if tok.startswith("["):
            atom = _parse_bracket(tok)
            if atom is None:
                raise _Invalid(f"unsupported bracket atom {tok}", start)
        elif tok in ORGANIC_SUBSET:
            atom = Atom(tok)
        elif tok in AROMATIC_SYMBOLS:
            atom = Atom(AROMATIC_SYMBOLS[tok], aromatic=True)
        else:
            raise _Invalid(f"unsupported token {tok!r}", start)
        atoms.append(atom)
        idx = len(atoms) - 1
        if prev is not None:
            add_bond(prev, idx, pending, pending_pos if pending is not None else start)
        elif pending is not None:
            raise _Invalid("bond without a preceding atom", pending_pos)
        pending = None
        prev = idx

    if pending is not None:
        raise _Invalid("dangling bond at end of string", pending_pos)
    if branch_stack:
        raise _Invalid("unclosed branch", len(text))
    if open_rings:
        label, (_, _, where) = next(iter(open_rings.items()))
        raise _Invalid(f"unpaired ring closure {label}", where)
    return MolGraph(atoms, bonds, smiles=text)


def _assign_hydrogens(mol: MolGraph):
    ring_atoms = mol.ring_atoms()
    for i, atom in enumerate(mol.atoms):
        n_arom = 0
        used = 0.0
        for _, k in mol.neighbors[i]:
            order = mol.bonds[k].order
            if order == AROMATIC:
                n_arom += 1
            else:
                used += order
        if atom.aromatic and i not in ring_atoms:
            raise _Invalid(f"aromatic atom {i} outside a ring")
        allowed = allowed_valences(atom.element, atom.charge, atom.aromatic)
        base = used + n_arom
        explicit = atom.explicit_h or 0
        if allowed is None:
            continue
        if not allowed:
            raise _Invalid(f"no valid valence for atom {i}")
        top = max(allowed)
        # one aromatic bond is taken as double when the valence admits it
        if n_arom and base + 1 + explicit <= top:
            base += 1
        if atom.explicit_h is not None:
            if base + explicit > top:
                raise _Invalid(f"valence exceeded on atom {i}")
            continue
        fits = [v for v in allowed if v >= base]
        if not fits:
            raise _Invalid(f"valence exceeded on atom {i}")
        atom.implicit_h = int(round(fits[0] - base))


def parse_smiles(text: str) -> MolGraph | InvalidSmiles:
    """Parse and valence-check a SMILES string; never raises on bad input."""
    try:
        mol = _build(text)
        _assign_hydrogens(mol)
        return mol
    except _Invalid as e:
        return InvalidSmiles(text, e.reason, e.position)
    except RecursionError:
        return InvalidSmiles(text, "structure too deep")


def is_valid(text: str) -> bool:
    return parse_smiles(text).valid
