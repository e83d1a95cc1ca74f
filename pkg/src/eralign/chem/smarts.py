"""A small SMARTS subset: tree-shaped patterns matched against hydrogen-expanded graphs.

Supported atom primitives: element symbols (aliphatic upper case, aromatic lower
case), ``#n``, ``A``, ``a``, ``*``, ``Hn`` (total hydrogens), ``Xn`` (total
connections), ``Dn`` (explicit degree) and charges (``+``, ``-n``, ``+0`` ...),
combined with ``!``, ``&``/juxtaposition, ``,`` and ``;``. Bonds: ``- = # : ~``
and the implicit single-or-aromatic bond. Ring closures and recursive SMARTS are
not supported.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

from eralign.chem.elements import ATOMIC_NUMBER
from eralign.chem.smiles import AROMATIC, MolGraph

_ALIPHATIC = ("Cl", "Br", "B", "C", "N", "O", "P", "S", "F", "I")
_AROMATIC = ("c", "n", "o", "s", "p", "b")


@dataclass
class Node:
    """One atom of the hydrogen-expanded graph seen by the matcher."""

    z: int
    aromatic: bool
    charge: int
    n_h: int
    degree: int


class ExpandedGraph:
    """Molecule with every hydrogen as an explicit node; heavy atoms keep their indices."""

    def __init__(self, mol: MolGraph):
        self.nodes: list[Node] = []
        self.adj: list[list[tuple[int, float]]] = []
        for atom, nbrs in zip(mol.atoms, mol.neighbors):
            self.nodes.append(Node(atom.atomic_number, atom.aromatic, atom.charge, atom.total_h, len(nbrs) + atom.total_h))
            self.adj.append([(j, mol.bonds[k].order) for j, k in nbrs])
        for i, atom in enumerate(mol.atoms):
            for _ in range(atom.total_h):
                h = len(self.nodes)
                self.nodes.append(Node(1, False, 0, 0, 1))
                self.adj.append([(i, 1.0)])
                self.adj[i].append((h, 1.0))
        self.n_heavy = mol.n_atoms


# -- atom expressions ------------------------------------------------------------


def _prim(kind, value=None):
    return ("prim", kind, value)


class _AtomExprParser:
    def __init__(self, text: str):
        self.s = text
        self.i = 0

    def parse(self):
        expr = self.low_and()
        if self.i != len(self.s):
            raise ValueError(f"cannot parse atom expression {self.s!r} at {self.i}")
        return expr

    def peek(self):
        return self.s[self.i] if self.i < len(self.s) else ""

    def low_and(self):
        terms = [self.or_expr()]
        while self.peek() == ";":
            self.i += 1
            terms.append(self.or_expr())
        return ("and", terms) if len(terms) > 1 else terms[0]

    def or_expr(self):
        terms = [self.and_expr()]
        while self.peek() == ",":
            self.i += 1
            terms.append(self.and_expr())
        return ("or", terms) if len(terms) > 1 else terms[0]

    def and_expr(self):
        terms = [self.unary()]
        while self.peek() and self.peek() not in ",;]":
            if self.peek() == "&":
                self.i += 1
            terms.append(self.unary())
        return ("and", terms) if len(terms) > 1 else terms[0]

    def unary(self):
        if self.peek() == "!":
            self.i += 1
            return ("not", self.unary())
        return self.primitive()

    def number(self, default):
        m = re.match(r"\d+", self.s[self.i :])
        if not m:
            return default
        self.i += m.end()
        return int(m.group(0))

    def primitive(self):
        c = self.peek()
        if c == "#":
            self.i += 1
            return _prim("z", self.number(None))
        if c in "+-":
            sign = 1 if c == "+" else -1
            self.i += 1
            return _prim("charge", sign * self.number(1))
        if c == "*":
            self.i += 1
            return _prim("any")
        for sym in _ALIPHATIC:
            if self.s.startswith(sym, self.i):
                self.i += len(sym)
                return ("and", [_prim("z", ATOMIC_NUMBER[sym]), _prim("aromatic", False)])
        for sym in _AROMATIC:
            if self.s.startswith(sym, self.i):
                self.i += 1
                return ("and", [_prim("z", ATOMIC_NUMBER[sym.upper()]), _prim("aromatic", True)])
        if c == "A":
            self.i += 1
            return _prim("aromatic", False)
        if c == "a":
            self.i += 1
            return _prim("aromatic", True)
        if c in "HXD":
            self.i += 1
            return _prim(c, self.number(1))
        raise ValueError(f"unsupported SMARTS primitive {c!r} in {self.s!r}")


def _eval(expr, node: Node) -> bool:
    tag = expr[0]
    if tag == "and":
        return all(_eval(e, node) for e in expr[1])
    if tag == "or":
        return any(_eval(e, node) for e in expr[1])
    if tag == "not":
        return not _eval(expr[1], node)
    _, kind, value = expr
    if kind == "z":
        return node.z == value
    if kind == "aromatic":
        return node.aromatic == value
    if kind == "charge":
        return node.charge == value
    if kind == "H":
        return node.n_h == value
    if kind in ("X", "D"):
        return node.degree == value
    return True  # any


# -- patterns ------------------------------------------------------------------------


@dataclass
class PatternAtom:
    expr: tuple
    children: list[tuple[str, "PatternAtom"]] = field(default_factory=list)


def _bond_ok(symbol: str, order: float) -> bool:
    if symbol == "":
        return order in (1.0, AROMATIC)
    if symbol == "~":
        return True
    return {"-": 1.0, "=": 2.0, "#": 3.0, ":": AROMATIC}[symbol] == order


_TOKEN = re.compile(r"\[[^\]]*\]|Cl|Br|[BCNOPSFIcnospbaA*]|[-=#:~]|[()]")


class Pattern:
    def __init__(self, smarts: str):
        self.smarts = smarts
        self.root = self._parse(smarts)

    @staticmethod
    def _parse(text: str) -> PatternAtom:
        pos = 0
        root = None
        prev = None
        stack: list[PatternAtom] = []
        bond = ""
        while pos < len(text):
            m = _TOKEN.match(text, pos)
            if m is None:
                raise ValueError(f"cannot parse SMARTS {text!r} at {pos}")
            tok = m.group(0)
            pos = m.end()
            if tok in "-=#:~" and len(tok) == 1:
                bond = tok
            elif tok == "(":
                stack.append(prev)
            elif tok == ")":
                prev = stack.pop()
            else:
                body = tok[1:-1] if tok.startswith("[") else tok
                atom = PatternAtom(_AtomExprParser(body).parse())
                if prev is None:
                    root = atom
                else:
                    prev.children.append((bond, atom))
                bond = ""
                prev = atom
        if root is None:
            raise ValueError(f"empty SMARTS {text!r}")
        return root

    def matches_at(self, g: ExpandedGraph, idx: int) -> bool:
        """True when some embedding maps the pattern's first atom onto node ``idx``."""
        return _match(self.root, idx, g, {idx}, lambda: True)


def _match(p: PatternAtom, idx, g, used, cont) -> bool:
    if not _eval(p.expr, g.nodes[idx]):
        return False
    return _assign(p.children, 0, idx, g, used, cont)


def _assign(children, k, idx, g, used, cont) -> bool:
    if k == len(children):
        return cont()
    bond, child = children[k]
    for nb, order in g.adj[idx]:
        if nb in used or not _bond_ok(bond, order):
            continue
        used.add(nb)
        # the child's subtree, then the remaining siblings, must embed jointly
        if _match(child, nb, g, used, lambda: _assign(children, k + 1, idx, g, used, cont)):
            return True
        used.discard(nb)
    return False
