"""SMILES parsing, hydrogen assignment and per-atom featurization.

Only a subset of SMILES is supported: organic-subset and bracket atoms,
branches, ring closures (single digit and ``%nn``) and the bond symbols
``- = # :``.  Stereo markers are accepted and dropped.  Aromaticity is
taken from lowercase notation as written.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, replace

import numpy as np

__all__ = [
    "Atom",
    "Bond",
    "BondOrder",
    "MolGraph",
    "SmilesError",
    "EmptyInput",
    "UnbalancedParenthesis",
    "UnclosedRingBond",
    "UnknownElement",
    "MultiFragmentInput",
    "SmilesSyntaxError",
    "parse_smiles",
    "assign_hydrogens",
    "featurize",
    "mol_from_smiles",
    "ELEMENT_VOCAB",
    "N_ATOM_FEATURES",
    "featurizer_vocab",
]


class SmilesError(ValueError):
    """Base class for SMILES parse failures. ``offset`` is the byte offset."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at offset {offset})")
        self.offset = offset


class EmptyInput(SmilesError):
    pass


class UnbalancedParenthesis(SmilesError):
    pass


class UnclosedRingBond(SmilesError):
    pass


class UnknownElement(SmilesError):
    pass


class MultiFragmentInput(SmilesError):
    pass


class SmilesSyntaxError(SmilesError):
    """Any other grammar violation (stray character, dangling bond, ...)."""


class BondOrder(enum.Enum):
    SINGLE = 1.0
    DOUBLE = 2.0
    TRIPLE = 3.0
    AROMATIC = 1.5


_BOND_SYMBOLS = {
    "-": BondOrder.SINGLE,
    "=": BondOrder.DOUBLE,
    "#": BondOrder.TRIPLE,
    ":": BondOrder.AROMATIC,
    # directional single bonds; the direction is discarded
    "/": BondOrder.SINGLE,
    "\\": BondOrder.SINGLE,
}

_ORGANIC = ("Cl", "Br", "B", "C", "N", "O", "P", "S", "F", "I")
_AROMATIC_ORGANIC = ("b", "c", "n", "o", "p", "s")
_AROMATIC_BRACKET = ("se", "as", "te", "b", "c", "n", "o", "p", "s")

DEFAULT_VALENCE = {
    "B": 3, "C": 4, "N": 3, "O": 2, "P": 3, "S": 2,
    "F": 1, "Cl": 1, "Br": 1, "I": 1,
}

_PERIODIC_TABLE = frozenset(
    """H He Li Be B C N O F Ne Na Mg Al Si P S Cl Ar K Ca Sc Ti V Cr Mn Fe
    Co Ni Cu Zn Ga Ge As Se Br Kr Rb Sr Y Zr Nb Mo Tc Ru Rh Pd Ag Cd In Sn
    Sb Te I Xe Cs Ba La Ce Pr Nd Pm Sm Eu Gd Tb Dy Ho Er Tm Yb Lu Hf Ta W
    Re Os Ir Pt Au Hg Tl Pb Bi Po At Rn Fr Ra Ac Th Pa U Np Pu Am Cm Bk Cf
    Es Fm Md No Lr Rf Db Sg Bh Hs Mt Ds Rg Cn Nh Fl Mc Lv Ts Og""".split()
)

# Frozen one-hot layout; stored in checkpoints.  Symbols outside this list
# share the last slot.
ELEMENT_VOCAB = (
    "B", "C", "N", "O", "P", "S", "F", "Cl", "Br", "I",
    "Na", "K", "Ca", "Fe", "Zn", "Se", "Si", "As", "Li", "Mg", "Al", "Sn",
    "Ag", "Pd", "Co", "Cu", "Au", "Ni", "Cd", "Mn", "Cr", "Pt", "Hg", "Pb",
    "Ti", "V", "Mo", "W", "Ru", "Rh", "Ir", "Os", "Re", "Bi",
)
UNKNOWN_ELEMENT_SLOT = len(ELEMENT_VOCAB) - 1
MAX_DEGREE = 10
MAX_HYDROGENS = 4
MAX_IMPLICIT_VALENCE = 5
BLOCK_SIZES = (len(ELEMENT_VOCAB), MAX_DEGREE + 1, MAX_HYDROGENS + 1, MAX_IMPLICIT_VALENCE + 1, 1)
N_ATOM_FEATURES = sum(BLOCK_SIZES)
_ELEMENT_INDEX = {sym: i for i, sym in enumerate(ELEMENT_VOCAB)}


def featurizer_vocab() -> dict:
    """JSON-serializable description of the atom feature layout."""
    return {
        "elements": list(ELEMENT_VOCAB),
        "unknown_slot": UNKNOWN_ELEMENT_SLOT,
        "max_degree": MAX_DEGREE,
        "max_hydrogens": MAX_HYDROGENS,
        "max_implicit_valence": MAX_IMPLICIT_VALENCE,
        "width": N_ATOM_FEATURES,
    }


@dataclass(frozen=True)
class Atom:
    element: str
    aromatic: bool = False
    formal_charge: int = 0
    explicit_h: int | None = None
    implicit_h: int = 0
    degree: int = 0
    implicit_valence: int = 0


@dataclass(frozen=True)
class Bond:
    begin: int
    end: int
    order: BondOrder

    @property
    def endpoints(self) -> frozenset[int]:
        return frozenset((self.begin, self.end))


@dataclass(frozen=True)
class MolGraph:
    atoms: tuple[Atom, ...]
    bonds: tuple[Bond, ...]
    smiles: str = ""
    hydrogens_assigned: bool = False

    @property
    def n_atoms(self) -> int:
        return len(self.atoms)

    @property
    def adjacency(self) -> np.ndarray:
        n = len(self.atoms)
        adj = np.zeros((n, n), dtype=np.int8)
        for b in self.bonds:
            adj[b.begin, b.end] = adj[b.end, b.begin] = 1
        return adj

    def edge_index(self) -> np.ndarray:
        """Directed edge list ``(2, 2 * n_bonds)`` without self loops."""
        if not self.bonds:
            return np.zeros((2, 0), dtype=np.int64)
        src = [b.begin for b in self.bonds] + [b.end for b in self.bonds]
        dst = [b.end for b in self.bonds] + [b.begin for b in self.bonds]
        return np.array([src, dst], dtype=np.int64)

    def bond_order_sum(self, i: int) -> float:
        return sum(b.order.value for b in self.bonds if i in (b.begin, b.end))

    def permute(self, perm) -> MolGraph:
        """Relabel atoms so that new atom ``k`` is old atom ``perm[k]``."""
        perm = list(perm)
        inverse = {old: new for new, old in enumerate(perm)}
        atoms = tuple(self.atoms[old] for old in perm)
        bonds = tuple(Bond(inverse[b.begin], inverse[b.end], b.order) for b in self.bonds)
        return replace(self, atoms=atoms, bonds=bonds)


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.pos = 0
        self.atoms: list[dict] = []
        self.bonds: dict[frozenset, Bond] = {}

    def error(self, cls, message, offset=None):
        raise cls(message, self.pos if offset is None else offset)

    def add_bond(self, a: int, b: int, order: BondOrder | None, offset: int):
        if a == b:
            self.error(SmilesSyntaxError, "atom bonded to itself", offset)
        key = frozenset((a, b))
        if key in self.bonds:
            self.error(SmilesSyntaxError, "duplicate bond between atoms", offset)
        if order is None:
            both_aromatic = self.atoms[a]["aromatic"] and self.atoms[b]["aromatic"]
            order = BondOrder.AROMATIC if both_aromatic else BondOrder.SINGLE
        self.bonds[key] = Bond(a, b, order)

    def parse(self) -> MolGraph:
        text = self.text
        if not text:
            raise EmptyInput("empty SMILES", 0)
        prev: int | None = None
        pending: tuple[BondOrder, int] | None = None
        branches: list[tuple[int, int, int]] = []  # (atom, offset, n_atoms at open)
        rings: dict[int, tuple[int, BondOrder | None, int]] = {}

        while self.pos < len(text):
            ch = text[self.pos]
            start = self.pos
            if ord(ch) > 127:
                self.error(SmilesSyntaxError, f"non-ASCII character {ch!r}")
            if ch == "[" or ch.isalpha() or ch == "*":
                atom = self.bracket_atom() if ch == "[" else self.organic_atom()
                self.atoms.append(atom)
                idx = len(self.atoms) - 1
                if prev is not None:
                    self.add_bond(prev, idx, pending[0] if pending else None, start)
                elif pending is not None:
                    self.error(SmilesSyntaxError, "bond symbol without a preceding atom", pending[1])
                pending = None
                prev = idx
            elif ch in _BOND_SYMBOLS:
                if pending is not None:
                    self.error(SmilesSyntaxError, "consecutive bond symbols")
                if prev is None:
                    self.error(SmilesSyntaxError, "bond symbol without a preceding atom")
                pending = (_BOND_SYMBOLS[ch], start)
                self.pos += 1
            elif ch == "(":
                if prev is None:
                    self.error(SmilesSyntaxError, "branch without a preceding atom")
                if pending is not None:
                    self.error(SmilesSyntaxError, "bond symbol before branch", pending[1])
                branches.append((prev, start, len(self.atoms)))
                self.pos += 1
            elif ch == ")":
                if not branches:
                    self.error(UnbalancedParenthesis, "unmatched ')'")
                if pending is not None:
                    self.error(SmilesSyntaxError, "dangling bond at end of branch", pending[1])
                anchor, _, n_before = branches.pop()
                if len(self.atoms) == n_before:
                    self.error(SmilesSyntaxError, "empty branch")
                prev = anchor
                self.pos += 1
            elif ch.isdigit() or ch == "%":
                if prev is None:
                    self.error(SmilesSyntaxError, "ring closure without a preceding atom")
                if ch == "%":
                    digits = text[self.pos + 1:self.pos + 3]
                    if len(digits) != 2 or not digits.isdigit():
                        self.error(SmilesSyntaxError, "'%' must be followed by two digits")
                    num = int(digits)
                    self.pos += 3
                else:
                    num = int(ch)
                    self.pos += 1
                order = pending[0] if pending else None
                if num in rings:
                    other, open_order, _ = rings.pop(num)
                    if order is not None and open_order is not None and order != open_order:
                        self.error(SmilesSyntaxError, "conflicting ring-closure bond symbols", start)
                    self.add_bond(other, prev, order or open_order, start)
                else:
                    rings[num] = (prev, order, start)
                pending = None
            elif ch == ".":
                self.error(MultiFragmentInput, "multi-fragment SMILES not supported")
            else:
                self.error(SmilesSyntaxError, f"unexpected character {ch!r}")

        if branches:
            self.error(UnbalancedParenthesis, "unclosed '('", branches[0][1])
        if rings:
            first = min(rings.values(), key=lambda r: r[2])
            self.error(UnclosedRingBond, "ring bond never closed", first[2])
        if pending is not None:
            self.error(SmilesSyntaxError, "dangling bond at end of input", pending[1])

        bonds = tuple(self.bonds.values())
        degree = [0] * len(self.atoms)
        for b in bonds:
            degree[b.begin] += 1
            degree[b.end] += 1
        atoms = tuple(Atom(degree=d, **a) for a, d in zip(self.atoms, degree))
        return MolGraph(atoms=atoms, bonds=bonds, smiles=text)

    def organic_atom(self) -> dict:
        text, pos = self.text, self.pos
        two = text[pos:pos + 2]
        if two in ("Cl", "Br"):
            self.pos += 2
            return {"element": two, "aromatic": False}
        ch = text[pos]
        if ch in _ORGANIC:
            self.pos += 1
            return {"element": ch, "aromatic": False}
        if ch in _AROMATIC_ORGANIC:
            self.pos += 1
            return {"element": ch.upper(), "aromatic": True}
        self.error(UnknownElement, f"unknown or non-organic atom {ch!r} outside brackets")

    def bracket_atom(self) -> dict:
        text = self.text
        start = self.pos
        close = text.find("]", start)
        if close < 0:
            self.error(SmilesSyntaxError, "unterminated bracket atom", start)
        body = text[start + 1:close]
        i = 0

        while i < len(body) and body[i].isdigit():  # isotope, dropped
            i += 1

        element = None
        aromatic = False
        for sym in _AROMATIC_BRACKET:
            if body.startswith(sym, i):
                element, aromatic = sym.capitalize(), True
                i += len(sym)
                break
        if element is None:
            if i < len(body) and body[i].isupper():
                if body[i:i + 2] in _PERIODIC_TABLE and len(body[i:i + 2]) == 2:
                    element = body[i:i + 2]
                    i += 2
                elif body[i] in _PERIODIC_TABLE:
                    element = body[i]
                    i += 1
            if element is None:
                self.error(UnknownElement, f"unknown element in bracket atom [{body}]", start + 1 + i)

        while i < len(body) and body[i] == "@":  # chirality, dropped
            i += 1

        h = 0
        if i < len(body) and body[i] == "H":
            i += 1
            j = i
            while j < len(body) and body[j].isdigit():
                j += 1
            h = int(body[i:j]) if j > i else 1
            i = j

        charge = 0
        if i < len(body) and body[i] in "+-":
            sign = 1 if body[i] == "+" else -1
            j = i + 1
            while j < len(body) and body[j].isdigit():
                j += 1
            if j > i + 1:
                charge = sign * int(body[i + 1:j])
            else:
                while j < len(body) and body[j] == body[i]:
                    j += 1
                charge = sign * (j - i)
            i = j

        if i < len(body) and body[i] == ":":  # atom class, dropped
            j = i + 1
            while j < len(body) and body[j].isdigit():
                j += 1
            if j == i + 1:
                self.error(SmilesSyntaxError, "atom class needs digits", start + 1 + i)
            i = j

        if i != len(body):
            self.error(SmilesSyntaxError, f"unexpected {body[i]!r} in bracket atom", start + 1 + i)
        self.pos = close + 1
        return {"element": element, "aromatic": aromatic, "formal_charge": charge, "explicit_h": h}


def parse_smiles(smiles: str) -> MolGraph:
    """Parse ``smiles`` into a graph with atoms in order of appearance.

    Hydrogens are not yet assigned; see :func:`assign_hydrogens`.
    """
    return _Parser(smiles).parse()


def assign_hydrogens(graph: MolGraph) -> MolGraph:
    if graph.hydrogens_assigned:
        raise ValueError("hydrogens already assigned")
    atoms = []
    for i, atom in enumerate(graph.atoms):
        bos = int(np.floor(graph.bond_order_sum(i)))
        if atom.explicit_h is not None:
            h = atom.explicit_h
        else:
            h = max(0, DEFAULT_VALENCE[atom.element] - bos)
        atoms.append(replace(atom, implicit_h=h, implicit_valence=h + bos))
    return replace(graph, atoms=tuple(atoms), hydrogens_assigned=True)


def mol_from_smiles(smiles: str) -> MolGraph:
    return assign_hydrogens(parse_smiles(smiles))


def atom_features(atom: Atom) -> np.ndarray:
    row = np.zeros(N_ATOM_FEATURES)
    offset = 0
    row[offset + _ELEMENT_INDEX.get(atom.element, UNKNOWN_ELEMENT_SLOT)] = 1
    offset += BLOCK_SIZES[0]
    row[offset + min(atom.degree, MAX_DEGREE)] = 1
    offset += BLOCK_SIZES[1]
    row[offset + min(atom.implicit_h, MAX_HYDROGENS)] = 1
    offset += BLOCK_SIZES[2]
    row[offset + min(atom.implicit_valence, MAX_IMPLICIT_VALENCE)] = 1
    offset += BLOCK_SIZES[3]
    row[offset] = float(atom.aromatic)
    return row


def featurize(graph: MolGraph) -> np.ndarray:
    """Return the ``(n_atoms, 67)`` binary atom feature matrix."""
    if not graph.hydrogens_assigned:
        raise ValueError("assign_hydrogens must run before featurize")
    return np.stack([atom_features(a) for a in graph.atoms])
