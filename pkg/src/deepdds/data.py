"""Input files, labeling, expression normalization, splits and batching.

File formats (all CSV with a header row unless noted)::

    drugs.csv       drug_id,smiles
    expression.csv  cell_id,<gene>,<gene>,...   (TPM values)
    genes.txt       one gene symbol per line, no header
    synergy.csv     drug_a,drug_b,cell_id,loewe
    tissue.csv      cell_id,tissue
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .chem import MolGraph, SmilesError, featurize, mol_from_smiles

__all__ = [
    "DataError",
    "DuplicateDrugId",
    "DuplicateCellId",
    "MissingColumn",
    "ParseError",
    "EmptyIntersection",
    "MissingValue",
    "SelfCombination",
    "TooFewProfiles",
    "UnknownTissue",
    "DegenerateSplit",
    "AlreadyNormalized",
    "CellLineProfile",
    "SynergyRecord",
    "SplitPlan",
    "NormalizationStats",
    "Corpus",
    "Batch",
    "POSITIVE_THRESHOLD",
    "NEGATIVE_THRESHOLD",
    "PROTOCOLS",
    "load_drugs",
    "load_expression",
    "load_gene_list",
    "load_synergy",
    "load_tissues",
    "label_records",
    "fit_normalizer",
    "apply_normalizer",
    "make_splits",
    "make_batches",
]

POSITIVE_THRESHOLD = 10.0
NEGATIVE_THRESHOLD = 0.0
PROTOCOLS = ("kfold", "leave_combination", "leave_drug", "leave_cell_line", "leave_tissue")


class DataError(ValueError):
    pass


class DuplicateDrugId(DataError):
    pass


class DuplicateCellId(DataError):
    pass


class MissingColumn(DataError):
    pass


class ParseError(DataError):
    def __init__(self, message: str, row: int):
        super().__init__(f"row {row}: {message}")
        self.row = row


class EmptyIntersection(DataError):
    pass


class MissingValue(DataError):
    pass


class SelfCombination(DataError):
    pass


class TooFewProfiles(DataError):
    pass


class UnknownTissue(DataError):
    pass


class DegenerateSplit(DataError):
    pass


class AlreadyNormalized(DataError):
    pass


@dataclass(frozen=True)
class CellLineProfile:
    cell_id: str
    values: np.ndarray
    genes: tuple[str, ...]
    normalized: bool = False


@dataclass(frozen=True)
class SynergyRecord:
    drug_a: str
    drug_b: str
    cell_id: str
    loewe: float
    label: int | None = None

    @property
    def pair(self) -> frozenset[str]:
        return frozenset((self.drug_a, self.drug_b))

    def swapped(self) -> SynergyRecord:
        return replace(self, drug_a=self.drug_b, drug_b=self.drug_a)


@dataclass
class NormalizationStats:
    genes: tuple[str, ...]
    mean: np.ndarray
    std: np.ndarray

    def to_dict(self) -> dict:
        return {"genes": list(self.genes), "mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> NormalizationStats:
        return cls(tuple(d["genes"]), np.asarray(d["mean"], dtype=np.float64), np.asarray(d["std"], dtype=np.float64))


@dataclass
class SplitPlan:
    protocol: str
    folds: list[tuple[list[int], list[int]]]
    seed: int = 0
    held_out: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        folds = []
        for k, (train, test) in enumerate(self.folds):
            fold = {"train": list(map(int, train)), "test": list(map(int, test))}
            if self.held_out:
                fold["held_out"] = self.held_out[k]
            folds.append(fold)
        return {"protocol": self.protocol, "seed": self.seed, "folds": folds}

    @classmethod
    def from_dict(cls, d: dict) -> SplitPlan:
        folds = [(list(f["train"]), list(f["test"])) for f in d["folds"]]
        held = [f["held_out"] for f in d["folds"] if "held_out" in f]
        return cls(d["protocol"], folds, int(d.get("seed", 0)), held)

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=1) + "\n")

    @classmethod
    def load(cls, path) -> SplitPlan:
        return cls.from_dict(json.loads(Path(path).read_text()))


# -- loading -----------------------------------------------------------------

def _read_csv(path, required: tuple[str, ...]):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise MissingColumn(f"{path}: empty file") from None
        missing = [c for c in required if c not in header]
        if missing:
            raise MissingColumn(f"{path}: missing column(s) {', '.join(missing)}")
        rows = [row for row in reader if any(cell.strip() for cell in row)]
    return header, rows


def load_drugs(path) -> dict[str, MolGraph]:
    """Parse every row of ``drugs.csv``; row numbers count the header as row 1."""
    header, rows = _read_csv(path, ("drug_id", "smiles"))
    id_col, smi_col = header.index("drug_id"), header.index("smiles")
    drugs: dict[str, MolGraph] = {}
    for n, row in enumerate(rows, start=2):
        drug_id, smiles = row[id_col].strip(), row[smi_col].strip()
        if drug_id in drugs:
            raise DuplicateDrugId(f"row {n}: duplicate drug id {drug_id!r}")
        try:
            drugs[drug_id] = mol_from_smiles(smiles)
        except SmilesError as exc:
            raise ParseError(f"drug {drug_id!r}: {exc}", n) from exc
    return drugs


def load_gene_list(path) -> list[str]:
    genes = []
    for line in Path(path).read_text().splitlines():
        sym = line.strip()
        if sym and sym not in genes:
            genes.append(sym)
    return genes


def load_expression(path, gene_list) -> dict[str, CellLineProfile]:
    """Restrict expression columns to ``gene_list`` (a list or a path), in its order."""
    if isinstance(gene_list, (str, Path)):
        gene_list = load_gene_list(gene_list)
    header, rows = _read_csv(path, ("cell_id",))
    id_col = header.index("cell_id")
    col_of = {h: i for i, h in enumerate(header) if i != id_col}
    genes = tuple(g for g in gene_list if g in col_of)
    if not genes:
        raise EmptyIntersection(f"{path}: no expression column matches the gene list")
    cols = [col_of[g] for g in genes]
    profiles: dict[str, CellLineProfile] = {}
    for n, row in enumerate(rows, start=2):
        cell_id = row[id_col].strip()
        if cell_id in profiles:
            raise DuplicateCellId(f"row {n}: duplicate cell id {cell_id!r}")
        values = []
        for c, g in zip(cols, genes):
            raw = row[c].strip() if c < len(row) else ""
            try:
                v = float(raw)
            except ValueError:
                v = math.nan
            if not math.isfinite(v):
                raise MissingValue(f"row {n}: cell {cell_id!r} has no value for gene {g}")
            values.append(v)
        profiles[cell_id] = CellLineProfile(cell_id, np.array(values), genes)
    return profiles


def load_synergy(path) -> list[tuple[str, str, str, float]]:
    header, rows = _read_csv(path, ("drug_a", "drug_b", "cell_id", "loewe"))
    cols = [header.index(c) for c in ("drug_a", "drug_b", "cell_id", "loewe")]
    raw = []
    for n, row in enumerate(rows, start=2):
        a, b, cell, score = (row[c].strip() for c in cols)
        try:
            raw.append((a, b, cell, float(score)))
        except ValueError:
            raise ParseError(f"non-numeric loewe score {score!r}", n) from None
    return raw


def load_tissues(path) -> dict[str, str]:
    header, rows = _read_csv(path, ("cell_id", "tissue"))
    ci, ti = header.index("cell_id"), header.index("tissue")
    return {row[ci].strip(): row[ti].strip() for row in rows}


def load_candidates(path) -> list[tuple[str, str]]:
    header, rows = _read_csv(path, ("drug_a", "drug_b"))
    ia, ib = header.index("drug_a"), header.index("drug_b")
    return [(row[ia].strip(), row[ib].strip()) for row in rows]


# -- labeling ----------------------------------------------------------------

def label_records(raw) -> tuple[list[SynergyRecord], int]:
    """Average replicates per (unordered pair, cell) and threshold the mean.

    Returns the labeled records in first-appearance order and the number of
    averaged triples dropped for falling in ``[0, 10]``.
    """
    groups: dict[tuple, list] = {}
    for drug_a, drug_b, cell_id, score in raw:
        if drug_a == drug_b:
            raise SelfCombination(f"drug {drug_a!r} combined with itself on {cell_id!r}")
        key = (frozenset((drug_a, drug_b)), cell_id)
        if key not in groups:
            groups[key] = [drug_a, drug_b, cell_id, []]
        groups[key][3].append(float(score))

    records, dropped = [], 0
    for drug_a, drug_b, cell_id, scores in groups.values():
        mean = sum(scores) / len(scores)
        if mean > POSITIVE_THRESHOLD:
            label = 1
        elif mean < NEGATIVE_THRESHOLD:
            label = 0
        else:
            dropped += 1
            continue
        records.append(SynergyRecord(drug_a, drug_b, cell_id, mean, label))
    return records, dropped


# -- normalization -----------------------------------------------------------

def fit_normalizer(train_profiles) -> NormalizationStats:
    profiles = list(train_profiles)
    if len(profiles) < 2:
        raise TooFewProfiles(f"need at least 2 training profiles, got {len(profiles)}")
    genes = profiles[0].genes
    for p in profiles:
        if p.genes != genes:
            raise EmptyIntersection(f"profile {p.cell_id} uses a different gene list")
        if p.normalized:
            raise AlreadyNormalized(f"profile {p.cell_id} is already normalized")
    x = np.stack([p.values for p in profiles])
    return NormalizationStats(genes, x.mean(axis=0), x.std(axis=0))


def apply_normalizer(stats: NormalizationStats, profile: CellLineProfile) -> CellLineProfile:
    """Per-gene z-score; genes with std below 1e-8 map to 0."""
    if profile.normalized:
        raise AlreadyNormalized(f"profile {profile.cell_id} is already normalized")
    if profile.genes != stats.genes:
        raise EmptyIntersection(f"profile {profile.cell_id} is not aligned to the normalizer genes")
    ok = stats.std >= 1e-8
    z = np.where(ok, (profile.values - stats.mean) / np.where(ok, stats.std, 1.0), 0.0)
    return CellLineProfile(profile.cell_id, z, profile.genes, normalized=True)


# -- splits ------------------------------------------------------------------

def _group_key(record: SynergyRecord, protocol: str, tissue_map) -> list[str]:
    if protocol == "leave_combination":
        return ["+".join(sorted(record.pair))]
    if protocol == "leave_drug":
        return [record.drug_a, record.drug_b]
    if protocol == "leave_cell_line":
        return [record.cell_id]
    return [tissue_map[record.cell_id]]


def make_splits(records, protocol: str = "kfold", k: int = 5, holdout=None, tissue_map=None, seed: int = 0) -> SplitPlan:
    """Build train/test folds over ``records`` (indices into the list).

    For the grouped protocols every distinct key is held out in turn unless
    ``holdout`` lists the keys to use.  A ``leave_combination`` key is the
    two drug ids sorted and joined with ``+``.
    """
    records = list(records)
    n = len(records)
    if protocol not in PROTOCOLS:
        raise ValueError(f"unknown protocol {protocol!r}; choose from {', '.join(PROTOCOLS)}")

    if protocol == "kfold":
        if k < 2 or k > n:
            raise DegenerateSplit(f"cannot make {k} folds from {n} records")
        order = np.random.default_rng(seed).permutation(n)
        parts = np.array_split(order, k)
        folds = []
        for i, test in enumerate(parts):
            train = np.concatenate([p for j, p in enumerate(parts) if j != i])
            folds.append((sorted(train.tolist()), sorted(test.tolist())))
        return SplitPlan(protocol, folds, seed)

    if protocol == "leave_tissue":
        if tissue_map is None:
            raise UnknownTissue("leave_tissue needs a cell_id -> tissue map")
        unmapped = sorted({r.cell_id for r in records if r.cell_id not in tissue_map})
        if unmapped:
            raise UnknownTissue(f"no tissue for cell line(s): {', '.join(unmapped)}")

    keys_per_record = [_group_key(r, protocol, tissue_map) for r in records]
    if holdout is None:
        seen: dict[str, None] = {}
        for keys in keys_per_record:
            for key in keys:
                seen.setdefault(key, None)
        holdout = list(seen)
    else:
        holdout = [holdout] if isinstance(holdout, str) else list(holdout)
        known = {key for keys in keys_per_record for key in keys}
        for key in holdout:
            if key not in known:
                if protocol == "leave_tissue":
                    raise UnknownTissue(f"tissue {key!r} has no records")
                raise DegenerateSplit(f"held-out key {key!r} matches no record")

    folds = []
    for key in holdout:
        test = [i for i, keys in enumerate(keys_per_record) if key in keys]
        train = [i for i, keys in enumerate(keys_per_record) if key not in keys]
        if not test or not train:
            raise DegenerateSplit(f"holding out {key!r} leaves an empty {'test' if not test else 'train'} side")
        folds.append((train, test))
    return SplitPlan(protocol, folds, seed, list(holdout))


# -- batching ----------------------------------------------------------------

@dataclass
class Batch:
    drug_a: list[str]
    drug_b: list[str]
    cell_id: list[str]
    labels: np.ndarray

    def __len__(self):
        return len(self.labels)


def make_batches(records, order_augment: bool, batch_size: int, seed) -> list[Batch]:
    """One epoch of shuffled batches; ``order_augment`` adds each pair swapped."""
    if batch_size < 1:
        raise ValueError("batch_size must be at least 1")
    samples = []
    for r in records:
        samples.append((r.drug_a, r.drug_b, r.cell_id, r.label))
        if order_augment:
            samples.append((r.drug_b, r.drug_a, r.cell_id, r.label))
    order = np.random.default_rng(seed).permutation(len(samples))
    batches = []
    for start in range(0, len(samples), batch_size):
        chunk = [samples[i] for i in order[start:start + batch_size]]
        a, b, c, y = zip(*chunk)
        batches.append(Batch(list(a), list(b), list(c), np.array(y, dtype=np.int64)))
    return batches


# -- assembled inputs --------------------------------------------------------

@dataclass
class Corpus:
    """Parsed drugs with cached atom features, plus normalized profiles."""

    drugs: dict[str, MolGraph]
    profiles: dict[str, CellLineProfile]
    _features: dict[str, np.ndarray] = field(default_factory=dict, repr=False)

    def drug_input(self, drug_id: str) -> tuple[MolGraph, np.ndarray]:
        if drug_id not in self._features:
            self._features[drug_id] = featurize(self.drugs[drug_id])
        return self.drugs[drug_id], self._features[drug_id]

    def cell_matrix(self, cell_ids) -> np.ndarray:
        return np.stack([self.profiles[c].values for c in cell_ids])

    def check_records(self, records):
        """Raise ``DataError`` naming the first unknown drug or cell id."""
        for r in records:
            for d in (r.drug_a, r.drug_b):
                if d not in self.drugs:
                    raise DataError(f"unknown drug id {d!r} in synergy records")
            if r.cell_id not in self.profiles:
                raise DataError(f"unknown cell id {r.cell_id!r} in synergy records")
