"""Drug-pair synergy prediction with graph neural network drug encoders."""

from .chem import MolGraph, featurize, mol_from_smiles, parse_smiles
from .net import DeepDDSModel, ModelConfig, forward, init_model
from .train import TrainConfig, fit

__all__ = [
    "MolGraph", "featurize", "mol_from_smiles", "parse_smiles",
    "DeepDDSModel", "ModelConfig", "forward", "init_model",
    "TrainConfig", "fit",
]
__version__ = "0.1.0"
