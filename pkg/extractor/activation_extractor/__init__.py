"""Produce ACT1 activation tensors for the retrieval pipeline, either by
running images through a CNN or by synthesizing datasets with planted
objects."""

from .act1 import load_act1, save_act1
from .synth import SynthSpec, synth_dataset

__all__ = ["load_act1", "save_act1", "SynthSpec", "synth_dataset"]

__version__ = "0.1.0"
