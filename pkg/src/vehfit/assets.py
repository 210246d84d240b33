"""Access to the synthetic CAD collection and topology shipped with the package."""

from functools import lru_cache
from importlib import resources

from .shape_model import learn_asm, read_training_set
from .topology import read_topology


def data_path(name):
    return resources.files("vehfit") / "data" / name


def default_training_set():
    return read_training_set(data_path("cad_keypoints.txt"))


def default_topology():
    return read_topology(data_path("topology_v1.txt"))


@lru_cache(maxsize=4)
def default_model(n_s=3):
    """ASM learned from the shipped collection (cached; treat as read-only)."""
    return learn_asm(default_training_set(), n_s, default_topology())
