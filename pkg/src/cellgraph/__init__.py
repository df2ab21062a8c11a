"""cellgraph: self-supervised representation learning on cell graphs.

Pipeline stages: segmented tissue images -> attributed cell graphs ->
masked-autoencoder pre-training with an adaptive channel-mixing GNN ->
frozen-embedding evaluation (attention-MIL, logistic probes, survival).
"""

__version__ = "0.1.0"

from .graphdata import CellGraph, GraphBatch, batch_graphs, unbatch
from .dataset_io import DatasetManifest, read_dataset, write_dataset
