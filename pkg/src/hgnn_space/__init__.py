"""hgnn_space: a design-space exploration platform for heterogeneous GNNs.

Pipeline: typed graphs (`hgraph`) are transformed into subgraph families
(`transform`), consumed by message-passing layers (`layers`) built on a
small autodiff engine (`tensor`), assembled into networks (`model`) whose
configurations come from an enumerable design space (`designspace`).
Training (`train`), orchestration (`runner`) and ranking/EDF analysis
(`analysis`) close the loop.
"""

__version__ = "0.1.0"
