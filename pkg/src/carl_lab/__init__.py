"""Contrastive action representations for reusable local control, at desk scale.

Modules: ``mdp`` (k-balls and dynamics bisimilarity), ``envs`` (grid rooms and
a point room), ``data`` (offline datasets and segment sampling), ``nn`` (numpy
MLPs and Adam), ``carl`` (encoders and InfoNCE), ``hrl`` (HIQL-lite / HGCBC
co-training), ``evalkit`` (evaluation and sweeps) and ``cli``.
"""

__version__ = "0.1.0"
