"""
Sampling a mini-batch graph
===========================

Features that point the same way should end up connected. Here we build
the edge probabilities for a small batch drawn from two clusters and look
at what the sampler produces.
"""
import numpy as np

from agfn.graph import (PoissonScale, connection_probabilities, cosine_similarity_matrix,
                        edge_density, edge_intensity, sample_adjacency)
from agfn.numerics import rng_stream

rng = np.random.default_rng(0)
labels = np.repeat([0, 1], 4)
centres = np.array([[3.0, 0.0, 0.0], [0.0, 3.0, 0.0]])
features = centres[labels] + rng.standard_normal((8, 3))

# %%
# Cosine similarity turns into a Poisson rate through ``alpha * sim + beta``
# (clamped at zero); the chance of at least one event is the edge probability.
sim = cosine_similarity_matrix(features)
scale = PoissonScale(alpha=1.0, beta=0.5)
p = connection_probabilities(edge_intensity(sim, scale))
np.set_printoptions(precision=2, suppress=True)
print("edge probabilities\n", p)

same = labels[:, None] == labels[None, :]
off = ~np.eye(8, dtype=bool)
print(f"mean p within a cluster {p[same & off].mean():.2f}, across {p[~same].mean():.2f}")

# %%
# Each draw is a symmetric 0/1 matrix with an empty diagonal. Averaging many
# of them recovers ``p``.
gen = rng_stream(0, 1)
draws = [sample_adjacency(p, gen) for _ in range(2000)]
print("one draw\n", draws[0].astype(int))
print(f"largest gap between edge frequency and p: {np.abs(np.mean(draws, axis=0) - p).max():.3f}")

# %%
# Raising alpha and lowering beta sharpens the graph: weakly similar pairs
# drop out while the strongly similar ones survive.
for a, b in [(1.0, 0.5), (3.0, -1.0), (6.0, -3.0)]:
    p = connection_probabilities(edge_intensity(sim, PoissonScale(a, b)))
    print(f"alpha={a:4.1f} beta={b:5.1f}  density {edge_density(p):.2f}  "
          f"within {p[same & off].mean():.2f}  across {p[~same].mean():.2f}")
