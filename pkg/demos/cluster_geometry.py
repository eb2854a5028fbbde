"""Direction clusters: CARL against single-action prediction and an untrained encoder.

Run: python3 demos/cluster_geometry.py
Writes carl_embeddings.csv for external plotting (for example UMAP).
"""

from carl_lab.carl import CarlConfig, train_carl
from carl_lab.data import generate_dataset
from carl_lab.envs import make_rooms
from carl_lab.evalkit import cardinal_pairs, cluster_separation, export_embeddings, nearest_neighbors, random_encoder

env = make_rooms(5, 5)
ds = generate_dataset(env, 500, 0.2, seed=0)
s, g, labels = cardinal_pairs(env)

models = {}
for variant in ("carl", "sa-pred"):
    models[variant] = train_carl(ds, None, CarlConfig(variant=variant, horizon_k=3), 3000, seed=0)
    rep = cluster_separation(models[variant], s, g, labels)
    print(f"{variant:<8} margin {rep.margin:.3f}  within {rep.mean_within:.3f}  between {rep.between:.3f}")
rand = cluster_separation(None, s, g, labels, embed=random_encoder(env.state_dim))
print(f"{'random':<8} margin {rand.margin:.3f}")

ranked = nearest_neighbors(models["carl"], (s[0], g[0]), (s, g), top_n=5)
print(f"reference pair moves {labels[0]}; nearest neighbours move", [str(labels[i]) for i, _ in ranked])
export_embeddings(models["carl"], s, g, labels, "carl_embeddings.csv")
