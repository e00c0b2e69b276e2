"""Grouping regions by their epidemic profiles and choosing K.

Run with ``python3 demos/03_clustering_regions.py``.
"""
from epifit import SyntheticSpec, adjusted_rand_index, extract_features, generate_synthetic, kmeans, select_k
from epifit.clustering import contingency

panel, truth, _ = generate_synthetic(SyntheticSpec(seed=0))
features = extract_features(panel)
print(f"{features.n} regions, {features.d} standardised features")

report = select_k(features, range(2, 7), seed=0)
print("\n K  silhouette       AIC       BIC      WCSS")
for row in report.rows:
    print(f"{row.k:>2} {row.silhouette:11.4f} {row.aic:9.3f} {row.bic:9.3f} {row.wcss:9.3f}")
print("\n" + report.rationale)

model = kmeans(features, 3, seed=0)
print("\nassignments:", model.assignments.tolist())
print("truth:      ", truth.tolist())
print("ARI:", adjusted_rand_index(truth, model.assignments))
print("contingency (rows truth, columns estimate):")
print(contingency(truth, model.assignments))
