"""Compare three synthetic embedding families on hull volume, centroid distance and silhouette."""

from __future__ import annotations

import numpy as np

from elicit import best_k, diversity_table


def family_sets(rows: int = 4, n: int = 20, dim: int = 32) -> dict[str, dict[str, np.ndarray]]:
    sets: dict[str, dict[str, np.ndarray]] = {"wide": {}, "segment": {}, "patch": {}}
    for i in range(rows):
        rng = np.random.default_rng(i)
        basis = np.linalg.qr(rng.normal(size=(dim, 2)))[0].T
        noise = lambda: rng.normal(scale=0.01, size=(n, dim))  # noqa: E731
        sets["wide"][f"row{i}"] = rng.normal(size=(n, dim))
        sets["segment"][f"row{i}"] = rng.uniform(-1, 1, (n, 1)) @ basis[:1] + noise()
        sets["patch"][f"row{i}"] = rng.uniform(-1, 1, (n, 2)) @ basis + noise()
    return sets


def main() -> None:
    sets = family_sets()
    for metric in ("hull_volume", "mean_centroid_distance"):
        t = diversity_table(sets, metric, target_dim=5)
        print(f"\n{metric} (global min-max per table)")
        print("row     " + "".join(f"{m:>10}" for m in t.method_names))
        for name, row in zip(t.row_names, t.normalized):
            print(f"{name:<8}" + "".join(f"{v:>10.4f}" for v in row))
    print("\nsilhouette vs k, row0")
    for m, per_row in sets.items():
        k, curve = best_k(per_row["row0"], (2, 10), seed=0)
        print(f"{m:<8} best k={k:<2} " + " ".join(f"{curve[j]:.2f}" for j in sorted(curve)))


if __name__ == "__main__":
    main()
