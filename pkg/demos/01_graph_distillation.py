"""Walk through the knowledge-graph side of the pipeline.

Loads a small triple file, trains translation embeddings, scores edge
reliability, and prunes every entity down to its most reliable
neighbors. Run from the repo root:

    python demos/01_graph_distillation.py
"""

import tempfile
from pathlib import Path

from kgrerank import (
    TransEConfig,
    graph_stats,
    load_triples,
    neighbors,
    prune_graph,
    train_transe,
    triplet_distance,
    triplet_reliability,
)

TRIPLES = """\
hepatitis\tIsA\tinfectious_disease
hepatitis\tIsA\tdisease
hepatitis\tAtLocation\tadult
hepatitis\tAtLocation\tliver
liver\tPartOf\tbody
liver\tHasA\tliver_enzyme
infectious_disease\tIsA\tdisease
disease\tCauses\tpain
pain\tCauses\tsuffering
adult\tIsA\tperson
"""


def main():
    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "triples.tsv"
        path.write_text(TRIPLES, encoding="utf-8")
        graph = load_triples(path)

    print("Loaded graph:", graph_stats(graph))
    print("Entities:", ", ".join(graph.entities))

    losses: list[float] = []
    emb = train_transe(
        graph,
        TransEConfig(dim=16, epochs=150, learning_rate=0.05,
                     negatives_per_positive=4, seed=0),
        loss_history=losses,
    )
    print(f"\nTransE margin loss: {losses[0]:.3f} (first epoch) -> "
          f"{losses[-1]:.3f} (last epoch)")

    hepatitis = graph.entity_id("hepatitis")
    print("\nOutgoing edges of 'hepatitis', scored by reliability:")
    for r, t in neighbors(graph, hepatitis):
        rel = triplet_reliability(emb, hepatitis, r, t)
        try:
            dist = f"{triplet_distance(emb, hepatitis, r, t):.3f}"
        except ArithmeticError:
            dist = "undefined (non-positive reliability)"
        print(f"  --{graph.relations[r]}--> {graph.entities[t]:20s} "
              f"reliability={rel:+.3f} distance={dist}")

    pruned = prune_graph(graph, emb, pi=2)
    print("\nAfter pruning to the top-2 edges per head:")
    for r, t in pruned.neighbors(hepatitis):
        print(f"  --{graph.relations[r]}--> {graph.entities[t]}")
    kept = sum(len(a) for a in pruned.adjacency)
    print(f"\nEdges kept: {kept} of {len(graph.triplets)}")


if __name__ == "__main__":
    main()
