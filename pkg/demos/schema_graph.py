"""Build the slot graph for the three-service synthetic schema and look at its operator.

Every slot is a node. Two slots are joined when they belong to the same service,
so the adjacency is block diagonal. The propagation operator adds self loops
and rescales by degree on both sides.
"""

import numpy as np

from shego.data.synthetic import default_corpus_spec, spec_schema
from shego.graph import build_graph, normalize_adjacency

schema = spec_schema(default_corpus_spec())
graph = build_graph(schema)

print(f"{graph.num_nodes} slot nodes, {graph.num_edges()} undirected edges")
for i, (service, slot) in enumerate(graph.node_to_slot):
    print(f"  node {i}: {service}/{slot}")

print("\nadjacency (block per service):")
print(graph.adjacency)

op = normalize_adjacency(graph.adjacency)
print("\nnormalised operator, first block:")
print(np.round(op[:3, :3], 3))
print("\nan edgeless graph normalises to the identity:",
      np.array_equal(normalize_adjacency(np.zeros((4, 4))), np.eye(4)))
