"""Which earlier blocks does each block read?

Block 1 reads the shallow features. Every later block reads block 1 and
then every earlier block whose index has the opposite parity, so fan-in
grows by one every two blocks.
"""

from swinoir.topology import build_topology, skip_topology

dense = build_topology(8)
print(dense.to_text())
print()

print("fan-in per block, interval-dense vs plain chain:")
chain = skip_topology(8)
for n in range(1, 9):
    print(f"  block {n}: {dense.fan_in(n)}  vs  {chain.fan_in(n)}")

# the same graph in Graphviz form, e.g. `dot -Tpng topology.dot -o topology.png`
print()
print(dense.to_dot())
