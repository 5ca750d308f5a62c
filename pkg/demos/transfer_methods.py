"""
Moving images: one server versus a swarm
========================================

Every compute node needs a copy of the image before a VM can boot from it.
Here the same 192-VM batch is deployed three ways: each node pulls its
copy from the catalog server, nodes trade pieces with each other, or
images sit on storage every node can already reach.
"""

from vmdeploy import Scenario
from vmdeploy.simulation import run_scenario

# The batch splits 192 VMs over 8 images, 24 VMs each, at most 8 VMs per host.
rows = []
for method in ("central", "swarm", "shared"):
    result = run_scenario(Scenario.builtin(f"table1-8x24-{method}"))
    s = result.summary
    first = min(g.first_ready for g in s.groups.values())
    rows.append((method, first, s.makespan, s.catalog_egress_bytes / 1e9))

print(f"{'method':8s} {'first VM':>10s} {'all VMs':>10s} {'catalog sent':>13s}")
for method, first, span, egress in rows:
    print(f"{method:8s} {first:9.1f}s {span:9.1f}s {egress:10.1f} GB")

# With one server, every fetch pulls 5 GB through the same 1 Gbit/s port,
# so the batch waits for 192 x 5 GB / 125 MB/s. In the swarm, nodes that already hold pieces serve them onward
# and the catalog only sends a few copies' worth.

# %%
# Piece exchange in detail
# ------------------------
# The swarm run records where each image came from. Count how many bytes
# the catalog sent against how many the nodes received in total.

swarm = run_scenario(Scenario.builtin("table1-8x24-swarm"))
received = sum(b for ch, b in swarm.summary.bytes_by_link.items()
               if ch.startswith("nic:node") and ch.endswith(":down"))
print(f"\nnodes received {received / 1e9:.0f} GB, "
      f"{swarm.summary.catalog_egress_bytes / received:.1%} of it from the catalog")
