"""
Where boot time goes: raw copies versus copy-on-write
=====================================================

A VM boot runs seven phases in order. Two of them write whole disks in
raw mode: duplicating the base image and creating the ephemeral disk.
Copy-on-write replaces both with a constant-time overlay. Here a 10 GB
image with an 80 GB ephemeral disk boots both ways on a node whose
disk writes 100 MB/s.
"""

from vmdeploy import Scenario
from vmdeploy.model import PHASES
from vmdeploy.simulation import run_scenario


def boot_once(cow):
    scenario = Scenario.from_dict({
        "name": "boot-chart", "seed": 1, "topology": {"nodes": 1},
        "images": [{"id": "img0", "size_gb": 10}],
        "flavor": {"root_gb": 10, "ephemeral_gb": 80},
        "workload": {"kind": "batch", "row": "1x1"}, "cow": cow,
    })
    return run_scenario(scenario).vms[0]


def bar(seconds, scale):
    return "#" * max(1, round(seconds / scale)) if seconds else ""


for cow in (False, True):
    vm = boot_once(cow)
    print(f"\n{'copy-on-write' if cow else 'raw'}: ready after {vm.boot_time / 1e6:.0f} s")
    for phase in PHASES:
        d = vm.phase_duration(phase) / 1e6
        print(f"  {phase:12s} {d:7.1f}s {bar(d, 20)}")

# The download (5 GB image at 125 MB/s would be 40 s, here 80 s for 10 GB)
# is the same in both runs. In raw mode the two disk writes add
# 10 GB / 100 MB/s + 80 GB / 100 MB/s = 900 s; copy-on-write makes each
# of them a one-second step.
