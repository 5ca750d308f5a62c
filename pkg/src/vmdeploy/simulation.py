"""Wires the engine, network, transfer protocol, scheduler and workload into
one run of a scenario."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

from .kernel import Engine, EventKind, to_us
from .metrics import Recorder, RunSummary, summarize
from .model import (PHASES, Catalog, ComputeNode, VmInstance, VmRequest, disk_work,
                    release_resources)
from .network import FlowNetwork, Topology
from .prefetch import build_plan, execute_plan, load_popularity_seed
from .scenario import Scenario
from .scheduler import NoValidHost, PlacementDecision, schedule
from .transfer import CacheSpaceError, ProtocolKind, TransferManager
from .workload import Trace

log = logging.getLogger(__name__)


@dataclass
class RunResult:
    scenario: Scenario
    seed: int
    records: list
    summary: RunSummary
    vms: list
    decisions: list
    fetches: list
    engine: Engine = field(repr=False)
    network: FlowNetwork = field(repr=False)
    nodes: dict = field(repr=False, default_factory=dict)
    catalog: Optional[Catalog] = field(repr=False, default=None)


class Simulation:
    def __init__(self, scenario: Scenario, seed: Optional[int] = None, event_log: bool = False,
                 trace: Optional[Trace] = None):
        self.scenario = scenario
        self.seed = scenario.seed if seed is None else int(seed)
        self.engine = Engine(self.seed, event_log=event_log)
        self.catalog = Catalog()
        for image in scenario.images():
            self.catalog.register(image)
        hw = scenario.hardware()
        self.nodes = {nid: ComputeNode(nid, **hw) for nid in scenario.node_ids()}
        speeds = scenario.link_speeds()
        self.topology = Topology.testbed(self.nodes, self.catalog.endpoint, speeds["nic_bps"],
                                         speeds["trunk_bps"], speeds["switches"],
                                         speeds["catalog_nic_bps"])
        self.disk_channel = {nid: self.topology.add_disk(nid, n.disk_bandwidth)
                             for nid, n in self.nodes.items()}
        self.network = FlowNetwork(self.engine, self.topology,
                                   record_samples=bool(scenario.data["metrics"]["link_samples"]))
        self.protocol = scenario.protocol()
        self.report_interval = to_us(float(scenario.data["scheduler"]["report_interval_s"]))
        self.transfers = TransferManager(self.engine, self.network, self.catalog, self.nodes,
                                         self.protocol, on_cache_change=self._cache_changed)
        self.sched_config = scenario.scheduler()
        self.phases = scenario.phases()
        self.cow = bool(scenario.data["cow"])
        self.prefetch = scenario.prefetch_policy()
        self.trace = trace if trace is not None else scenario.trace(self.seed)
        self.recorder = Recorder()
        self.vms: list[VmInstance] = []
        self.decisions: list[PlacementDecision] = []
        self._tiebreak = self.engine.rng("tiebreak")
        self._host_list = list(self.nodes.values())

    # -- setup -------------------------------------------------------------------

    def _cache_changed(self, node: ComputeNode) -> None:
        if not self.report_interval:
            node.reported_cache = frozenset(node.cache)

    def _report_caches(self) -> None:
        for node in self._host_list:
            node.reported_cache = frozenset(node.cache)
        if self._pending_arrivals:
            self.engine.schedule_in(self.report_interval, EventKind.CACHE_REPORT, self._report_caches,
                                    ("scheduler",))

    def _warm(self) -> None:
        for node in self._host_list:
            for image_id in sorted(self.catalog.images):
                self.transfers.seed_cache(node.node_id, image_id)

    def _prefetch_tick(self) -> None:
        plan = build_plan(self.prefetch, self.catalog, self._host_list)
        execute_plan(plan, self.transfers)
        if self.prefetch.period_s > 0 and self._pending_arrivals:
            self.engine.schedule_in(to_us(self.prefetch.period_s), EventKind.PREFETCH_TRIGGER,
                                    self._prefetch_tick, ("prefetch",))

    # -- VM lifecycle --------------------------------------------------------------

    def _arrival(self, request: VmRequest) -> None:
        self._pending_arrivals -= 1
        vm = VmInstance(request)
        self.vms.append(vm)
        try:
            decision = schedule(request, self._host_list, self.sched_config, self._tiebreak)
        except NoValidHost:
            self._fail(vm, "no-valid-host")
            return
        self.decisions.append(decision)
        self.recorder.add("decision", self._t(), f"req{request.request_id}",
                          request_id=request.request_id, node_id=decision.node_id,
                          omega_digest=decision.omega_digest(), tie=decision.tie,
                          tie_size=decision.tie_size)
        vm.node_id = decision.node_id
        vm.state = "booting"
        node = self.nodes[vm.node_id]
        node.running.append(vm)
        self.catalog.record_spawn(request.image_id)
        self._timed_phase(vm, "claim", self.phases.claim, self._download)

    def _timed_phase(self, vm: VmInstance, phase: str, seconds: float, then) -> None:
        start = self.engine.now
        dur = to_us(seconds)

        def done():
            vm.add_phase(phase, start, self.engine.now)
            then(vm)

        if dur == 0:
            done()
        else:
            self.engine.schedule_in(dur, EventKind.PHASE_COMPLETE, done, (vm.vm_id, phase))

    def _disk_phase(self, vm: VmInstance, phase: str, nbytes: int, then) -> None:
        start = self.engine.now

        def done(_flow=None):
            vm.add_phase(phase, start, self.engine.now)
            then(vm)

        self.network.start_path_flow([self.disk_channel[vm.node_id]], nbytes, on_complete=done,
                                     tag=(vm.vm_id, phase))

    def _download(self, vm: VmInstance) -> None:
        start = self.engine.now
        node = self.nodes[vm.node_id]
        image_id = vm.request.image_id
        node.pins[image_id] = node.pins.get(image_id, 0) + 1

        def done(_ticket=None):
            vm.add_phase("download", start, self.engine.now)
            self._duplication(vm)

        try:
            ticket = self.transfers.ensure_image(vm.node_id, image_id, done)
        except CacheSpaceError as exc:
            log.warning("%s: %s", vm.vm_id, exc)
            self._unpin(vm)
            vm.add_phase("download", start, start)
            self._fail(vm, "fetch-refused")
            return
        if ticket is None:
            done()

    def _duplication(self, vm: VmInstance) -> None:
        work = disk_work(vm.request.flavor, self.catalog[vm.request.image_id], self.cow)
        if "duplication" in work:
            self._disk_phase(vm, "duplication", work["duplication"], self._resize)
        else:
            self._timed_phase(vm, "duplication", self.phases.cow, self._resize)

    def _resize(self, vm: VmInstance) -> None:
        if not self.cow:
            self._unpin(vm)  # the raw copy no longer needs the base image
        self._timed_phase(vm, "resize", self.phases.resize, self._ephemeral)

    def _ephemeral(self, vm: VmInstance) -> None:
        eph = vm.request.flavor.ephemeral_bytes
        if not eph:
            self._timed_phase(vm, "ephemeral", 0.0, self._injection)
        elif self.cow:
            self._timed_phase(vm, "ephemeral", self.phases.cow, self._injection)
        else:
            self._disk_phase(vm, "ephemeral", eph, self._injection)

    def _injection(self, vm: VmInstance) -> None:
        self._timed_phase(vm, "injection", self.phases.inject, self._netconfig)

    def _netconfig(self, vm: VmInstance) -> None:
        self._timed_phase(vm, "netconfig", self.phases.net, self._active)

    def _active(self, vm: VmInstance) -> None:
        vm.state = "active"
        self._record_vm(vm)

    def _unpin(self, vm: VmInstance) -> None:
        node = self.nodes[vm.node_id]
        image_id = vm.request.image_id
        node.pins[image_id] -= 1
        if not node.pins[image_id]:
            del node.pins[image_id]

    def _fail(self, vm: VmInstance, reason: str) -> None:
        vm.state = "failed"
        vm.failure = reason
        if vm.node_id is not None:
            node = self.nodes[vm.node_id]
            node.running.remove(vm)
            release_resources(node, vm.request.flavor)
        self._record_vm(vm)

    def _t(self) -> float:
        return self.engine.now / 1e6

    def _record_vm(self, vm: VmInstance) -> None:
        req = vm.request
        durations = {f"{p}_s": None for p in PHASES}
        for phase, start, end in vm.phase_timeline:
            durations[f"{phase}_s"] = (end - start) / 1e6
        ready = vm.ready_at
        self.recorder.add("vm_boot", self._t(), vm.vm_id, request_id=req.request_id,
                          group_id=req.group_id, image_id=req.image_id, node_id=vm.node_id or "",
                          state=vm.state if vm.failure is None else f"failed:{vm.failure}",
                          arrival=req.arrival_time / 1e6,
                          ready=None if ready is None else ready / 1e6,
                          boot_time=None if ready is None else vm.boot_time / 1e6, **durations)

    # -- run ------------------------------------------------------------------------

    def run(self, until_s: Optional[float] = None) -> RunResult:
        self._pending_arrivals = len(self.trace)
        if self.scenario.data["warm_cache"] and self.protocol.kind is not ProtocolKind.SHARED:
            self._warm()
        seed_file = self.scenario.popularity_seed_path()
        if seed_file:
            load_popularity_seed(seed_file, self.catalog)
        for node in self._host_list:
            node.reported_cache = frozenset(node.cache)
        if self.report_interval and self._pending_arrivals:
            self.engine.schedule_in(self.report_interval, EventKind.CACHE_REPORT, self._report_caches,
                                    ("scheduler",))
        if self.prefetch.kind != "none" and self.protocol.kind is not ProtocolKind.SHARED:
            self.engine.schedule(0, EventKind.PREFETCH_TRIGGER, self._prefetch_tick, ("prefetch",))
        for req in self.trace:
            self.engine.schedule(req.arrival_time, EventKind.REQUEST_ARRIVAL,
                                 lambda r=req: self._arrival(r), (f"req{req.request_id}", req.image_id))
        self.engine.run_until(None if until_s is None else to_us(until_s))
        return self._finish()

    def _finish(self) -> RunResult:
        end = self._t()
        for t in self.transfers.history:
            self.recorder.add("fetch", t.requested_at / 1e6, f"{t.node_id}/{t.image_id}",
                              node_id=t.node_id, image_id=t.image_id, reason=t.reason,
                              requested=t.requested_at / 1e6,
                              started=None if t.started_at is None else t.started_at / 1e6,
                              completed=None if t.completed_at is None else t.completed_at / 1e6,
                              attached=t.attached)
        cap = self.topology.capacity
        for t, ch, rate in self.network.samples:
            if Topology.is_network(ch):
                self.recorder.add("link_sample", t / 1e6, ch, channel=ch, rate_bps=rate,
                                  capacity_bps=cap[ch])
        totals = self.network.network_bytes()
        for ch, nbytes in totals.items():
            self.recorder.add("link_total", end, ch, channel=ch, bytes=nbytes)
        egress = totals.get(f"nic:{self.catalog.endpoint}:up", 0)
        self.recorder.add("catalog_egress", end, self.catalog.endpoint, bytes=egress,
                          mean_rate_bps=egress / end if end > 0 else 0.0)
        records = self.recorder.records
        return RunResult(self.scenario, self.seed, records, summarize(records), self.vms,
                         self.decisions, list(self.transfers.history), self.engine, self.network,
                         self.nodes, self.catalog)


def run_scenario(scenario: Scenario, seed: Optional[int] = None, event_log: bool = False,
                 trace: Optional[Trace] = None) -> RunResult:
    return Simulation(scenario, seed, event_log, trace).run()
