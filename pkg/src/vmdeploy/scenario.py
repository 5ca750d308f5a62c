"""Scenario files: one YAML document describes one reproducible run.

Sizes use decimal units (1 GB = 10^9 bytes, 1 MB = 10^6 bytes) and link
speeds are in Gbit/s.
"""

from __future__ import annotations

import copy
import hashlib
import json
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Optional

import yaml

from .model import GB, MB, Flavor, ImageSpec, PhaseConstants
from .network import GBIT
from .prefetch import KINDS as PREFETCH_KINDS, PrefetchPolicy
from .scheduler import SchedulerConfig, max_instances_filter, capacity_filter
from .transfer import ProtocolKind, TransferProtocol
from .workload import TABLE1_ROWS, Trace, TraceSpec, generate_batch, generate_poisson_trace, \
    load_trace, table1_row

DEFAULTS: dict = {
    "name": "unnamed",
    "seed": None,
    "topology": {"nodes": 24, "switches": 2, "nic_gbps": 1.0, "catalog_nic_gbps": 1.0,
                 "trunk_gbps": 10.0},
    "hardware": {"vcpus": 8, "ram_gb": 16, "disk_gb": 140, "disk_mbps": 100,
                 "cache_budget_gb": None},
    "images": {"count": 1, "size_gb": 5, "prefix": "img"},
    "protocol": {"kind": "central", "label": "http", "piece_mb": 32, "max_active_downloads": 3,
                 "max_uploads": 4, "catalog_uploads": None, "max_requests": 4,
                 "piece_policy": "rarest", "publish_delay_s": 0.0},
    "scheduler": {"preset": "nocache", "cache_multiplier": 10.0, "ram_multiplier": 1.0,
                  "count_inflight_as_cached": False, "report_interval_s": 0.0,
                  "max_instances_per_host": None},
    "workload": {"kind": "batch", "row": "1x192", "rate_per_hour": 80.0, "duration_s": 3600.0,
                 "law": "uniform", "zipf_s": 1.0, "path": None, "start_s": 0.0},
    "flavor": {"vcpus": 1, "ram_gb": 2, "root_gb": 10, "ephemeral_gb": 0},
    "phases": {"claim": 1.0, "cow": 1.0, "resize": 2.0, "inject": 2.0, "net": 2.0},
    "cow": True,
    "warm_cache": False,
    "prefetch": {"kind": "none", "k": 1, "fraction": 1.0, "period_s": 0.0, "popularity_seed": None},
    "metrics": {"link_samples": False},
}

BUILTIN_PACKAGE = "vmdeploy.scenarios"


class ScenarioError(ValueError):
    def __init__(self, errors: list[str]):
        super().__init__("; ".join(errors))
        self.errors = errors


def _merge(base: dict, override: dict, prefix: str, errors: list[str]) -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        path = f"{prefix}{key}"
        if key not in base:
            errors.append(f"{path}: unknown key")
        elif isinstance(base[key], dict):
            if not isinstance(value, dict):
                errors.append(f"{path}: expected a table")
            else:
                out[key] = _merge(base[key], value, path + ".", errors)
        else:
            out[key] = value
    return out


def _image_list(data: dict) -> list[dict]:
    images = data["images"]
    if isinstance(images, list):
        return images
    return [{"id": f"{images['prefix']}{i}", "size_gb": images["size_gb"]}
            for i in range(int(images["count"]))]


@dataclass
class Scenario:
    data: dict
    source: Optional[Path] = None
    warnings: list = field(default_factory=list)

    # -- construction --------------------------------------------------------

    @classmethod
    def from_dict(cls, raw: dict, source: Optional[Path] = None, validate: bool = True) -> "Scenario":
        errors: list[str] = []
        raw = dict(raw)
        images = raw.pop("images", None)
        data = _merge(DEFAULTS, raw, "", errors)
        if images is not None:
            if isinstance(images, list):
                data["images"] = images
            elif isinstance(images, dict):
                data["images"] = _merge(DEFAULTS["images"], images, "images.", errors)
            else:
                errors.append("images: expected a table or a list")
        scenario = cls(data, Path(source) if source else None)
        if validate:
            errors += scenario._check()
            if errors:
                raise ScenarioError(errors)
        return scenario

    @classmethod
    def load(cls, path) -> "Scenario":
        path = Path(path)
        raw = yaml.safe_load(path.read_text())
        if not isinstance(raw, dict):
            raise ScenarioError([f"{path}: top level must be a table"])
        return cls.from_dict(raw, path)

    @classmethod
    def builtin(cls, name: str) -> "Scenario":
        ref = resources.files(BUILTIN_PACKAGE).joinpath(f"{name}.yaml")
        if not ref.is_file():
            raise ScenarioError([f"no built-in scenario {name!r}"])
        raw = yaml.safe_load(ref.read_text())
        return cls.from_dict(raw, None)

    @classmethod
    def resolve(cls, ref: str) -> "Scenario":
        """A path to a YAML file, or the name of a built-in scenario."""
        if Path(ref).is_file():
            return cls.load(ref)
        return cls.builtin(ref)

    def replace(self, **overrides) -> "Scenario":
        """Copy with dotted-key overrides, e.g. ``replace(**{"protocol.kind": "swarm"})``."""
        raw = copy.deepcopy(self.data)
        for dotted, value in overrides.items():
            node = raw
            *parents, leaf = dotted.split(".")
            for p in parents:
                node = node[p]
            node[leaf] = value
        return Scenario.from_dict(raw, self.source)

    # -- validation ------------------------------------------------------------

    def _check(self) -> list[str]:
        d = self.data
        errors: list[str] = []
        self.warnings = []

        def positive(path: str, value, allow_zero=False, allow_none=False):
            if value is None and allow_none:
                return
            ok = isinstance(value, (int, float)) and not isinstance(value, bool) and (
                value >= 0 if allow_zero else value > 0)
            if not ok:
                errors.append(f"{path}: must be {'non-negative' if allow_zero else 'positive'}, got {value!r}")

        if d["seed"] is None or not isinstance(d["seed"], int) or isinstance(d["seed"], bool) or d["seed"] < 0:
            errors.append(f"seed: required non-negative integer, got {d['seed']!r}")
        for k in ("nodes", "switches", "nic_gbps", "catalog_nic_gbps", "trunk_gbps"):
            positive(f"topology.{k}", d["topology"][k])
        for k in ("vcpus", "ram_gb", "disk_gb", "disk_mbps"):
            positive(f"hardware.{k}", d["hardware"][k])
        positive("hardware.cache_budget_gb", d["hardware"]["cache_budget_gb"], allow_none=True)
        for k in ("vcpus", "ram_gb", "root_gb"):
            positive(f"flavor.{k}", d["flavor"][k])
        positive("flavor.ephemeral_gb", d["flavor"]["ephemeral_gb"], allow_zero=True)
        for k, v in d["phases"].items():
            positive(f"phases.{k}", v, allow_zero=True)

        images = _image_list(d)
        ids = []
        for i, img in enumerate(images):
            if not isinstance(img, dict) or set(img) != {"id", "size_gb"}:
                errors.append(f"images[{i}]: expected keys id, size_gb")
                continue
            positive(f"images[{i}].size_gb", img["size_gb"])
            ids.append(str(img["id"]))
        if len(set(ids)) != len(ids):
            errors.append("images: duplicate image ids")
        if not ids:
            errors.append("images: at least one image is required")

        p = d["protocol"]
        if p["kind"] not in [k.value for k in ProtocolKind]:
            errors.append(f"protocol.kind: unknown protocol {p['kind']!r}")
        for k in ("piece_mb", "max_active_downloads", "max_uploads", "max_requests"):
            positive(f"protocol.{k}", p[k])
        positive("protocol.catalog_uploads", p["catalog_uploads"], allow_none=True)
        positive("protocol.publish_delay_s", p["publish_delay_s"], allow_zero=True)
        if p["piece_policy"] not in ("rarest", "random"):
            errors.append(f"protocol.piece_policy: unknown policy {p['piece_policy']!r}")

        s = d["scheduler"]
        if s["preset"] not in ("cache", "nocache"):
            errors.append(f"scheduler.preset: unknown preset {s['preset']!r}")
        positive("scheduler.report_interval_s", s["report_interval_s"], allow_zero=True)
        positive("scheduler.max_instances_per_host", s["max_instances_per_host"], allow_none=True)

        w = d["workload"]
        positive("workload.start_s", w["start_s"], allow_zero=True)
        needed: list[str] = []
        if w["kind"] == "batch":
            if w["row"] not in TABLE1_ROWS:
                try:
                    n_img, per = (int(x) for x in str(w["row"]).split("x"))
                    if n_img <= 0 or per <= 0:
                        raise ValueError
                except ValueError:
                    errors.append(f"workload.row: bad batch row {w['row']!r}")
            try:
                spec = table1_row(str(w["row"]), self.image_prefix)
                needed = [g[0] for g in spec.groups]
                total = spec.total
                per_host = spec.per_host_cap
                self._capacity_warnings(total, per_host)
            except ValueError:
                pass
        elif w["kind"] == "poisson":
            positive("workload.rate_per_hour", w["rate_per_hour"])
            positive("workload.duration_s", w["duration_s"])
            if w["law"] not in ("uniform", "zipf"):
                errors.append(f"workload.law: unknown law {w['law']!r}")
            positive("workload.zipf_s", w["zipf_s"], allow_zero=True)
        elif w["kind"] == "file":
            if not w["path"]:
                errors.append("workload.path: required for file workloads")
            else:
                try:
                    needed = sorted({r.image_id for r in load_trace(self._path(w["path"]))})
                except (OSError, ValueError) as exc:
                    errors.append(f"workload.path: {exc}")
        else:
            errors.append(f"workload.kind: unknown kind {w['kind']!r}")
        for image_id in needed:
            if image_id not in ids:
                errors.append(f"workload: image {image_id!r} is not defined in images")

        pf = d["prefetch"]
        if pf["kind"] not in PREFETCH_KINDS:
            errors.append(f"prefetch.kind: unknown policy {pf['kind']!r}")
        positive("prefetch.k", pf["k"])
        if not isinstance(pf["fraction"], (int, float)) or not 0 < pf["fraction"] <= 1:
            errors.append(f"prefetch.fraction: must be in (0, 1], got {pf['fraction']!r}")
        positive("prefetch.period_s", pf["period_s"], allow_zero=True)
        return errors

    def _capacity_warnings(self, total: int, per_host: int) -> None:
        d = self.data
        hw, fl = d["hardware"], d["flavor"]
        nodes = d["topology"]["nodes"]
        cap = d["scheduler"]["max_instances_per_host"] or per_host
        # the densest packing the batch allows, and the one it forces
        densities = sorted({cap, math.ceil(total / nodes) if nodes else 0}, reverse=True)
        for n in densities:
            if n * fl["vcpus"] > hw["vcpus"]:
                self.warnings.append(
                    f"capacity: {n} x {fl['vcpus']}-vCPU VMs per host exceed {hw['vcpus']} host vCPUs")
                break
        for n in densities:
            if n * fl["ram_gb"] > hw["ram_gb"]:
                self.warnings.append(
                    f"capacity: {n} x {fl['ram_gb']} GB RAM per host exceed {hw['ram_gb']} GB")
                break
        if total > nodes * cap:
            self.warnings.append(f"capacity: {total} VMs exceed {nodes} hosts x {cap}")

    def _path(self, p: str) -> Path:
        path = Path(p)
        if not path.is_absolute() and self.source is not None:
            path = self.source.parent / path
        return path

    # -- typed views -----------------------------------------------------------

    @property
    def name(self) -> str:
        return self.data["name"]

    @property
    def seed(self) -> int:
        return int(self.data["seed"])

    @property
    def image_prefix(self) -> str:
        imgs = self.data["images"]
        return imgs["prefix"] if isinstance(imgs, dict) else "img"

    def digest(self) -> str:
        canon = json.dumps(self.data, sort_keys=True, separators=(",", ":"), default=str)
        return hashlib.sha256(canon.encode()).hexdigest()

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.data, sort_keys=False)

    def images(self) -> list[ImageSpec]:
        piece = int(round(self.data["protocol"]["piece_mb"] * MB))
        return [ImageSpec(str(i["id"]), int(round(i["size_gb"] * GB)), piece)
                for i in _image_list(self.data)]

    def flavor(self) -> Flavor:
        f = self.data["flavor"]
        return Flavor(int(f["vcpus"]), int(round(f["ram_gb"] * GB)), int(round(f["root_gb"] * GB)),
                      int(round(f["ephemeral_gb"] * GB)))

    def phases(self) -> PhaseConstants:
        return PhaseConstants(**{k: float(v) for k, v in self.data["phases"].items()})

    def protocol(self) -> TransferProtocol:
        p = self.data["protocol"]
        return TransferProtocol(kind=p["kind"], label=p["label"],
                                max_active_downloads=int(p["max_active_downloads"]),
                                max_uploads=int(p["max_uploads"]),
                                catalog_uploads=p["catalog_uploads"],
                                max_requests=int(p["max_requests"]),
                                piece_policy=p["piece_policy"],
                                publish_delay_s=float(p["publish_delay_s"]))

    def scheduler(self) -> SchedulerConfig:
        s = self.data["scheduler"]
        cfg = SchedulerConfig.preset(s["preset"], float(s["cache_multiplier"]),
                                     float(s["ram_multiplier"]), bool(s["count_inflight_as_cached"]))
        limit = s["max_instances_per_host"]
        if limit is None and self.data["workload"]["kind"] == "batch":
            limit = table1_row(str(self.data["workload"]["row"])).per_host_cap
        if limit:
            cfg.filters = [capacity_filter, max_instances_filter(int(limit))]
        return cfg

    def prefetch_policy(self) -> PrefetchPolicy:
        pf = self.data["prefetch"]
        return PrefetchPolicy(pf["kind"], int(pf["k"]), float(pf["fraction"]), float(pf["period_s"]))

    def popularity_seed_path(self) -> Optional[Path]:
        p = self.data["prefetch"]["popularity_seed"]
        return self._path(p) if p else None

    def node_ids(self) -> list[str]:
        return [f"node{i:02d}" for i in range(int(self.data["topology"]["nodes"]))]

    def link_speeds(self) -> dict:
        t = self.data["topology"]
        return {"nic_bps": int(round(t["nic_gbps"] * GBIT)),
                "catalog_nic_bps": int(round(t["catalog_nic_gbps"] * GBIT)),
                "trunk_bps": int(round(t["trunk_gbps"] * GBIT)),
                "switches": int(t["switches"])}

    def hardware(self) -> dict:
        h = self.data["hardware"]
        budget = h["cache_budget_gb"]
        return {"vcpus_total": int(h["vcpus"]), "ram_total": int(round(h["ram_gb"] * GB)),
                "disk_total": int(round(h["disk_gb"] * GB)),
                "disk_bandwidth": int(round(h["disk_mbps"] * MB)),
                "cache_budget": None if budget is None else int(round(budget * GB))}

    def trace(self, seed: Optional[int] = None) -> Trace:
        from .kernel import rng_stream, to_us

        w = self.data["workload"]
        seed = self.seed if seed is None else seed
        flavor = self.flavor()
        if w["kind"] == "batch":
            trace = generate_batch(table1_row(str(w["row"]), self.image_prefix, flavor))
        elif w["kind"] == "poisson":
            pool = [img.image_id for img in self.images()]
            spec = TraceSpec(float(w["rate_per_hour"]), float(w["duration_s"]), pool, w["law"],
                             float(w["zipf_s"]), flavor)
            trace = generate_poisson_trace(spec, rng_stream(seed, "arrivals"), rng_stream(seed, "images"))
        else:
            trace = load_trace(self._path(w["path"]))
        start = to_us(float(w["start_s"]))
        return trace.shifted(start) if start else trace


def builtin_names() -> list[str]:
    root = resources.files(BUILTIN_PACKAGE)
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".yaml"))
