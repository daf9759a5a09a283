"""Road network data model and its JSON file format.

Paths are enumerated in the input, not generated.  The file schema is::

    {
      "nodes": ["A", "B"],
      "links": [{"id": "L1", "tail": "A", "head": "B", "a": 1.0, "b": 0.1}],
      "paths": [{"id": "P1", "od": ["A", "B"], "links": ["L1"]}],
      "od_pairs": [{"origin": "A", "destination": "B", "Q": 10.0, "T_A": 2.0}]
    }

``a`` is the link free-flow time, ``b`` the congestion slope (time per
vehicle), ``Q`` the travel demand and ``T_A`` the target arrival time.
Unknown keys are rejected.
"""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import InputError


@dataclass(frozen=True)
class Link:
    id: str
    tail: str
    head: str
    free_flow_time: float
    congestion_slope: float


@dataclass(frozen=True)
class OdPair:
    origin: str
    destination: str
    demand: float
    target_arrival: float

    @property
    def key(self) -> tuple:
        return (self.origin, self.destination)


@dataclass(frozen=True)
class Path:
    id: str
    od: tuple
    links: tuple


@dataclass(frozen=True)
class NetworkSpec:
    nodes: tuple
    links: tuple
    paths: tuple
    od_pairs: tuple

    @cached_property
    def links_by_id(self) -> dict:
        return {link.id: link for link in self.links}

    @cached_property
    def od_by_key(self) -> dict:
        return {od.key: od for od in self.od_pairs}

    @property
    def path_ids(self) -> list:
        return [p.id for p in self.paths]

    @property
    def od_keys(self) -> list:
        return [od.key for od in self.od_pairs]

    def paths_of_od(self, key) -> list:
        return [p for p in self.paths if p.od == tuple(key)]

    def od_of_path(self, path: Path) -> OdPair:
        return self.od_by_key[path.od]


def validate(spec: NetworkSpec, grid=None) -> list:
    """Collect invariant violations as human-readable strings.

    An empty list means the network is well formed.  When ``grid`` is given,
    target arrival times are additionally checked against the horizon.
    """
    problems = []
    nodes = set(spec.nodes)
    if len(nodes) != len(spec.nodes):
        problems.append("nodes: duplicate identifiers")

    seen = set()
    for link in spec.links:
        if link.id in seen:
            problems.append(f"link {link.id}: duplicate identifier")
        seen.add(link.id)
        if link.free_flow_time <= 0.0:
            problems.append(f"link {link.id}: free-flow time must be positive")
        if link.congestion_slope < 0.0:
            problems.append(f"link {link.id}: congestion slope must be nonnegative")
        for endpoint in (link.tail, link.head):
            if endpoint not in nodes:
                problems.append(f"link {link.id}: unknown node {endpoint!r}")

    od_keys = set()
    for od in spec.od_pairs:
        if od.key in od_keys:
            problems.append(f"od_pair {od.key}: duplicate O-D pair")
        od_keys.add(od.key)
        if od.demand <= 0.0:
            problems.append(f"od_pair {od.key}: demand must be positive")
        for endpoint in od.key:
            if endpoint not in nodes:
                problems.append(f"od_pair {od.key}: unknown node {endpoint!r}")
        if grid is not None and not (grid.t0 <= od.target_arrival <= grid.tf):
            problems.append(
                f"od_pair {od.key}: target arrival {od.target_arrival} "
                f"outside horizon [{grid.t0}, {grid.tf}]")
        if not spec.paths_of_od(od.key):
            problems.append(f"od_pair {od.key}: no path serves it")

    links_by_id = {link.id: link for link in spec.links}
    path_ids = set()
    for path in spec.paths:
        if path.id in path_ids:
            problems.append(f"path {path.id}: duplicate identifier")
        path_ids.add(path.id)
        if path.od not in od_keys:
            problems.append(f"path {path.id}: unknown O-D pair {path.od}")
            continue
        if not path.links:
            problems.append(f"path {path.id}: empty link sequence")
            continue
        missing = [lid for lid in path.links if lid not in links_by_id]
        if missing:
            problems.append(f"path {path.id}: unknown links {missing}")
            continue
        chain = [links_by_id[lid] for lid in path.links]
        if chain[0].tail != path.od[0]:
            problems.append(
                f"path {path.id}: first link starts at {chain[0].tail!r}, "
                f"not the origin {path.od[0]!r}")
        if chain[-1].head != path.od[1]:
            problems.append(
                f"path {path.id}: last link ends at {chain[-1].head!r}, "
                f"not the destination {path.od[1]!r}")
        for left, right in zip(chain, chain[1:]):
            if left.head != right.tail:
                problems.append(
                    f"path {path.id}: links {left.id} and {right.id} "
                    f"do not share a node")
        visited = [chain[0].tail] + [link.head for link in chain]
        if len(set(visited)) != len(visited):
            problems.append(f"path {path.id}: repeated node in sequence")
    return problems


def path_incidence(spec: NetworkSpec) -> np.ndarray:
    """0/1 matrix (paths x O-D pairs): entry 1 iff the path serves the pair."""
    od_index = {key: j for j, key in enumerate(spec.od_keys)}
    out = np.zeros((len(spec.paths), len(spec.od_pairs)))
    for i, path in enumerate(spec.paths):
        if path.od not in od_index:
            raise InputError(f"path {path.id} references unknown O-D pair "
                             f"{path.od}")
        out[i, od_index[path.od]] = 1.0
    return out


_TOP_KEYS = {"nodes", "links", "paths", "od_pairs"}
_LINK_KEYS = {"id", "tail", "head", "a", "b"}
_PATH_KEYS = {"id", "od", "links"}
_OD_KEYS = {"origin", "destination", "Q", "T_A"}


def _check_keys(obj, allowed, where):
    if not isinstance(obj, dict):
        raise InputError("expected an object", location=where)
    unknown = set(obj) - allowed
    if unknown:
        raise InputError(f"unknown key {sorted(unknown)[0]!r}", location=where)


def _field(obj, key, where, kind=None):
    if key not in obj:
        raise InputError("missing required field", location=f"{where}.{key}")
    value = obj[key]
    if kind is float:
        if not isinstance(value, (int, float)) or isinstance(value, bool):
            raise InputError("expected a number", location=f"{where}.{key}")
        return float(value)
    if kind is str:
        if not isinstance(value, str):
            raise InputError("expected a string", location=f"{where}.{key}")
    if kind is list and not isinstance(value, list):
        raise InputError("expected a list", location=f"{where}.{key}")
    return value


def parse_network(obj) -> NetworkSpec:
    _check_keys(obj, _TOP_KEYS, "network")
    for key in _TOP_KEYS:
        _field(obj, key, "network", list)

    nodes = tuple(str(n) for n in obj["nodes"])

    links = []
    for i, entry in enumerate(obj["links"]):
        where = f"links[{i}]"
        _check_keys(entry, _LINK_KEYS, where)
        links.append(Link(
            id=str(_field(entry, "id", where, str)),
            tail=str(_field(entry, "tail", where, str)),
            head=str(_field(entry, "head", where, str)),
            free_flow_time=_field(entry, "a", where, float),
            congestion_slope=_field(entry, "b", where, float),
        ))

    od_pairs = []
    for i, entry in enumerate(obj["od_pairs"]):
        where = f"od_pairs[{i}]"
        _check_keys(entry, _OD_KEYS, where)
        od_pairs.append(OdPair(
            origin=str(_field(entry, "origin", where, str)),
            destination=str(_field(entry, "destination", where, str)),
            demand=_field(entry, "Q", where, float),
            target_arrival=_field(entry, "T_A", where, float),
        ))

    paths = []
    for i, entry in enumerate(obj["paths"]):
        where = f"paths[{i}]"
        _check_keys(entry, _PATH_KEYS, where)
        od = _field(entry, "od", where, list)
        if len(od) != 2:
            raise InputError("expected [origin, destination]",
                             location=f"{where}.od")
        paths.append(Path(
            id=str(_field(entry, "id", where, str)),
            od=(str(od[0]), str(od[1])),
            links=tuple(str(x) for x in _field(entry, "links", where, list)),
        ))

    return NetworkSpec(nodes=nodes, links=tuple(links), paths=tuple(paths),
                       od_pairs=tuple(od_pairs))


def load_network(path) -> NetworkSpec:
    try:
        with open(path, "r", encoding="utf-8") as handle:
            obj = json.load(handle)
    except FileNotFoundError:
        raise InputError(f"network file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise InputError(f"invalid JSON in {path}: {exc}") from None
    return parse_network(obj)


def network_to_dict(spec: NetworkSpec) -> dict:
    return {
        "nodes": list(spec.nodes),
        "links": [{"id": l.id, "tail": l.tail, "head": l.head,
                   "a": l.free_flow_time, "b": l.congestion_slope}
                  for l in spec.links],
        "paths": [{"id": p.id, "od": list(p.od), "links": list(p.links)}
                  for p in spec.paths],
        "od_pairs": [{"origin": od.origin, "destination": od.destination,
                      "Q": od.demand, "T_A": od.target_arrival}
                     for od in spec.od_pairs],
    }


def save_network(spec: NetworkSpec, path) -> None:
    # write-then-rename keeps partially written files from being picked up
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as handle:
            json.dump(network_to_dict(spec), handle, indent=2)
            handle.write("\n")
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
