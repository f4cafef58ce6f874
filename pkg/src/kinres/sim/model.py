"""Humanoid model description: kinematic tree, inertias, gains, contact geometry."""
from __future__ import annotations

from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Optional

import numpy as np
import yaml

END_EFFECTORS = ("foot_l", "foot_r", "hand_l", "hand_r", "head")
_AXES = {"x": (1.0, 0.0, 0.0), "y": (0.0, 1.0, 0.0), "z": (0.0, 0.0, 1.0)}


class ModelError(ValueError):
    pass


@dataclass(frozen=True)
class Hinge:
    name: str
    axis: np.ndarray
    lower: float
    upper: float
    kp: float
    kd: float


@dataclass(frozen=True)
class Geom:
    kind: str  # capsule | sphere | box
    radius: float = 0.0
    p0: np.ndarray = field(default_factory=lambda: np.zeros(3))
    p1: np.ndarray = field(default_factory=lambda: np.zeros(3))
    half: np.ndarray = field(default_factory=lambda: np.zeros(3))

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.p0 + self.p1) if self.kind == "capsule" else self.p0

    def contact_spheres(self) -> list:
        """(local point, radius) pairs used by the penalty contact model."""
        if self.kind == "sphere":
            return [(self.p0, self.radius)]
        if self.kind == "capsule":
            mid = 0.5 * (self.p0 + self.p1)
            return [(self.p0, self.radius), (mid, self.radius), (self.p1, self.radius)]
        c, h = self.p0, self.half
        pts = []
        for sx in (-1, 1):
            for sy in (-1, 1):
                for sz in (-1, 1):
                    pts.append((c + h * np.array([sx, sy, sz]), 0.0))
        return pts

    def inertia(self, mass: float) -> np.ndarray:
        """Solid-body inertia about the geometry center, in the link frame."""
        if self.kind == "sphere":
            return np.eye(3) * 0.4 * mass * self.radius ** 2
        if self.kind == "box":
            a, b, c = 2 * self.half
            return np.diag([mass * (b * b + c * c), mass * (a * a + c * c),
                            mass * (a * a + b * b)]) / 12.0
        d = self.p1 - self.p0
        length = float(np.linalg.norm(d)) + 2 * self.radius
        u = d / max(np.linalg.norm(d), 1e-12)
        r = self.radius
        i_ax = 0.5 * mass * r * r
        i_perp = mass * (3 * r * r + length * length) / 12.0
        return i_perp * np.eye(3) + (i_ax - i_perp) * np.outer(u, u)


@dataclass(frozen=True)
class Link:
    name: str
    parent: int
    offset: np.ndarray
    hinges: tuple
    mass: float
    com: np.ndarray
    inertia: np.ndarray
    geom: Geom


@dataclass(frozen=True)
class Site:
    link: int
    point: np.ndarray


class HumanoidModel:
    """Tree of links joined by hinge DoFs; a link with several hinges acts
    as a ball/universal joint applied in declared order."""

    def __init__(self, name: str, links: list, sites: dict, end_effectors: tuple,
                 head_site: str, fixed_base: bool = False, root_height: float = 0.9,
                 mpjpe_sites: tuple = ()):
        self.name = name
        self.links = tuple(links)
        self.sites = dict(sites)
        self.end_effectors = tuple(end_effectors)
        self.head_site = head_site
        self.fixed_base = fixed_base
        self.root_height = root_height
        self.mpjpe_sites = tuple(mpjpe_sites)
        self._validate()
        self._build_arrays()

    def _validate(self):
        if not self.links or self.links[0].parent != -1:
            raise ModelError("first link must be the root (parent null)")
        for i, ln in enumerate(self.links[1:], start=1):
            if not 0 <= ln.parent < i:
                raise ModelError(f"link {ln.name!r}: parent must precede it (tree order)")
        if any(ln.parent == -1 for ln in self.links[1:]):
            raise ModelError("model must have a single root")
        for ln in self.links:
            if not ln.mass > 0:
                raise ModelError(f"link {ln.name!r}: mass must be positive")
            for h in ln.hinges:
                if not h.kp > 0 or h.kd < 0:
                    raise ModelError(f"hinge {h.name!r}: need kp > 0 and kd >= 0")
                if h.lower > h.upper:
                    raise ModelError(f"hinge {h.name!r}: lower limit above upper")
        if self.links[0].hinges:
            raise ModelError("the root link carries no hinges")
        for ee in self.end_effectors:
            if ee not in self.sites:
                raise ModelError(f"end effector {ee!r} has no site")
        if self.head_site not in self.sites:
            raise ModelError(f"head site {self.head_site!r} missing")

    def _build_arrays(self):
        nl = len(self.links)
        hinges = [h for ln in self.links for h in ln.hinges]
        self.hinges = tuple(hinges)
        self.dof = len(hinges)
        self.nv = 6 + self.dof
        self.joint_names = tuple(h.name for h in hinges)
        self.parent = np.array([ln.parent for ln in self.links], dtype=np.int64)
        self.offset = np.array([ln.offset for ln in self.links], dtype=float)
        self.mass = np.array([ln.mass for ln in self.links], dtype=float)
        self.com = np.array([ln.com for ln in self.links], dtype=float)
        self.inertia = np.array([ln.inertia for ln in self.links], dtype=float)
        starts, counts = [], []
        k = 0
        groups = []
        for ln in self.links:
            starts.append(k)
            counts.append(len(ln.hinges))
            if ln.hinges:
                groups.append(tuple(range(k, k + len(ln.hinges))))
            k += len(ln.hinges)
        self.dof_start = np.array(starts, dtype=np.int64)
        self.dof_count = np.array(counts, dtype=np.int64)
        self.joint_groups = tuple(groups)
        self.dof_axis = np.array([h.axis for h in hinges], dtype=float).reshape(-1, 3)
        self.lower = np.array([h.lower for h in hinges], dtype=float)
        self.upper = np.array([h.upper for h in hinges], dtype=float)
        self.kp = np.array([h.kp for h in hinges], dtype=float)
        self.kd = np.array([h.kd for h in hinges], dtype=float)
        # chain mask: ancestor[i, j] true when link j is on the path root..i
        anc = np.zeros((nl, nl), dtype=np.bool_)
        for i in range(nl):
            j = i
            while j >= 0:
                anc[i, j] = True
                j = self.parent[j]
        self.ancestor = anc
        cl, cp, cr, cf = [], [], [], []
        feet = {self.sites[s].link for s in ("foot_l", "foot_r") if s in self.sites}
        for i, ln in enumerate(self.links):
            for p, r in ln.geom.contact_spheres():
                cl.append(i)
                cp.append(p)
                cr.append(r)
                cf.append(i in feet)
        self.contact_link = np.array(cl, dtype=np.int64)
        self.contact_point = np.array(cp, dtype=float).reshape(-1, 3)
        self.contact_radius = np.array(cr, dtype=float)
        self.contact_is_foot = np.array(cf, dtype=np.bool_)
        self.total_mass = float(self.mass.sum())
        self.link_index = {ln.name: i for i, ln in enumerate(self.links)}
        self.head_link = self.sites[self.head_site].link

    @property
    def pd_gains(self) -> np.ndarray:
        return np.stack([self.kp, self.kd], axis=1)

    def clamp(self, q: np.ndarray) -> np.ndarray:
        return np.minimum(np.maximum(q, self.lower), self.upper)

    def site_names(self) -> tuple:
        return tuple(self.sites)


def _axis(v) -> np.ndarray:
    if isinstance(v, str):
        return np.array(_AXES[v])
    a = np.asarray(v, dtype=float)
    return a / np.linalg.norm(a)


def _geom(g: dict) -> Geom:
    kind = g["type"]
    if kind == "capsule":
        return Geom("capsule", float(g["radius"]), np.asarray(g["from"], float), np.asarray(g["to"], float))
    if kind == "sphere":
        return Geom("sphere", float(g["radius"]), np.asarray(g.get("center", (0, 0, 0)), float))
    if kind == "box":
        return Geom("box", 0.0, np.asarray(g.get("center", (0, 0, 0)), float),
                    half=np.asarray(g["half"], float))
    raise ModelError(f"unknown geometry type {kind!r}")


def model_from_dict(d: dict) -> HumanoidModel:
    names = {}
    links = []
    for i, ld in enumerate(d["links"]):
        name = ld["name"]
        parent = ld.get("parent")
        if parent is None:
            pidx = -1
        elif parent not in names:
            raise ModelError(f"link {name!r}: unknown parent {parent!r}")
        else:
            pidx = names[parent]
        names[name] = i
        geom = _geom(ld["geom"])
        mass = float(ld["mass"])
        com = np.asarray(ld.get("com", geom.center), float)
        if "inertia" in ld:
            inertia = np.diag(np.asarray(ld["inertia"], float))
        else:
            inertia = geom.inertia(mass)
        hinges = tuple(
            Hinge(j["name"], _axis(j["axis"]), float(j["range"][0]), float(j["range"][1]),
                  float(j["kp"]), float(j["kd"]))
            for j in ld.get("joints", ()))
        links.append(Link(name, pidx, np.asarray(ld.get("offset", (0, 0, 0)), float),
                          hinges, mass, com, inertia, geom))
    sites = {}
    for sname, sd in d.get("sites", {}).items():
        if sd["link"] not in names:
            raise ModelError(f"site {sname!r}: unknown link {sd['link']!r}")
        sites[sname] = Site(names[sd["link"]], np.asarray(sd.get("point", (0, 0, 0)), float))
    return HumanoidModel(
        d.get("name", "model"), links, sites,
        tuple(d.get("end_effectors", END_EFFECTORS)),
        d.get("head_site", "head"),
        bool(d.get("fixed_base", False)),
        float(d.get("root_height", 0.9)),
        tuple(d.get("mpjpe_sites", ())),
    )


def load_model(path: Optional[str | Path] = None) -> HumanoidModel:
    """Load a model YAML; ``None`` or a bare builtin name loads packaged data."""
    if path is None:
        path = "mini_humanoid"
    p = Path(path)
    if not p.exists() and p.suffix == "" and "/" not in str(path):
        text = resources.files("kinres.data").joinpath(f"{path}.yaml").read_text()
    else:
        try:
            text = p.read_text()
        except OSError as e:
            raise ModelError(f"cannot read model file {path}: {e}") from None
    d = yaml.safe_load(text)
    if "model" in d:
        d = d["model"]
    return model_from_dict(d)
