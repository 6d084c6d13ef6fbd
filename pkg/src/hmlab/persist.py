"""Versioned persistence for lab artifacts and stable CSV emission.

Samples go to CSV with a header naming the boundary dimension; trees to a
JSON/npz hybrid (cube table plus the atom assignment matrix); measures to
(leaf id, mass) CSV with exact rational masses; reports to JSON.  Floating
values in CSV bodies are written with six significant digits so repeated runs
are byte-identical.
"""

from __future__ import annotations

import json
from fractions import Fraction
from pathlib import Path

import numpy as np

from .domains import BoundarySample
from .dyadic import DyadicCube, DyadicTree
from .treemeasure import TreeMeasure

SCHEMA_VERSION = "hmlab-v1"


class PersistError(RuntimeError):
    pass


def _check_version(tag: str, path) -> None:
    if tag != SCHEMA_VERSION:
        raise PersistError(f"{path}: schema {tag!r} does not match "
                           f"{SCHEMA_VERSION!r}; migrate or rebuild")


def fmt(x: float) -> str:
    return f"{x:.6g}"


# -- boundary samples --------------------------------------------------------

def save_sample(sample: BoundarySample, path) -> None:
    path = Path(path)
    cols = [f"x{i}" for i in range(sample.dim)] + ["weight"]
    with open(path, "w") as fh:
        fh.write(f"# {SCHEMA_VERSION} boundary_sample n={sample.n} "
                 f"units=length^{sample.n}\n")
        fh.write(",".join(cols) + "\n")
        for p, w in zip(sample.points, sample.weights):
            fh.write(",".join(repr(float(v)) for v in p) +
                     f",{float(w)!r}\n")


def load_sample(path) -> BoundarySample:
    path = Path(path)
    with open(path) as fh:
        header = fh.readline().strip()
        if not header.startswith("#"):
            raise PersistError(f"{path}: missing schema header")
        parts = header[1:].split()
        _check_version(parts[0], path)
        n = int(parts[2].split("=")[1])
        fh.readline()
        rows = [list(map(float, line.strip().split(","))) for line in fh if line.strip()]
    arr = np.array(rows)
    return BoundarySample(points=arr[:, :-1], weights=arr[:, -1], n=n)


# -- trees --------------------------------------------------------------------

def save_tree(tree: DyadicTree, path) -> None:
    path = Path(path)
    meta = {"schema": SCHEMA_VERSION, "kind": "dyadic_tree",
            "k_min": tree.k_min, "k_max": tree.k_max,
            "roots": tree.roots,
            "cubes": [{"id": c.id, "k": c.k, "anchor": c.anchor_atom,
                       "center": c.center_atom, "parent": c.parent,
                       "children": c.children, "mass": c.sigma_mass,
                       "inner": c.inner_radius, "outer": c.outer_radius}
                      for c in tree.cubes]}
    np.savez_compressed(path.with_suffix(".npz"), assign=tree.assign,
                        points=tree.sample.points, weights=tree.sample.weights,
                        n=np.array([tree.sample.n]))
    path.write_text(json.dumps(meta))


def load_tree(path) -> DyadicTree:
    path = Path(path)
    meta = json.loads(path.read_text())
    _check_version(meta.get("schema", "?"), path)
    data = np.load(path.with_suffix(".npz"))
    sample = BoundarySample(points=data["points"], weights=data["weights"],
                            n=int(data["n"][0]))
    tree = DyadicTree(sample, meta["k_min"], meta["k_max"])
    tree.assign = data["assign"]
    tree.roots = list(meta["roots"])
    for cd in meta["cubes"]:
        cube = DyadicCube(id=cd["id"], k=cd["k"], anchor_atom=cd["anchor"],
                          parent=cd["parent"], children=list(cd["children"]),
                          center_atom=cd["center"], sigma_mass=cd["mass"],
                          inner_radius=cd["inner"], outer_radius=cd["outer"])
        tree.cubes.append(cube)
    return tree


# -- measures ------------------------------------------------------------------

def save_measure(measure: TreeMeasure, path) -> None:
    path = Path(path)
    with open(path, "w") as fh:
        fh.write(f"# {SCHEMA_VERSION} tree_measure\n")
        fh.write("leaf,mass\n")
        for q in sorted(measure.leaf):
            m = measure.leaf[q]
            fh.write(f"{q},{m.numerator}/{m.denominator}\n")


def load_measure(tree, path) -> TreeMeasure:
    path = Path(path)
    with open(path) as fh:
        header = fh.readline().strip()
        if not header.startswith("#"):
            raise PersistError(f"{path}: missing schema header")
        _check_version(header[1:].split()[0], path)
        fh.readline()
        leaf = {}
        for line in fh:
            if not line.strip():
                continue
            q, m = line.strip().split(",")
            num, den = m.split("/")
            leaf[int(q)] = Fraction(int(num), int(den))
    return TreeMeasure(tree, leaf)


# -- generic tables / reports ---------------------------------------------------

def save_csv(path, columns: list[str], rows: list[list]) -> None:
    with open(path, "w") as fh:
        fh.write(f"# {SCHEMA_VERSION}\n")
        fh.write(",".join(columns) + "\n")
        for row in rows:
            fh.write(",".join(fmt(v) if isinstance(v, float) else str(v)
                              for v in row) + "\n")


def save_report(path, payload: dict) -> None:
    def default(o):
        if isinstance(o, Fraction):
            return {"num": o.numerator, "den": o.denominator}
        if isinstance(o, (np.integer,)):
            return int(o)
        if isinstance(o, (np.floating,)):
            return float(o)
        if isinstance(o, np.ndarray):
            return o.tolist()
        raise TypeError(f"unserializable {type(o)}")
    Path(path).write_text(json.dumps({"schema": SCHEMA_VERSION, **payload},
                                     indent=1, sort_keys=True, default=default))


def load_report(path) -> dict:
    payload = json.loads(Path(path).read_text())
    _check_version(payload.get("schema", "?"), path)
    return payload
