"""
Problem spec JSON ingest and serialization.

Top-level keys: orbits (or points + maps), exterior_terms, rhs, truncation,
plus optional name and description. Angles are radians.
"""
import json
import logging
import math
import os
from typing import Any, Dict, List, Optional

import numpy as np

from services.lib.errors import SpecFormatError
from services.lib.geometry import (
    BoundaryMap, ConjugationPoint, ExteriorTerm, NonlocalTerm, OrbitModel, PrincipalPart,
    ProblemSpec, RightHandSide, SideTrace, Truncation, models_from_points,
)
from services.lib.profiles import ScalarProfile

logger = logging.getLogger("spec_io")

REPO_ROOT = os.path.dirname(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))
SPECS_DIR = os.path.join(REPO_ROOT, "specs")
EXAMPLE_IDS = ("case1", "case2", "case3", "dirichlet", "bitsadze-border", "two-orbits-mixed")

HALF_PI = math.pi / 2


def _require(doc: Dict[str, Any], key: str, where: str) -> Any:
    if key not in doc:
        raise SpecFormatError(f"{where}: missing key '{key}'")
    return doc[key]


def _number(value: Any, where: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise SpecFormatError(f"{where}: expected a number, got {value!r}")
    if not math.isfinite(value):
        raise SpecFormatError(f"{where}: expected a finite number, got {value!r}")
    return float(value)


def _parse_term(doc: Dict[str, Any], where: str) -> NonlocalTerm:
    profile = doc.get("weight_profile")
    profile = ScalarProfile.parse(profile) if profile is not None else None
    if "weight" in doc:
        weight = _number(doc["weight"], f"{where}.weight")
    elif profile is not None:
        # value at r = 0 does not depend on the side angle
        weight = profile.at_vertex()
    else:
        raise SpecFormatError(f"{where}: needs 'weight' or 'weight_profile'")
    return NonlocalTerm(
        j=int(_require(doc, "j", where)),
        sigma=int(_require(doc, "sigma", where)),
        k=int(_require(doc, "k", where)),
        s=int(_require(doc, "s", where)),
        weight_at_vertex=weight,
        rotation=_number(doc.get("rotation", 0.0), f"{where}.rotation"),
        homothety=_number(doc.get("homothety", 1.0), f"{where}.homothety"),
        weight_profile=profile,
    )


def _parse_orbit(doc: Dict[str, Any], where: str) -> OrbitModel:
    angles = _require(doc, "angles", where)
    if not isinstance(angles, list):
        raise SpecFormatError(f"{where}.angles must be a list")
    parts = doc.get("principal_parts", [])
    return OrbitModel(
        orbit_id=int(_require(doc, "orbit_id", where)),
        angles=tuple(_number(a, f"{where}.angles") for a in angles),
        terms=tuple(_parse_term(t, f"{where}.terms[{n}]") for n, t in enumerate(doc.get("terms", []))),
        principal_parts=tuple(
            PrincipalPart(p11=_number(p.get("p11", 1.0), where), p12=_number(p.get("p12", 0.0), where),
                          p22=_number(p.get("p22", 1.0), where))
            for p in parts
        ),
    )


def _parse_points(doc: Dict[str, Any], epsilon: float) -> tuple:
    points = [
        ConjugationPoint(
            id=int(_require(p, "id", "points")),
            position=tuple(float(x) for x in _require(p, "position", "points")),
            opening=_number(_require(p, "opening", "points"), "points.opening"),
            frame_rotation=_number(p.get("frame_rotation", 0.0), "points.frame_rotation"),
        )
        for p in doc["points"]
    ]
    by_id = {p.id: p for p in points}
    maps = []
    for n, m in enumerate(doc.get("maps", [])):
        where = f"maps[{n}]"
        source = int(_require(m, "source", where))
        image = int(_require(m, "image", where))
        if source not in by_id or image not in by_id:
            raise SpecFormatError(f"{where}: unknown point id")
        matrix = np.asarray(_require(m, "matrix", where), dtype=float)
        if matrix.shape != (2, 2):
            raise SpecFormatError(f"{where}.matrix must be 2x2")
        maps.append(BoundaryMap(
            source=source, sigma=int(_require(m, "sigma", where)), image=image,
            func=_affine(by_id[source].position, by_id[image].position, matrix),
            weight=ScalarProfile.parse(m.get("weight", "zero")),
        ))
    return models_from_points(points, maps, epsilon)


def _affine(source, image, matrix):
    src, img = np.asarray(source, dtype=float), np.asarray(image, dtype=float)

    def apply(x):
        return img + matrix @ (np.asarray(x, dtype=float) - src)
    return apply


def parse_spec(doc: Dict[str, Any]) -> ProblemSpec:
    """
    Build a ProblemSpec from its JSON document.

    Raises:
        SpecFormatError: malformed document
    """
    if not isinstance(doc, dict):
        raise SpecFormatError("Problem spec must be a JSON object")

    tdoc = doc.get("truncation", {})
    epsilon = _number(tdoc.get("epsilon", 0.25), "truncation.epsilon")
    extra = {k: tdoc[k] for k in ("kappa1", "kappa2", "outer_radius") if k in tdoc}
    truncation = Truncation.from_epsilon(
        epsilon, **{k: _number(v, f"truncation.{k}") for k, v in extra.items()},
        levels=int(tdoc.get("levels", 24)),
    )

    if "orbits" in doc and "points" in doc:
        raise SpecFormatError("Give either 'orbits' or 'points'/'maps', not both")
    if "orbits" in doc:
        orbits = tuple(_parse_orbit(o, f"orbits[{n}]") for n, o in enumerate(doc["orbits"]))
    elif "points" in doc:
        orbits = _parse_points(doc, epsilon)
    else:
        raise SpecFormatError("Problem spec needs 'orbits' (or 'points' with 'maps')")

    exterior = []
    for n, e in enumerate(doc.get("exterior_terms", [])):
        where = f"exterior_terms[{n}]"
        trace = e.get("exterior_trace")
        landing_a = e.get("landing_coefficient")
        exterior.append(ExteriorTerm(
            orbit_id=int(_require(e, "orbit_id", where)),
            j=int(_require(e, "j", where)),
            sigma=int(_require(e, "sigma", where)),
            coefficient=ScalarProfile.parse(_require(e, "coefficient", where)),
            landing=str(e.get("landing", "interior")),
            exterior_trace=ScalarProfile.parse(trace) if trace is not None else None,
            landing_coefficient=_number(landing_a, f"{where}.landing_coefficient") if landing_a is not None else None,
        ))

    rdoc = doc.get("rhs", {})
    rhs = RightHandSide(
        kind=str(rdoc.get("kind", "general")),
        volume=ScalarProfile.parse(rdoc.get("volume", "zero")),
        traces=tuple(
            SideTrace(
                orbit_id=int(_require(t, "orbit_id", "rhs.traces")),
                j=int(_require(t, "j", "rhs.traces")),
                sigma=int(_require(t, "sigma", "rhs.traces")),
                profile=ScalarProfile.parse(_require(t, "profile", "rhs.traces")),
            )
            for t in rdoc.get("traces", [])
        ),
    )
    spec = ProblemSpec(
        orbits=orbits, exterior_terms=tuple(exterior), rhs=rhs, truncation=truncation,
        name=str(doc.get("name", "")), description=str(doc.get("description", "")),
    )
    spec.validate()
    return spec


def spec_to_dict(spec: ProblemSpec) -> Dict[str, Any]:
    """Serialize a ProblemSpec; orbits are always written in orbit form"""
    def term(t: NonlocalTerm) -> Dict[str, Any]:
        out = {"j": t.j, "sigma": t.sigma, "k": t.k, "s": t.s, "weight": t.weight_at_vertex,
               "rotation": t.rotation, "homothety": t.homothety}
        if t.weight_profile is not None:
            out["weight_profile"] = t.weight_profile.to_json()
        return out

    orbits = []
    for m in spec.orbits:
        o = {"orbit_id": m.orbit_id, "angles": list(m.angles), "terms": [term(t) for t in m.terms]}
        if m.principal_parts:
            o["principal_parts"] = [{"p11": p.p11, "p12": p.p12, "p22": p.p22} for p in m.principal_parts]
        orbits.append(o)

    exterior = []
    for e in spec.exterior_terms:
        d = {"orbit_id": e.orbit_id, "j": e.j, "sigma": e.sigma,
             "coefficient": e.coefficient.to_json(), "landing": e.landing}
        if e.exterior_trace is not None:
            d["exterior_trace"] = e.exterior_trace.to_json()
        if e.landing_coefficient is not None:
            d["landing_coefficient"] = e.landing_coefficient
        exterior.append(d)

    tr = spec.truncation
    doc = {
        "orbits": orbits,
        "exterior_terms": exterior,
        "rhs": {
            "kind": spec.rhs.kind,
            "volume": spec.rhs.volume.to_json(),
            "traces": [{"orbit_id": t.orbit_id, "j": t.j, "sigma": t.sigma, "profile": t.profile.to_json()}
                       for t in spec.rhs.traces],
        },
        "truncation": {"epsilon": tr.epsilon, "kappa1": tr.kappa1, "kappa2": tr.kappa2,
                       "outer_radius": tr.outer_radius, "levels": tr.levels},
    }
    if spec.name:
        doc["name"] = spec.name
    if spec.description:
        doc["description"] = spec.description
    return doc


def load_spec(path: str) -> ProblemSpec:
    try:
        with open(path, "r") as f:
            doc = json.load(f)
    except FileNotFoundError:
        raise SpecFormatError(f"Spec file not found: {path}")
    except json.JSONDecodeError as e:
        raise SpecFormatError(f"Spec file {path} is not valid JSON: {e}")
    logger.debug(f"Loaded spec from {path}")
    return parse_spec(doc)


def dump_spec(spec: ProblemSpec, path: str) -> None:
    with open(path, "w") as f:
        json.dump(spec_to_dict(spec), f, indent=2, sort_keys=True)
        f.write("\n")


def list_examples() -> List[Dict[str, str]]:
    out = []
    for example_id in EXAMPLE_IDS:
        with open(os.path.join(SPECS_DIR, f"{example_id}.json")) as f:
            doc = json.load(f)
        out.append({"id": example_id, "description": doc.get("description", "")})
    return out


def load_example(example_id: str) -> ProblemSpec:
    if example_id not in EXAMPLE_IDS:
        raise SpecFormatError(f"Unknown example '{example_id}' (known: {', '.join(EXAMPLE_IDS)})")
    return load_spec(os.path.join(SPECS_DIR, f"{example_id}.json"))


def halfpi_model(b1: float, b2: float, orbit_id: int = 0,
                 b1_profile: Optional[ScalarProfile] = None,
                 b2_profile: Optional[ScalarProfile] = None) -> OrbitModel:
    """
    Flat boundary vertex (half-opening pi/2) whose sides are rotated onto the
    inner normal: side sigma maps by rotation (-1)^(sigma+1) pi/2, chi = 1.
    Zero weights give the Dirichlet model.
    """
    terms = []
    for sigma, b, profile in ((1, b1, b1_profile), (2, b2, b2_profile)):
        if b == 0.0 and profile is None:
            continue
        terms.append(NonlocalTerm(
            j=0, sigma=sigma, k=0, s=1, weight_at_vertex=float(b),
            rotation=HALF_PI if sigma == 1 else -HALF_PI, homothety=1.0, weight_profile=profile,
        ))
    return OrbitModel(orbit_id=orbit_id, angles=(HALF_PI,), terms=tuple(terms))


def halfpi_spec(b1: float, b2: float, name: str = "", **kwargs) -> ProblemSpec:
    """ProblemSpec with the single flat-boundary orbit of halfpi_model"""
    spec = ProblemSpec(orbits=(halfpi_model(b1, b2),), name=name, **kwargs)
    spec.validate()
    return spec
