"""Synthetic stratified spaces: samplers, presets, noise, embedding, CSV I/O."""

import json
import math
import os
from dataclasses import asdict, dataclass, field
from typing import List, Optional

import numpy as np

from .errors import ConfigError, ParseError
from .rng import derive_rng

# native coordinate count per stratum kind (sphere/affine_gaussian depend on params)
_NATIVE = {"circle": 3, "torus": 3, "plane_patch": 3, "helix": 3, "swiss_roll": 3}
_INTRINSIC = {"circle": 1, "torus": 2, "plane_patch": 2, "helix": 1, "swiss_roll": 2}


@dataclass
class StratumSpec:
    """One stratum.

    ``params`` by kind:

    - circle: center (3,), radius, plane (two orthonormal 3-vectors)
    - sphere: center (dim+1,), radius, dim
    - torus: R, r (tube), z along the symmetry axis
    - plane_patch: extent ((x0, x1), (y0, y1)) in the z=0 plane
    - helix: radius, pitch, t_range, offset (3,); point (r cos t, r sin t, pitch t) + offset
    - swiss_roll: t_range, h_range, scale, offset (3,);
      point (scale t cos t, scale h, scale t sin t) + offset
    - affine_gaussian: offset (D,), basis (D x d orthonormal), intrinsic_cov (d x d)

    Helix and Swiss roll are uniform in parameter space, not arclength.
    """

    kind: str
    params: dict = field(default_factory=dict)
    translation: Optional[List[float]] = None

    def __post_init__(self):
        if self.kind not in _NATIVE and self.kind not in ("sphere", "affine_gaussian"):
            raise ConfigError(f"unknown stratum kind {self.kind!r}")
        if self.kind == "affine_gaussian":
            basis = np.asarray(self.params["basis"], dtype=float)
            if not np.allclose(basis.T @ basis, np.eye(basis.shape[1]), atol=1e-10, rtol=0):
                raise ConfigError("affine_gaussian basis columns are not orthonormal")

    @property
    def intrinsic_dim(self):
        if self.kind == "sphere":
            return int(self.params["dim"])
        if self.kind == "affine_gaussian":
            return int(np.asarray(self.params["basis"]).shape[1])
        return _INTRINSIC[self.kind]

    @property
    def native_dim(self):
        if self.kind == "sphere":
            return int(self.params["dim"]) + 1
        if self.kind == "affine_gaussian":
            return len(self.params["offset"])
        return _NATIVE[self.kind]

    def sample(self, n, rng):
        p = self.params
        k = self.kind
        if k == "circle":
            th = rng.uniform(0.0, 2 * np.pi, n)
            e1, e2 = np.asarray(p.get("plane", [[1, 0, 0], [0, 1, 0]]), dtype=float)
            pts = (np.asarray(p.get("center", [0, 0, 0]), dtype=float)
                   + p.get("radius", 1.0) * (np.cos(th)[:, None] * e1 + np.sin(th)[:, None] * e2))
        elif k == "sphere":
            g = rng.standard_normal((n, int(p["dim"]) + 1))
            g /= np.linalg.norm(g, axis=1, keepdims=True)
            pts = np.asarray(p.get("center", np.zeros(g.shape[1])), dtype=float) + p.get("radius", 1.0) * g
        elif k == "torus":
            # uniform on the surface: accept theta with prob (R + r cos theta) / (R + r)
            big, small = p.get("R", 2.0), p.get("r", 0.5)
            th = np.empty(0)
            while th.size < n:
                cand = rng.uniform(0.0, 2 * np.pi, 2 * (n - th.size) + 16)
                keep = rng.uniform(0.0, 1.0, cand.size) < (big + small * np.cos(cand)) / (big + small)
                th = np.concatenate([th, cand[keep]])
            th = th[:n]
            ph = rng.uniform(0.0, 2 * np.pi, n)
            ring = big + small * np.cos(th)
            pts = np.stack([ring * np.cos(ph), ring * np.sin(ph), small * np.sin(th)], axis=1)
        elif k == "plane_patch":
            (x0, x1), (y0, y1) = p.get("extent", ((-1, 1), (-1, 1)))
            pts = np.stack([rng.uniform(x0, x1, n), rng.uniform(y0, y1, n), np.zeros(n)], axis=1)
        elif k == "helix":
            t = rng.uniform(*p.get("t_range", (0.0, 4 * np.pi)), n)
            r = p.get("radius", 1.0)
            pts = np.stack([r * np.cos(t), r * np.sin(t), p.get("pitch", 0.1) * t], axis=1)
            pts = pts + np.asarray(p.get("offset", [0, 0, 0]), dtype=float)
        elif k == "swiss_roll":
            t = rng.uniform(*p.get("t_range", (1.5 * np.pi, 4.5 * np.pi)), n)
            h = rng.uniform(*p.get("h_range", (-2.5, 2.5)), n)
            s = p.get("scale", 1.0)
            pts = s * np.stack([t * np.cos(t), h, t * np.sin(t)], axis=1)
            pts = pts + np.asarray(p.get("offset", [0, 0, 0]), dtype=float)
        else:
            basis = np.asarray(p["basis"], dtype=float)
            cov = np.asarray(p.get("intrinsic_cov", np.eye(basis.shape[1])), dtype=float)
            z = rng.multivariate_normal(np.zeros(basis.shape[1]), cov, size=n, method="cholesky")
            pts = np.asarray(p["offset"], dtype=float) + z @ basis.T
        pts = np.asarray(pts, dtype=float).reshape(n, self.native_dim)
        if self.translation is not None:
            pts = pts + np.asarray(self.translation, dtype=float)
        return pts

    def residual(self, pts):
        """Distance-like defect of native points from the stratum (0 on it)."""
        p = self.params
        x = np.asarray(pts, dtype=float)
        if self.translation is not None:
            x = x - np.asarray(self.translation, dtype=float)
        k = self.kind
        if k == "circle":
            c = np.asarray(p.get("center", [0, 0, 0]), dtype=float)
            e = np.asarray(p.get("plane", [[1, 0, 0], [0, 1, 0]]), dtype=float)
            y = x - c
            inplane = y @ e.T
            normal = y - inplane @ e
            return np.abs(np.linalg.norm(inplane, axis=1) - p.get("radius", 1.0)) + np.linalg.norm(normal, axis=1)
        if k == "sphere":
            c = np.asarray(p.get("center", np.zeros(x.shape[1])), dtype=float)
            return np.abs(np.linalg.norm(x - c, axis=1) - p.get("radius", 1.0))
        if k == "torus":
            big, small = p.get("R", 2.0), p.get("r", 0.5)
            ring = np.hypot(x[:, 0], x[:, 1]) - big
            return np.abs(np.hypot(ring, x[:, 2]) - small)
        if k == "plane_patch":
            return np.abs(x[:, 2])
        if k == "helix":
            y = x - np.asarray(p.get("offset", [0, 0, 0]), dtype=float)
            t = y[:, 2] / p.get("pitch", 0.1)
            r = p.get("radius", 1.0)
            return np.hypot(y[:, 0] - r * np.cos(t), y[:, 1] - r * np.sin(t))
        if k == "swiss_roll":
            y = (x - np.asarray(p.get("offset", [0, 0, 0]), dtype=float)) / p.get("scale", 1.0)
            t = np.hypot(y[:, 0], y[:, 2])
            return np.hypot(y[:, 0] - t * np.cos(t), y[:, 2] - t * np.sin(t))
        basis = np.asarray(p["basis"], dtype=float)
        y = x - np.asarray(p["offset"], dtype=float)
        return np.linalg.norm(y - (y @ basis) @ basis.T, axis=1)

    def to_dict(self):
        def plain(v):
            if isinstance(v, np.ndarray):
                return v.tolist()
            if isinstance(v, (list, tuple)):
                return [plain(u) for u in v]
            return v

        return {"kind": self.kind, "params": {k: plain(v) for k, v in self.params.items()},
                "translation": plain(self.translation)}


@dataclass
class StratifiedSpaceSpec:
    """Mixture over strata plus ambient embedding and noise.

    Strata are zero-padded to a common native dimension. When ``ambient_dim``
    exceeds it, points are embedded by a fixed random rotation seeded with
    ``embed_seed``; otherwise native coordinates are used as-is.
    """

    strata: List[StratumSpec]
    weights: List[float]
    noise_sigma: float = 0.0
    ambient_dim: Optional[int] = None
    embed_seed: int = 0
    name: str = ""

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if len(self.strata) == 0 or w.shape != (len(self.strata),):
            raise ConfigError("need one weight per stratum")
        if np.any(w <= 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ConfigError(f"weights must be positive and sum to 1, got {self.weights}")
        if self.noise_sigma < 0:
            raise ConfigError("noise_sigma must be nonnegative")
        if self.ambient_dim is None:
            self.ambient_dim = self.native_dim
        if self.ambient_dim < self.native_dim:
            raise ConfigError(f"ambient_dim {self.ambient_dim} < native dim {self.native_dim}")

    @property
    def native_dim(self):
        return max(s.native_dim for s in self.strata)

    @property
    def dims(self):
        return [s.intrinsic_dim for s in self.strata]

    def to_dict(self):
        return {
            "name": self.name,
            "strata": [s.to_dict() for s in self.strata],
            "weights": list(self.weights),
            "noise_sigma": self.noise_sigma,
            "ambient_dim": self.ambient_dim,
            "embed_seed": self.embed_seed,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            [StratumSpec(s["kind"], s.get("params", {}), s.get("translation")) for s in d["strata"]],
            list(d["weights"]),
            d.get("noise_sigma", 0.0),
            d.get("ambient_dim"),
            d.get("embed_seed", 0),
            d.get("name", ""),
        )


@dataclass
class Dataset:
    points: np.ndarray
    stratum_label: Optional[np.ndarray] = None  # 1-based
    true_dim: Optional[np.ndarray] = None
    spec: Optional[StratifiedSpaceSpec] = None
    clean: Optional[np.ndarray] = None  # pre-noise points, same coordinates

    def __post_init__(self):
        n = self.points.shape[0]
        for name in ("stratum_label", "true_dim", "clean"):
            v = getattr(self, name)
            if v is not None and len(v) != n:
                raise ConfigError(f"{name} has {len(v)} rows, points has {n}")

    def __len__(self):
        return self.points.shape[0]

    @property
    def dim(self):
        return self.points.shape[1]


def sample_native(spec, n, seed):
    """Noiseless native-coordinate samples with 1-based labels."""
    if n < 0:
        raise ConfigError("n must be nonnegative")
    rng = derive_rng(seed, "sample")
    w = np.asarray(spec.weights, dtype=float)
    labels = rng.choice(len(spec.strata), size=n, p=w / w.sum())
    pts = np.zeros((n, spec.native_dim))
    for k, s in enumerate(spec.strata):
        idx = np.flatnonzero(labels == k)
        if idx.size:
            pts[idx, : s.native_dim] = s.sample(idx.size, rng)
    return pts, labels + 1


def sample_stratified(spec, n, seed):
    """Draw ``n`` points: label, on-stratum point, embedding, then noise."""
    native, labels = sample_native(spec, n, seed)
    dims = np.asarray(spec.dims)[labels - 1] if n else np.zeros(0, dtype=int)
    if spec.ambient_dim > spec.native_dim:
        clean = embed(native, spec.ambient_dim, spec.embed_seed)
    else:
        clean = native
    noisy = add_noise(clean, spec.noise_sigma, derive_rng(seed, "noise").integers(2**63))
    return Dataset(noisy, labels, dims, spec, clean)


def add_noise(points, sigma, seed):
    """Add iid N(0, sigma^2) to every coordinate; sigma=0 returns the input."""
    if sigma < 0:
        raise ConfigError("sigma must be nonnegative")
    points = np.asarray(points, dtype=float)
    if sigma == 0:
        return points
    rng = np.random.default_rng(seed)
    return points + sigma * rng.standard_normal(points.shape)


def embedding_matrix(native_dim, ambient_dim, seed):
    """Random ``ambient x ambient`` orthogonal matrix (sign-corrected QR)."""
    if ambient_dim < native_dim:
        raise ConfigError(f"ambient_dim {ambient_dim} < native dim {native_dim}")
    rng = np.random.default_rng(seed)
    q, r = np.linalg.qr(rng.standard_normal((ambient_dim, ambient_dim)))
    return q * np.sign(np.diag(r))


def embed(points, ambient_dim, seed):
    """Zero-pad to ``ambient_dim`` then rotate: an isometry."""
    points = np.asarray(points, dtype=float)
    n, d = points.shape
    q = embedding_matrix(d, ambient_dim, seed)
    padded = np.zeros((n, ambient_dim))
    padded[:, :d] = points
    return padded @ q.T


# presets


def circle_sphere(noise_sigma=0.0, ambient_dim=50, embed_seed=0):
    return StratifiedSpaceSpec(
        [
            StratumSpec("circle", {"center": [0.5, 0.0, 0.0], "radius": 1.2,
                                   "plane": [[1, 0, 0], [0, 1, 0]]}),
            StratumSpec("sphere", {"center": [0.0, 0.0, 0.0], "radius": 1.0, "dim": 2}),
        ],
        [0.4, 0.6], noise_sigma, ambient_dim, embed_seed, "circle_sphere",
    )


def four_manifolds(noise_sigma=0.05, ambient_dim=50, embed_seed=0):
    # shifts along the first axis keep every pair of strata at least 2 apart
    return StratifiedSpaceSpec(
        [
            StratumSpec("helix", {"radius": 1.0, "pitch": 0.1, "t_range": [0.0, 4 * math.pi]},
                        [0.0, 0.0, 0.0]),
            StratumSpec("torus", {"R": 2.0, "r": 0.5}, [6.0, 0.0, 0.0]),
            StratumSpec("sphere", {"center": [12.0, 0, 0, 0, 0], "radius": 1.0, "dim": 4}),
            StratumSpec("sphere", {"center": [16.0] + [0.0] * 7, "radius": 1.0, "dim": 7}),
        ],
        [0.15, 0.2, 0.25, 0.4], noise_sigma, ambient_dim, embed_seed, "four_manifolds",
    )


def circle_plane(noise_sigma=0.0, ambient_dim=3, embed_seed=0):
    return StratifiedSpaceSpec(
        [
            StratumSpec("circle", {"center": [0.0, 0.0, 0.0], "radius": 1.0,
                                   "plane": [[1, 0, 0], [0, 0, 1]]}),
            StratumSpec("plane_patch", {"extent": [[-1.5, 1.5], [-1.5, 1.5]]}),
        ],
        [0.5, 0.5], noise_sigma, ambient_dim, embed_seed, "circle_plane",
    )


def helix_swissroll(noise_sigma=0.0, ambient_dim=3, embed_seed=0, weights=(1 / 3, 2 / 3)):
    return StratifiedSpaceSpec(
        [
            StratumSpec("helix", {"radius": 1.0, "pitch": 0.5, "t_range": [0.0, 4 * math.pi],
                                  "offset": [-2.5, 0.0, -math.pi]}),
            StratumSpec("swiss_roll", {"t_range": [1.5 * math.pi, 4.5 * math.pi],
                                       "h_range": [-2.5, 2.5], "scale": 0.2,
                                       "offset": [2.5, 0.0, 0.0]}),
        ],
        list(weights), noise_sigma, ambient_dim, embed_seed, "helix_swissroll",
    )


def helix_swissroll_r15(noise_sigma=0.0, embed_seed=0):
    """Equal-weight helix / Swiss roll embedded in R^15."""
    spec = helix_swissroll(noise_sigma, 15, embed_seed, weights=(0.5, 0.5))
    spec.name = "helix_swissroll_r15"
    return spec


def affine_oracle(ambient_dim=10, noise_sigma=0.0, scale=2.0, basis_seed=7):
    """A line and a 2-plane through the origin, meeting only there.

    Each stratum carries an isotropic Gaussian of standard deviation ``scale``.
    """
    rng = np.random.default_rng(basis_seed)
    q, _ = np.linalg.qr(rng.standard_normal((ambient_dim, 3)))
    zero = np.zeros(ambient_dim)
    return StratifiedSpaceSpec(
        [
            StratumSpec("affine_gaussian", {"offset": zero, "basis": q[:, :1],
                                            "intrinsic_cov": scale**2 * np.eye(1)}),
            StratumSpec("affine_gaussian", {"offset": zero, "basis": q[:, 1:3],
                                            "intrinsic_cov": scale**2 * np.eye(2)}),
        ],
        [0.5, 0.5], noise_sigma, ambient_dim, 0, "affine_oracle",
    )


PRESETS = {
    "circle_sphere": circle_sphere,
    "four_manifolds": four_manifolds,
    "circle_plane": circle_plane,
    "helix_swissroll": helix_swissroll,
    "helix_swissroll_r15": helix_swissroll_r15,
    "affine_oracle": affine_oracle,
}


def preset(name, **overrides):
    try:
        factory = PRESETS[name]
    except KeyError:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
    return factory(**overrides)


# CSV / bundle I/O


def write_csv(path, rows, header=None, comment=None):
    """Write a 2-D array (or list of rows) as CSV with full double precision."""
    with open(path, "w") as fh:
        if comment is not None:
            fh.write(f"# {comment}\n")
        if header is not None:
            fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in np.atleast_1d(row)) + "\n")


def _fmt(v):
    if isinstance(v, (str, np.str_)):
        return str(v)
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def ingest_csv(path, header=False):
    """Read a numeric CSV into a Dataset; ``#`` lines are skipped."""
    rows = []
    width = None
    skip_header = header
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if skip_header:
                skip_header = False
                continue
            cells = line.split(",")
            if width is None:
                width = len(cells)
            elif len(cells) != width:
                raise ParseError(f"expected {width} columns, found {len(cells)}", lineno)
            try:
                rows.append([float(c) for c in cells])
            except ValueError as exc:
                raise ParseError(f"non-numeric cell ({exc})", lineno) from None
    pts = np.asarray(rows, dtype=float) if rows else np.zeros((0, 0))
    return Dataset(pts)


def save_bundle(dataset, directory, comment=None):
    os.makedirs(directory, exist_ok=True)
    write_csv(os.path.join(directory, "points.csv"), dataset.points, comment=comment)
    if dataset.stratum_label is not None:
        write_csv(os.path.join(directory, "labels.csv"),
                  np.stack([dataset.stratum_label, dataset.true_dim], axis=1).astype(int),
                  header=["stratum", "true_dim"], comment=comment)
    if dataset.clean is not None:
        write_csv(os.path.join(directory, "clean.csv"), dataset.clean, comment=comment)
    meta = {"n": len(dataset), "dim": int(dataset.points.shape[1]) if dataset.points.size else 0,
            "spec": dataset.spec.to_dict() if dataset.spec is not None else None}
    with open(os.path.join(directory, "meta.json"), "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)


def load_bundle(path):
    """Load a bundle directory, or a bare CSV file of points."""
    if os.path.isfile(path):
        return ingest_csv(path)
    ds = ingest_csv(os.path.join(path, "points.csv"))
    labels_path = os.path.join(path, "labels.csv")
    if os.path.exists(labels_path):
        lab = ingest_csv(labels_path, header=True).points.astype(int)
        if lab.size:
            ds.stratum_label, ds.true_dim = lab[:, 0], lab[:, 1]
    clean_path = os.path.join(path, "clean.csv")
    if os.path.exists(clean_path):
        ds.clean = ingest_csv(clean_path).points
    meta_path = os.path.join(path, "meta.json")
    if os.path.exists(meta_path):
        with open(meta_path) as fh:
            meta = json.load(fh)
        if meta.get("spec"):
            ds.spec = StratifiedSpaceSpec.from_dict(meta["spec"])
    return ds
