"""Synthetic benchmark generation with disjoint (class, domain) combinations,
plus CSV persistence and the validation split."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .exceptions import ConfigError, DataFormatError

TRAIN, TEST, ABSENT = "train", "test", "absent"


@dataclass
class SplitSpec:
    """Assignment of each (class-set, domain) cell to train/test/absent.

    `class_sets[s]` lists the class ids of set s; `assignment[s][m]` is the
    role of set s under domain m. Every class set trains under exactly one
    domain; at least one set is tested under another domain. Train-only sets
    are allowed (subjects enrolled under a single device type).
    """

    class_sets: list[list[int]]
    assignment: list[list[str]]

    def __post_init__(self):
        n_sets = len(self.class_sets)
        if n_sets == 0 or len(self.assignment) != n_sets:
            raise ConfigError("assignment must have one row per class set")
        widths = {len(row) for row in self.assignment}
        if len(widths) != 1:
            raise ConfigError("assignment rows must have equal length")
        seen: set[int] = set()
        for classes in self.class_sets:
            if not classes:
                raise ConfigError("empty class set")
            if seen & set(classes):
                raise ConfigError("class sets must be disjoint")
            seen |= set(classes)
        for s, row in enumerate(self.assignment):
            for entry in row:
                if entry not in (TRAIN, TEST, ABSENT):
                    raise ConfigError(f"bad assignment entry {entry!r}")
            if row.count(TRAIN) != 1:
                raise ConfigError(f"class set {s} needs exactly one train domain")
        # Individual class sets may be train-only (enrolled under a single
        # domain, as in the device layout), but the layout as a whole must
        # produce a nonempty held-out side.
        if not any(TEST in row for row in self.assignment):
            raise ConfigError("need at least one test cell across class sets")

    @property
    def n_domains(self) -> int:
        return len(self.assignment[0])

    @property
    def n_classes(self) -> int:
        return sum(len(s) for s in self.class_sets)


def diagonal_spec(n_sets: int, classes_per_set: int) -> SplitSpec:
    """Square spec: set s trains under domain s, tests everywhere else."""
    class_sets = [
        list(range(s * classes_per_set, (s + 1) * classes_per_set))
        for s in range(n_sets)
    ]
    assignment = [
        [TRAIN if m == s else TEST for m in range(n_sets)] for s in range(n_sets)
    ]
    return SplitSpec(class_sets, assignment)


def mobile_spec() -> SplitSpec:
    """Two-domain spec with absent cells, mirroring a device-auth layout:
    four subject groups, two of which exist under only one domain."""
    class_sets = [
        list(range(0, 6)),
        list(range(6, 12)),
        list(range(12, 15)),
        list(range(15, 29)),
    ]
    assignment = [
        [TRAIN, TEST],
        [TEST, TRAIN],
        [ABSENT, TRAIN],
        [TRAIN, ABSENT],
    ]
    return SplitSpec(class_sets, assignment)


@dataclass
class NuisanceSpec:
    """Per-domain nuisance transform applied on top of the class signal.

    `ratio` scales the transform magnitude relative to the mean
    inter-prototype distance; concrete offsets/matrices are drawn at
    generation time unless provided.
    """

    kind: str = "additive_offset"
    ratio: float = 2.0
    offsets: np.ndarray | None = None  # (k x d)
    matrices: np.ndarray | None = None  # (k x d x d), invertible
    # Draw offsets orthogonal to the class-prototype span, so the domain
    # signal occupies directions that carry no class information (like a
    # background channel). Requires d > number of classes.
    orthogonal: bool = True

    def __post_init__(self):
        if self.kind not in ("additive_offset", "affine"):
            raise ConfigError(f"unknown nuisance kind {self.kind!r}")
        if self.ratio < 0:
            raise ConfigError("nuisance ratio must be >= 0")


@dataclass
class GcldrDataset:
    X: np.ndarray
    y: np.ndarray
    role: np.ndarray  # "train" / "test" per row
    true_domain: np.ndarray | None = None  # diagnostics only

    def rows(self, role: str) -> tuple[np.ndarray, np.ndarray]:
        mask = self.role == role
        return self.X[mask], self.y[mask]

    def domains(self, role: str) -> np.ndarray | None:
        if self.true_domain is None:
            return None
        return self.true_domain[self.role == role]


def generate(
    spec: SplitSpec,
    nuisance: NuisanceSpec,
    d: int = 20,
    per_combo: int = 200,
    seed: int = 0,
    noise_sigma: float = 0.3,
) -> GcldrDataset:
    """Draw unit-norm class prototypes, add Gaussian noise, then apply each
    row's domain nuisance. Roles assigned per the split layout; deterministic per seed."""
    if d < 1 or per_combo < 1:
        raise ConfigError("need d >= 1 and per_combo >= 1")
    rng = np.random.default_rng(seed)
    c = spec.n_classes
    k = spec.n_domains
    protos = rng.normal(size=(c, d))
    protos /= np.linalg.norm(protos, axis=1, keepdims=True)

    if c > 1:
        dists = [
            np.linalg.norm(protos[i] - protos[j])
            for i in range(c)
            for j in range(i + 1, c)
        ]
        scale = nuisance.ratio * float(np.mean(dists))
    else:
        scale = nuisance.ratio

    if nuisance.kind == "additive_offset":
        offsets = nuisance.offsets
        if offsets is None:
            offsets = rng.normal(size=(k, d))
            if nuisance.orthogonal and d > c:
                # project out the prototype span
                q, _ = np.linalg.qr(protos.T)
                offsets = offsets - (offsets @ q) @ q.T
            offsets = offsets / np.linalg.norm(offsets, axis=1, keepdims=True) * scale
        offsets = np.asarray(offsets, dtype=np.float64)
        transforms = [lambda x, m=m: x + offsets[m] for m in range(k)]
    else:
        matrices = nuisance.matrices
        if matrices is None:
            matrices = np.stack(
                [np.eye(d) + (scale / max(d, 1)) * rng.normal(size=(d, d)) for _ in range(k)]
            )
        matrices = np.asarray(matrices, dtype=np.float64)
        for m in range(k):
            if abs(np.linalg.det(matrices[m])) < 1e-12:
                raise ConfigError("affine nuisance matrix is singular")
        transforms = [lambda x, m=m: x @ matrices[m].T for m in range(k)]

    xs, ys, roles, doms = [], [], [], []
    for s, classes in enumerate(spec.class_sets):
        for m in range(k):
            role = spec.assignment[s][m]
            if role == ABSENT:
                continue
            for j in classes:
                noise = rng.normal(size=(per_combo, d)) * noise_sigma
                x = transforms[m](protos[j] + noise)
                xs.append(x)
                ys.append(np.full(per_combo, j, dtype=np.intp))
                roles.append(np.full(per_combo, role, dtype=object))
                doms.append(np.full(per_combo, m, dtype=np.intp))

    return GcldrDataset(
        X=np.concatenate(xs),
        y=np.concatenate(ys),
        role=np.concatenate(roles).astype(str),
        true_domain=np.concatenate(doms),
    )


def save_csv(ds: GcldrDataset, path: str):
    """Header `role,y,true_domain,x_0..x_{d-1}`; values with 17 significant
    digits so the round-trip is bitwise."""
    d = ds.X.shape[1]
    cols = ["role", "y"]
    if ds.true_domain is not None:
        cols.append("true_domain")
    cols += [f"x_{i}" for i in range(d)]
    with open(path, "w") as fh:
        fh.write(",".join(cols) + "\n")
        for i in range(ds.X.shape[0]):
            row = [ds.role[i], str(int(ds.y[i]))]
            if ds.true_domain is not None:
                row.append(str(int(ds.true_domain[i])))
            row += [format(v, ".17g") for v in ds.X[i]]
            fh.write(",".join(row) + "\n")


def load_csv(path: str) -> GcldrDataset:
    with open(path) as fh:
        header = fh.readline().strip()
        cols = header.split(",")
        if cols[:2] != ["role", "y"]:
            raise DataFormatError(f"bad header {header!r}", line=1)
        has_domain = len(cols) > 2 and cols[2] == "true_domain"
        x_start = 3 if has_domain else 2
        d = len(cols) - x_start
        if d < 1:
            raise DataFormatError("no feature columns", line=1)
        xs, ys, roles, doms = [], [], [], []
        for lineno, line in enumerate(fh, start=2):
            parts = line.rstrip("\n").split(",")
            if len(parts) != len(cols):
                raise DataFormatError(
                    f"expected {len(cols)} columns, got {len(parts)}", line=lineno
                )
            try:
                roles.append(parts[0])
                ys.append(int(parts[1]))
                if has_domain:
                    doms.append(int(parts[2]))
                xs.append([float(v) for v in parts[x_start:]])
            except ValueError as exc:
                raise DataFormatError(str(exc), line=lineno) from exc
    return GcldrDataset(
        X=np.array(xs, dtype=np.float64),
        y=np.array(ys, dtype=np.intp),
        role=np.array(roles, dtype=str),
        true_domain=np.array(doms, dtype=np.intp) if has_domain else None,
    )


def split_validation(
    X: np.ndarray, y: np.ndarray, fraction: float = 0.1, seed: int = 0
) -> tuple[tuple[np.ndarray, np.ndarray], tuple[np.ndarray, np.ndarray]]:
    """Random (val, test) partition of the test rows; deterministic per seed."""
    if not 0 < fraction < 1:
        raise ConfigError("validation fraction must be in (0, 1)")
    rng = np.random.default_rng(seed)
    n = X.shape[0]
    order = rng.permutation(n)
    n_val = int(round(fraction * n))
    val_idx, test_idx = order[:n_val], order[n_val:]
    return (X[val_idx], y[val_idx]), (X[test_idx], y[test_idx])


def check_split_integrity(ds: GcldrDataset, spec: SplitSpec):
    """Structural check that train/test rows obey the split layout (diagnostics)."""
    if ds.true_domain is None:
        raise ConfigError("dataset has no domain diagnostics")
    set_of_class = {}
    for s, classes in enumerate(spec.class_sets):
        for j in classes:
            set_of_class[j] = s
    for i in range(ds.X.shape[0]):
        expected = spec.assignment[set_of_class[int(ds.y[i])]][int(ds.true_domain[i])]
        if expected != ds.role[i]:
            raise ConfigError(
                f"row {i}: role {ds.role[i]!r} but spec says {expected!r}"
            )
