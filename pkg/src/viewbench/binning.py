"""Angular binning of multi-view instances and subset manifest construction.

Frames of one object instance are discretized into angular bins (default
seven centers from 0 to 90 degrees in 15-degree steps); each bin receives
the not-yet-used frame with the smallest absolute angular error. Instances
that fill every bin within a tolerance are curated into a manifest that the
rest of the pipeline consumes.
"""

from __future__ import annotations

import json
import math
import shutil
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Sequence

from .errors import ParseError, StructuralError
from .featstore import read_mask, write_mask
from .pose import RelativeAngle, parse_colmap_images, relative_angles

DEFAULT_BIN_CENTERS = (0.0, 15.0, 30.0, 45.0, 60.0, 75.0, 90.0)
DEFAULT_TOLERANCE_DEG = 6.0

# MVImgNet category numbers and names of the curated 15-class subset,
# ordered by category number; semantic ids are 1-based with background 0.
MVIMGNET_CATEGORY_NAMES = {
    7: "stove",
    8: "sofa",
    19: "microwave",
    46: "bed",
    57: "toy cat",
    60: "toy cow",
    70: "toy dragon",
    99: "coat rack",
    100: "guitar stand",
    113: "ceiling lamp",
    125: "toilet",
    126: "sink",
    152: "strings",
    166: "broccoli",
    196: "durian",
}

_IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg")


@dataclass(frozen=True)
class BinSpec:
    """Strictly increasing bin centers in [0, 180] degrees."""

    centers: tuple[float, ...] = DEFAULT_BIN_CENTERS

    def __post_init__(self) -> None:
        if not self.centers:
            raise ValueError("bin spec needs at least one center")
        for c in self.centers:
            if not 0.0 <= c <= 180.0:
                raise ValueError(f"bin center {c} outside [0, 180]")
        if any(b <= a for a, b in zip(self.centers, self.centers[1:])):
            raise ValueError("bin centers must be strictly increasing")


@dataclass(frozen=True)
class BinSelection:
    """One frame chosen for one bin center."""

    center_deg: float
    frame: int
    theta_deg: float
    error_deg: float


@dataclass(frozen=True)
class BinAssignment:
    """Per-instance mapping of bin centers to selected frames.

    Centers without a selection are unassigned (too few frames).
    """

    instance_id: str
    centers: tuple[float, ...]
    selections: tuple[BinSelection, ...]

    def selection_for(self, center_deg: float) -> BinSelection | None:
        for s in self.selections:
            if s.center_deg == center_deg:
                return s
        return None

    @property
    def unassigned_centers(self) -> tuple[float, ...]:
        assigned = {s.center_deg for s in self.selections}
        return tuple(c for c in self.centers if c not in assigned)


@dataclass(frozen=True)
class InstanceValidity:
    instance_id: str
    valid: bool
    max_abs_error_deg: float


def assign_bins(
    angles: Sequence[RelativeAngle], spec: BinSpec, instance_id: str = ""
) -> BinAssignment:
    """Greedily assign frames to bin centers in ascending center order.

    Each center takes the unused frame minimizing |theta - center|, ties
    broken by lower frame id; a frame serves at most one bin.
    """
    if not angles:
        raise ValueError("assign_bins needs at least one frame angle")
    remaining = list(angles)
    selections = []
    for center in spec.centers:
        if not remaining:
            break
        best = min(remaining, key=lambda a: (abs(a.theta_deg - center), a.frame))
        remaining.remove(best)
        selections.append(
            BinSelection(center, best.frame, best.theta_deg, best.theta_deg - center)
        )
    return BinAssignment(instance_id, tuple(spec.centers), tuple(selections))


def validate_instance(
    assignment: BinAssignment, tolerance_deg: float = DEFAULT_TOLERANCE_DEG
) -> InstanceValidity:
    """Valid iff every bin is assigned and no |error| exceeds the tolerance."""
    if tolerance_deg <= 0:
        raise ValueError("tolerance_deg must be positive")
    errors = [abs(s.error_deg) for s in assignment.selections]
    max_err = max(errors) if errors else 0.0
    complete = len(assignment.selections) == len(assignment.centers)
    return InstanceValidity(
        assignment.instance_id, complete and max_err <= tolerance_deg, max_err
    )


@dataclass(frozen=True)
class ManifestEntry:
    """One curated (image, mask) pair at one bin of one instance."""

    center_deg: float
    frame: int
    theta_deg: float
    error_deg: float
    image: str
    mask: str


@dataclass(frozen=True)
class ManifestInstance:
    instance_id: str
    entries: tuple[ManifestEntry, ...]


@dataclass(frozen=True)
class ManifestCategory:
    class_number: int
    class_id: int
    class_name: str
    instances: tuple[ManifestInstance, ...]


@dataclass(frozen=True)
class SubsetManifest:
    """Curated subset: valid instances grouped by category.

    Paths in entries are relative to ``root``. Semantic class ids are the
    1-based rank of the category by class_number; 0 is background.
    """

    root: Path
    bin_centers: tuple[float, ...]
    tolerance_deg: float
    categories: tuple[ManifestCategory, ...]

    @property
    def num_classes(self) -> int:
        return len(self.categories) + 1

    def iter_entries(
        self, bins: set[float] | None = None
    ) -> Iterator[tuple[ManifestCategory, ManifestInstance, ManifestEntry]]:
        """Deterministic traversal: class asc, instance asc, angle asc."""
        for cat in self.categories:
            for inst in cat.instances:
                for entry in inst.entries:
                    if bins is None or entry.center_deg in bins:
                        yield cat, inst, entry

    def image_path(self, entry: ManifestEntry) -> Path:
        return self.root / entry.image

    def mask_path(self, entry: ManifestEntry) -> Path:
        return self.root / entry.mask


@dataclass(frozen=True)
class AngleStatsRow:
    class_number: int
    class_name: str
    mean_error_deg: float
    std_error_deg: float
    images_per_bin: int


@dataclass(frozen=True)
class AngleStats:
    rows: tuple[AngleStatsRow, ...]


def angle_stats(manifest: SubsetManifest) -> AngleStats:
    """Per-class mean and population std of signed selection errors."""
    if not manifest.categories:
        raise ValueError("angle_stats needs a non-empty manifest")
    rows = []
    for cat in manifest.categories:
        errors = [e.error_deg for inst in cat.instances for e in inst.entries]
        n = len(errors)
        mean = sum(errors) / n
        var = sum((e - mean) ** 2 for e in errors) / n
        rows.append(
            AngleStatsRow(
                cat.class_number, cat.class_name, mean, math.sqrt(var), len(cat.instances)
            )
        )
    return AngleStats(tuple(rows))


def _find_reconstruction(instance_dir: Path) -> Path | None:
    for rel in ("sparse/0/images.txt", "sparse/images.txt", "images.txt"):
        p = instance_dir / rel
        if p.is_file():
            return p
    return None


def _image_files(instance_dir: Path) -> dict[str, Path]:
    """Map image-name stems to files under images/."""
    images = {}
    img_dir = instance_dir / "images"
    if img_dir.is_dir():
        for p in sorted(img_dir.iterdir()):
            if p.suffix.lower() in _IMAGE_SUFFIXES:
                images[p.stem] = p
    return images


def _angle_dirname(center: float) -> str:
    return str(int(center)) if float(center).is_integer() else f"{center:g}"


def build_manifest(
    root_dir: str | Path,
    spec: BinSpec = BinSpec(),
    tolerance_deg: float = DEFAULT_TOLERANCE_DEG,
    out_root: str | Path | None = None,
    class_names: dict[int, str] | None = None,
    remap_mask_values: bool = True,
    include_classes: set[int] | None = None,
) -> tuple[SubsetManifest, list[tuple[str, str]]]:
    """Scan ``root_dir`` and curate valid instances into a manifest.

    Expects ``<class_number>/<instance_id>/`` directories each holding
    ``images/``, ``masks/`` and a COLMAP reconstruction. With ``out_root``
    set, selected frames are copied into the
    ``{images,masks}/<class>/<angle>/<instance>_<frame>`` layout (mask
    pixel values remapped to the semantic class id unless disabled);
    otherwise the manifest references the originals in place.
    ``include_classes`` restricts the scan to the given category numbers.

    Returns the manifest and an exclusion log of (instance_id, reason).
    """
    root_dir = Path(root_dir)
    names = dict(MVIMGNET_CATEGORY_NAMES)
    if class_names:
        names.update(class_names)
    out = Path(out_root) if out_root is not None else None

    class_dirs = sorted(
        (d for d in root_dir.iterdir() if d.is_dir() and d.name.isdigit()),
        key=lambda d: int(d.name),
    ) if root_dir.is_dir() else []
    if include_classes is not None:
        class_dirs = [d for d in class_dirs if int(d.name) in include_classes]

    exclusions: list[tuple[str, str]] = []
    categories: list[ManifestCategory] = []
    for class_id, class_dir in enumerate(class_dirs, start=1):
        class_number = int(class_dir.name)
        instances: list[ManifestInstance] = []
        for inst_dir in sorted(d for d in class_dir.iterdir() if d.is_dir()):
            instance_id = inst_dir.name
            qualified = f"{class_number}/{instance_id}"
            reconstruction = _find_reconstruction(inst_dir)
            if reconstruction is None:
                exclusions.append((qualified, "missing COLMAP reconstruction"))
                continue
            try:
                poses = parse_colmap_images(reconstruction.read_text())
            except (ParseError, StructuralError) as exc:
                exclusions.append((qualified, f"unreadable reconstruction: {exc}"))
                continue
            images = _image_files(inst_dir)
            frames = [p for p in poses if Path(p.image_name).stem in images]
            if not frames:
                exclusions.append((qualified, "no registered frame has an image file"))
                continue
            reference = min(frames, key=lambda p: p.image_id)
            angles = relative_angles(frames, reference)
            assignment = assign_bins(angles, spec, instance_id)
            validity = validate_instance(assignment, tolerance_deg)
            if not validity.valid:
                missing = assignment.unassigned_centers
                if missing:
                    reason = "bins unassigned: " + ",".join(
                        _angle_dirname(c) for c in missing
                    )
                else:
                    reason = (
                        f"max angular error {validity.max_abs_error_deg:.3f} deg "
                        f"exceeds tolerance {tolerance_deg:g}"
                    )
                exclusions.append((qualified, reason))
                continue

            frame_by_id = {p.image_id: p for p in frames}
            entries: list[ManifestEntry] = []
            missing_mask = None
            for sel in assignment.selections:
                stem = Path(frame_by_id[sel.frame].image_name).stem
                image_file = images[stem]
                mask_file = inst_dir / "masks" / f"{stem}.png"
                if not mask_file.is_file():
                    missing_mask = sel.frame
                    break
                if out is not None:
                    rel_img, rel_mask = _copy_entry(
                        out, class_number, class_id, instance_id, sel,
                        image_file, mask_file, remap_mask_values,
                    )
                else:
                    rel_img = _relative_or_absolute(image_file, root_dir)
                    rel_mask = _relative_or_absolute(mask_file, root_dir)
                entries.append(
                    ManifestEntry(
                        sel.center_deg, sel.frame, sel.theta_deg, sel.error_deg,
                        rel_img, rel_mask,
                    )
                )
            if missing_mask is not None:
                exclusions.append(
                    (qualified, f"missing mask for selected frame {missing_mask}")
                )
                continue
            instances.append(ManifestInstance(instance_id, tuple(entries)))
        if instances:
            categories.append(
                ManifestCategory(
                    class_number,
                    class_id,
                    names.get(class_number, f"class_{class_number}"),
                    tuple(instances),
                )
            )

    manifest_root = out if out is not None else root_dir
    manifest = SubsetManifest(
        manifest_root, tuple(spec.centers), tolerance_deg, tuple(categories)
    )
    return manifest, exclusions


def _relative_or_absolute(path: Path, root: Path) -> str:
    try:
        return path.relative_to(root).as_posix()
    except ValueError:
        return str(path.resolve())


def _copy_entry(
    out: Path,
    class_number: int,
    class_id: int,
    instance_id: str,
    sel: BinSelection,
    image_file: Path,
    mask_file: Path,
    remap_mask_values: bool,
) -> tuple[str, str]:
    angle = _angle_dirname(sel.center_deg)
    stem = f"{instance_id}_{sel.frame}"
    rel_img = f"images/{class_number}/{angle}/{stem}{image_file.suffix.lower()}"
    rel_mask = f"masks/{class_number}/{angle}/{stem}.png"
    img_dst = out / rel_img
    mask_dst = out / rel_mask
    img_dst.parent.mkdir(parents=True, exist_ok=True)
    mask_dst.parent.mkdir(parents=True, exist_ok=True)
    shutil.copyfile(image_file, img_dst)
    if remap_mask_values:
        mask = read_mask(mask_file)
        mask[mask != 0] = class_id
        write_mask(mask, mask_dst)
    else:
        shutil.copyfile(mask_file, mask_dst)
    return rel_img, rel_mask


def validate_manifest(manifest: SubsetManifest) -> None:
    """Raise StructuralError if any referenced image or mask is missing."""
    for _, inst, entry in manifest.iter_entries():
        for p in (manifest.image_path(entry), manifest.mask_path(entry)):
            if not p.is_file():
                raise StructuralError(
                    f"manifest references missing file {p} (instance {inst.instance_id})"
                )


def manifest_to_json(manifest: SubsetManifest) -> str:
    """Deterministic JSON text for a manifest (paths relative to its root)."""
    doc = {
        "bin_centers": list(manifest.bin_centers),
        "tolerance_deg": manifest.tolerance_deg,
        "categories": [
            {
                "class_number": cat.class_number,
                "class_id": cat.class_id,
                "class_name": cat.class_name,
                "instances": [
                    {
                        "instance_id": inst.instance_id,
                        "bins": [
                            {
                                "center_deg": e.center_deg,
                                "frame": e.frame,
                                "theta_deg": e.theta_deg,
                                "error_deg": e.error_deg,
                                "image": e.image,
                                "mask": e.mask,
                            }
                            for e in inst.entries
                        ],
                    }
                    for inst in cat.instances
                ],
            }
            for cat in manifest.categories
        ],
    }
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def rebase_manifest(manifest: SubsetManifest, new_root: str | Path) -> SubsetManifest:
    """Rewrite entry paths so they resolve against ``new_root``."""
    import os

    new_root = Path(new_root)

    def rel(p: str) -> str:
        return Path(
            os.path.relpath((manifest.root / p).resolve(), new_root.resolve())
        ).as_posix()

    categories = tuple(
        ManifestCategory(
            cat.class_number,
            cat.class_id,
            cat.class_name,
            tuple(
                ManifestInstance(
                    inst.instance_id,
                    tuple(
                        ManifestEntry(
                            e.center_deg, e.frame, e.theta_deg, e.error_deg,
                            rel(e.image), rel(e.mask),
                        )
                        for e in inst.entries
                    ),
                )
                for inst in cat.instances
            ),
        )
        for cat in manifest.categories
    )
    return SubsetManifest(
        new_root, manifest.bin_centers, manifest.tolerance_deg, categories
    )


def save_manifest(manifest: SubsetManifest, path: str | Path) -> None:
    """Write manifest JSON; paths are rebased onto the file's directory."""
    path = Path(path)
    if path.parent.resolve() != manifest.root.resolve():
        manifest = rebase_manifest(manifest, path.parent)
    path.write_text(manifest_to_json(manifest))


def load_manifest(path: str | Path) -> SubsetManifest:
    """Load a manifest JSON; entry paths resolve against the file's directory."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: not valid manifest JSON ({exc})") from exc
    try:
        categories = tuple(
            ManifestCategory(
                cat["class_number"],
                cat["class_id"],
                cat["class_name"],
                tuple(
                    ManifestInstance(
                        inst["instance_id"],
                        tuple(
                            ManifestEntry(
                                float(b["center_deg"]), int(b["frame"]),
                                float(b["theta_deg"]), float(b["error_deg"]),
                                b["image"], b["mask"],
                            )
                            for b in inst["bins"]
                        ),
                    )
                    for inst in cat["instances"]
                ),
            )
            for cat in doc["categories"]
        )
        return SubsetManifest(
            path.parent,
            tuple(float(c) for c in doc["bin_centers"]),
            float(doc["tolerance_deg"]),
            categories,
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"{path}: malformed manifest ({exc})") from exc


def write_exclusion_log(exclusions: list[tuple[str, str]], path: str | Path) -> None:
    """Line-oriented exclusion log: instance_id<TAB>reason."""
    Path(path).write_text("".join(f"{i}\t{r}\n" for i, r in exclusions))
