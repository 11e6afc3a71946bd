"""Text manifest describing one export run.

The manifest is a plain ``key=value`` file (`#` comments, blank lines
ignored) naming the dataset root, the subdirectory of each view, the
backbone, and the output paths. Class names map to dense indices either
from an explicit ``classes=`` list or from the sorted union of class
directories found under the views.
"""

import dataclasses
from pathlib import Path
from typing import Optional


class ManifestError(ValueError):
    """Raised for unknown keys, missing paths, or inconsistent class tables."""


MANIFEST_DEFAULTS = {
    "root": "",
    "view0": "",
    "view1": "",
    "backbone": "resnet18",
    "backbone_checkpoint": "",
    "classifier_view0": "",
    "classifier_view1": "",
    "out_embeddings_view0": "out/view0.mveb",
    "out_embeddings_view1": "out/view1.mveb",
    "out_scores_view0": "out/scores_view0.mvsc",
    "out_scores_view1": "out/scores_view1.mvsc",
    "classes": "",
    "image_size": "224",
    "batch_size": "16",
    "seed": "0",
}


@dataclasses.dataclass(frozen=True)
class ExportManifest:
    """Resolved export run description; paths are absolute."""

    root: Path
    view_dirs: tuple[str, str]
    backbone: str
    backbone_checkpoint: Optional[Path]
    classifier_paths: tuple[Optional[Path], Optional[Path]]
    out_embeddings: tuple[Path, Path]
    out_scores: tuple[Path, Path]
    class_names: Optional[tuple[str, ...]]
    image_size: int
    batch_size: int
    seed: int

    def __post_init__(self):
        if not self.root.is_dir():
            raise ManifestError(f"dataset root {self.root} is not a directory")
        for sub in self.view_dirs:
            if not sub:
                raise ManifestError("both view0 and view1 subdirectories are required")
            if not (self.root / sub).is_dir():
                raise ManifestError(f"view subdirectory {self.root / sub} not found")
        if self.view_dirs[0] == self.view_dirs[1]:
            raise ManifestError("view0 and view1 must name different subdirectories")
        if self.image_size < 32:
            raise ManifestError(f"image_size must be >= 32, got {self.image_size}")
        if self.batch_size < 1:
            raise ManifestError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.class_names is not None:
            if len(self.class_names) < 2:
                raise ManifestError("classes list needs at least 2 names")
            if len(set(self.class_names)) != len(self.class_names):
                raise ManifestError("classes list has duplicate names")


def parse_manifest_text(text: str, source: str = "<manifest>") -> dict[str, str]:
    """Parse the key=value dialect; unknown or duplicate keys are errors."""
    values: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ManifestError(f"{source}:{lineno}: expected key=value, got {line!r}")
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if key not in MANIFEST_DEFAULTS:
            raise ManifestError(f"{source}:{lineno}: unknown key {key!r}")
        if key in values:
            raise ManifestError(f"{source}:{lineno}: duplicate key {key!r}")
        values[key] = value
    return values


def _to_int(raw: str, key: str) -> int:
    try:
        return int(raw)
    except ValueError as exc:
        raise ManifestError(f"{key} must be an integer, got {raw!r}") from exc


def load_manifest(path) -> ExportManifest:
    path = Path(path)
    if not path.is_file():
        raise ManifestError(f"manifest file {path} not found")
    values = dict(MANIFEST_DEFAULTS)
    values.update(parse_manifest_text(path.read_text(), source=str(path)))
    if not values["root"]:
        raise ManifestError(f"{path}: root= is required")
    base = path.parent
    root = (base / values["root"]).resolve()

    def out_path(key: str) -> Path:
        return (base / values[key]).resolve()

    def opt_path(key: str) -> Optional[Path]:
        return (base / values[key]).resolve() if values[key] else None

    classes = values["classes"]
    class_names = tuple(c.strip() for c in classes.split(",")) if classes else None
    return ExportManifest(
        root=root,
        view_dirs=(values["view0"], values["view1"]),
        backbone=values["backbone"],
        backbone_checkpoint=opt_path("backbone_checkpoint"),
        classifier_paths=(opt_path("classifier_view0"), opt_path("classifier_view1")),
        out_embeddings=(out_path("out_embeddings_view0"), out_path("out_embeddings_view1")),
        out_scores=(out_path("out_scores_view0"), out_path("out_scores_view1")),
        class_names=class_names,
        image_size=_to_int(values["image_size"], "image_size"),
        batch_size=_to_int(values["batch_size"], "batch_size"),
        seed=_to_int(values["seed"], "seed"),
    )
