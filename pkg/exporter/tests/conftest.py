import numpy as np
import pytest
import torch
from PIL import Image

VIEWS = ("aerial", "ground")
CLASSES = ("beach", "forest", "urban")
RESNET18_WIDTH = 512


def make_tree(root, per_class, size=48, seed=42, views=VIEWS, classes=CLASSES):
    """Per-view class-directory tree of random RGB PNGs; paired filenames."""
    rng = np.random.default_rng(seed)
    for view in views:
        for cls in classes:
            d = root / view / cls
            d.mkdir(parents=True)
            for i in range(per_class):
                arr = rng.integers(0, 256, size=(size, size, 3), dtype=np.uint8)
                Image.fromarray(arr).save(d / f"img{i:03d}.png")
    return root


def make_classifier(path, n_classes=len(CLASSES), width=RESNET18_WIDTH, seed=7,
                    zero=False, with_bias=True):
    gen = torch.Generator().manual_seed(seed)
    weight = (
        torch.zeros(n_classes, width)
        if zero
        else torch.randn(n_classes, width, generator=gen) * 0.01
    )
    state = {"weight": weight}
    if with_bias:
        state["bias"] = (
            torch.zeros(n_classes)
            if zero
            else torch.randn(n_classes, generator=gen) * 0.01
        )
    torch.save(state, path)
    return path


def write_manifest(base, body):
    path = base / "run.manifest"
    path.write_text(body)
    return path


def standard_manifest_text(image_size=64, extra=""):
    return (
        "root=data\nview0=aerial\nview1=ground\nbackbone=resnet18\n"
        "classifier_view0=clf.pt\nclassifier_view1=clf.pt\n"
        f"image_size={image_size}\nbatch_size=8\nseed=3\n" + extra
    )


@pytest.fixture(scope="module")
def toy_run(tmp_path_factory):
    """One 30-image-per-view export (embeddings + scores), shared per module."""
    from viewfill_export import export_embeddings, export_scores, load_manifest

    base = tmp_path_factory.mktemp("toy")
    make_tree(base / "data", per_class=10)
    make_classifier(base / "clf.pt")
    manifest = load_manifest(write_manifest(base, standard_manifest_text()))
    emb_result = export_embeddings(manifest)
    score_result = export_scores(manifest)
    return base, manifest, emb_result, score_result
