"""
Asset manifest, image I/O and the subject-pair taxonomy.

Manifest lines read ``image_path mask_path class_name token_name``; blank
lines and ``#`` comments are ignored, relative paths resolve against the
manifest's directory and a ``-`` mask path derives the mask by chroma key.
"""

import json
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import numpy as np
from PIL import Image
from pydantic import BaseModel

from ..utils.errors import FileIOError, InvalidArgumentError, NotFoundError
from .models import CompositeSample, SubjectAsset
from .synthetic import CATALOGUE, Pose, chroma_mask, draw_subject, estimate_background, get_signature

SUBJECT_PAIRS_PATH = Path(__file__).parent / "data" / "subject_pairs.json"


def load_image(path: Union[str, Path]) -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise NotFoundError(f"image not found: {path}")
    try:
        with Image.open(path) as image:
            return np.asarray(image.convert("RGB"), dtype=np.float32) / 255.0
    except OSError as e:
        raise FileIOError(f"cannot read image {path}: {e}", str(path))


def load_mask(path: Union[str, Path]) -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise NotFoundError(f"mask not found: {path}")
    try:
        with Image.open(path) as image:
            return np.asarray(image.convert("L")) > 127
    except OSError as e:
        raise FileIOError(f"cannot read mask {path}: {e}", str(path))


def save_image(image: np.ndarray, path: Union[str, Path]) -> Path:
    path = Path(path)
    pixels = (np.clip(image, 0.0, 1.0) * 255.0).round().astype(np.uint8)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        Image.fromarray(pixels).save(path)
    except OSError as e:
        raise FileIOError(f"cannot write image {path}: {e}", str(path))
    return path


def save_mask(mask: np.ndarray, path: Union[str, Path]) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        Image.fromarray(mask.astype(np.uint8) * 255).save(path)
    except OSError as e:
        raise FileIOError(f"cannot write mask {path}: {e}", str(path))
    return path


def load_asset_manifest(path: Union[str, Path]) -> List[SubjectAsset]:
    """Subjects as listed in the manifest, backgrounds still present"""
    path = Path(path)
    if not path.exists():
        raise NotFoundError(f"asset manifest not found: {path}")
    base_dir = path.parent
    assets = []
    for line_number, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        text = line.split("#", 1)[0].strip()
        if not text:
            continue
        fields = text.split()
        if len(fields) != 4:
            raise InvalidArgumentError(
                f"{path}:{line_number}: expected 'image_path mask_path class_name token_name'"
            )
        image_path, mask_path, class_name, token_name = fields
        image = load_image(base_dir / image_path)
        if mask_path == "-":
            mask = chroma_mask(image, estimate_background(image))
        else:
            mask = load_mask(base_dir / mask_path)
        assets.append(SubjectAsset(image=image, mask=mask, class_name=class_name, token_name=token_name))
    if not assets:
        raise InvalidArgumentError(f"asset manifest {path} lists no subjects")
    return assets


def write_synthetic_assets(
    class_names: Sequence[str],
    directory: Union[str, Path],
    token_names: Optional[Sequence[str]] = None,
    height: int = 32,
    width: int = 22,
    seed: int = 0,
    with_masks: bool = True,
) -> Path:
    """Render catalogue subjects to PNGs and write a manifest next to them"""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    token_names = list(token_names or [f"<new{i + 1}>" for i in range(len(class_names))])
    if len(token_names) != len(class_names):
        raise InvalidArgumentError("one token name is needed per class")

    rng = np.random.default_rng(seed)
    lines = ["# image_path mask_path class_name token_name"]
    for class_name, token_name in zip(class_names, token_names):
        signature = get_signature(class_name)
        image, mask = draw_subject(signature, height, width, rng, Pose.centered(height, width))
        image_name = f"{class_name}.png"
        save_image(image, directory / image_name)
        mask_name = "-"
        if with_masks:
            mask_name = f"{class_name}_mask.png"
            save_mask(mask, directory / mask_name)
        lines.append(f"{image_name} {mask_name} {class_name} {token_name}")

    manifest_path = directory / "manifest.txt"
    manifest_path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return manifest_path


def dump_composite(sample: CompositeSample, directory: Union[str, Path], name: str = "composite") -> List[Path]:
    """Write the composite image and one PNG per subject mask for inspection"""
    directory = Path(directory)
    written = [save_image(sample.image, directory / f"{name}.png")]
    for index, mask in enumerate(sample.per_subject_masks):
        written.append(save_mask(mask, directory / f"{name}_mask{index + 1}.png"))
    (directory / f"{name}.json").write_text(
        json.dumps(
            {"prompt": sample.prompt, "token_positions": sample.token_positions,
             "token_names": sample.token_names, "class_names": sample.class_names},
            indent=2,
        ),
        encoding="utf-8",
    )
    return written


class SubjectPair(BaseModel):
    """Category combination of the subject-pair taxonomy"""
    categories: List[str]

    @property
    def subject_count(self) -> int:
        return len(self.categories)


def load_subject_pairs(path: Optional[Path] = None) -> List[SubjectPair]:
    data = json.loads(Path(path or SUBJECT_PAIRS_PATH).read_text(encoding="utf-8"))
    return [SubjectPair(categories=row) for key in ("two_subject", "three_subject") for row in data[key]]


def desk_pairs(pairs: Optional[List[SubjectPair]] = None) -> List[List[str]]:
    """Pairs whose categories all resolve to distinct desk classes"""
    by_category: Dict[str, List[str]] = {}
    for signature in CATALOGUE.values():
        by_category.setdefault(signature.category, []).append(signature.class_name)

    resolved = []
    for pair in pairs or load_subject_pairs():
        used: List[str] = []
        for category in pair.categories:
            available = [name for name in by_category.get(category, []) if name not in used]
            if not available:
                break
            used.append(available[0])
        else:
            resolved.append(used)
    return resolved
