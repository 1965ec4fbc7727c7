"""On-disk fixtures shared by the CLI and acceptance tests."""
import hashlib
import json
import os

import numpy as np

from rdsnet import raster
from rdsnet.synthetic import rectangle_dataset

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
DESK = os.path.join(ROOT, "configs", "desk.json")


def tree_digest(path):
    out = {}
    for dirpath, _, files in os.walk(path):
        for f in files:
            p = os.path.join(dirpath, f)
            with open(p, "rb") as fh:
                out[os.path.relpath(p, path)] = hashlib.sha256(fh.read()).hexdigest()
    return out


def write_sod(root, count=4, side=32, seed=0):
    os.makedirs(root / "img", exist_ok=True)
    os.makedirs(root / "gt", exist_ok=True)
    rows = []
    for s in rectangle_dataset(count, side, seed=seed):
        raster.write_pnm(root / "img" / f"{s.name}.ppm", raster.to_uint8(s.image.transpose(1, 2, 0)))
        raster.write_pnm(root / "gt" / f"{s.name}.pgm", raster.to_uint8(s.ground_truth))
        rows.append({"image": f"img/{s.name}.ppm", "gt": f"gt/{s.name}.pgm"})
    (root / "train.jsonl").write_text("".join(json.dumps(r) + "\n" for r in rows))
    return root / "train.jsonl"


def objectness_fixture(root):
    """Four 10x10 images whose boxes cover 20%, 50%, 80% and 100% of the frame."""
    os.makedirs(root / "img", exist_ok=True)
    boxes = {"a": [[0, 0, 2, 10]], "b": [[0, 0, 5, 10]], "c": [[0, 0, 8, 10]], "d": [[0, 0, 10, 10]]}
    rows = []
    for name, bx in boxes.items():
        raster.write_pnm(root / "img" / f"{name}.ppm", np.zeros((10, 10, 3), np.uint8))
        rows.append({"image": f"img/{name}.ppm", "width": 10, "height": 10, "boxes": bx, "source": "VOC"})
    (root / "obj.jsonl").write_text("".join(json.dumps(r) + "\n" for r in rows))
    return root / "obj.jsonl"
