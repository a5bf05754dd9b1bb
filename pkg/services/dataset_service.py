"""On-disk dataset layout.

<dir>/manifest.json lists every sample with its seed and scene parameters;
each sample directory holds I.png, B.png (8-bit RGB), the ground-truth
stack as gt/F_%02d.png (8-bit) and gt/M_%02d.png (16-bit) and the
ground-truth trajectory as gt/traj.csv. Samples composed over a jittered
background also keep the true frame as B_true.png.
"""

import csv
import json
import logging
import os
from dataclasses import asdict
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

from services.scene_model import ObjectSpec, SceneSpec, SynthSample, TrajectorySpec
from services.errors import DatasetError, FmoError
from services.image_service import Image, RenderingStack, load_png, save_png
from services.metrics import Trajectory

logger = logging.getLogger("fmo.dataset")

MANIFEST = "manifest.json"
MANIFEST_VERSION = 1
TRAJ_HEADER = ["index", "t", "x", "y"]


def sample_id(index: int) -> str:
    return f"{index:06d}"


def _spec_record(spec: SceneSpec) -> Dict[str, Any]:
    return {
        "seed": int(spec.seed),
        "object": asdict(spec.object),
        "trajectory": asdict(spec.trajectory),
        "background": spec.background,
        "dynamic_background": bool(spec.dynamic_background),
    }


def _spec_from_record(record: Dict[str, Any]) -> SceneSpec:
    obj = record["object"]
    traj = record["trajectory"]
    return SceneSpec(
        object=ObjectSpec(
            shape=obj["shape"],
            size=float(obj["size"]),
            texture=obj["texture"],
            colors=tuple(tuple(c) for c in obj["colors"]),
            vertices=tuple(tuple(v) for v in obj["vertices"]),
        ),
        trajectory=TrajectorySpec(
            start=tuple(traj["start"]),
            displacement=tuple(traj["displacement"]),
            scale_rate=float(traj["scale_rate"]),
            rotation=float(traj["rotation"]),
        ),
        seed=int(record["seed"]),
        background=record["background"],
        dynamic_background=bool(record.get("dynamic_background", False)),
    )


def write_trajectory(traj: Trajectory, path: str) -> None:
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(TRAJ_HEADER)
        for i, (t, (x, y), present) in enumerate(zip(traj.times, traj.centers, traj.present)):
            if present:
                writer.writerow([i, repr(float(t)), repr(float(x)), repr(float(y))])
            else:
                writer.writerow([i, repr(float(t)), "", ""])


def read_trajectory(path: str, radius: Optional[float] = None) -> Trajectory:
    try:
        with open(path, newline="") as handle:
            rows = list(csv.reader(handle))
    except OSError as exc:
        raise DatasetError("missing trajectory file", path) from exc
    if not rows or rows[0] != TRAJ_HEADER:
        raise DatasetError("trajectory header must be index,t,x,y", path)
    times, centers, present = [], [], []
    try:
        for row in rows[1:]:
            times.append(float(row[1]))
            if row[2] == "" or row[3] == "":
                centers.append((0.0, 0.0))
                present.append(False)
            else:
                centers.append((float(row[2]), float(row[3])))
                present.append(True)
    except (IndexError, ValueError) as exc:
        raise DatasetError(f"malformed trajectory row ({exc})", path) from exc
    return Trajectory(np.array(times), np.array(centers).reshape(-1, 2), np.array(present), radius)


def save_stack(stack: RenderingStack, directory: str) -> None:
    """F_%02d.png at 8 bits and M_%02d.png at 16 bits."""
    os.makedirs(directory, exist_ok=True)
    for i in range(stack.n):
        save_png(Image(np.clip(stack.F[i], 0.0, 1.0)), os.path.join(directory, f"F_{i:02d}.png"))
        save_png(Image(np.clip(stack.M[i], 0.0, 1.0)), os.path.join(directory, f"M_{i:02d}.png"), bit_depth=16)


def load_stack(directory: str, n: Optional[int] = None) -> RenderingStack:
    if not os.path.isdir(directory):
        raise DatasetError("missing stack directory", directory)
    if n is None:
        n = len([name for name in os.listdir(directory) if name.startswith("F_") and name.endswith(".png")])
    if n < 1:
        raise DatasetError("stack directory holds no renderings", directory)
    F, M = [], []
    for i in range(n):
        f_path = os.path.join(directory, f"F_{i:02d}.png")
        m_path = os.path.join(directory, f"M_{i:02d}.png")
        for path in (f_path, m_path):
            if not os.path.isfile(path):
                raise DatasetError("missing rendering", path)
        appearance = load_png(f_path)
        mask = load_png(m_path)
        if appearance.channels != 3 or mask.channels != 1:
            raise DatasetError("rendering has unexpected channel count", f_path)
        F.append(appearance.data)
        M.append(mask.data)
    try:
        return RenderingStack(np.stack(F), np.stack(M))
    except (ValueError, FmoError) as exc:
        raise DatasetError(f"inconsistent stack ({exc})", directory) from exc


def write_sample(sample: SynthSample, directory: str) -> None:
    os.makedirs(directory, exist_ok=True)
    save_png(sample.I, os.path.join(directory, "I.png"))
    save_png(sample.B, os.path.join(directory, "B.png"))
    if sample.background_true is not None:
        save_png(sample.background_true, os.path.join(directory, "B_true.png"))
    gt_dir = os.path.join(directory, "gt")
    save_stack(sample.gt_stack, gt_dir)
    write_trajectory(sample.gt_traj, os.path.join(gt_dir, "traj.csv"))


def write_dataset(
    samples: Sequence[SynthSample],
    directory: str,
    config: Optional[Dict[str, Any]] = None,
) -> str:
    """Write samples under directory in list order; returns the manifest path."""
    try:
        os.makedirs(directory, exist_ok=True)
    except OSError as exc:
        raise DatasetError(f"cannot create dataset directory ({exc})", directory) from exc

    canvas = list(samples[0].canvas) if samples else None
    n = samples[0].gt_stack.n if samples else None
    entries = []
    for index, sample in enumerate(samples):
        if list(sample.canvas) != canvas or sample.gt_stack.n != n:
            raise DatasetError(f"sample {index} differs in canvas or sub-frame count", directory)
        sid = sample_id(index)
        write_sample(sample, os.path.join(directory, sid))
        entry = {"id": sid, "radius": sample.gt_traj.radius}
        entry.update(_spec_record(sample.spec))
        entries.append(entry)

    manifest = {"version": MANIFEST_VERSION, "canvas": canvas, "N": n, "samples": entries}
    if config is not None:
        manifest["config"] = config
    path = os.path.join(directory, MANIFEST)
    with open(path, "w") as handle:
        json.dump(manifest, handle, indent=2, sort_keys=True)
        handle.write("\n")
    logger.info("wrote %d samples to %s", len(entries), directory)
    return path


def read_manifest(directory: str) -> Dict[str, Any]:
    path = os.path.join(directory, MANIFEST)
    try:
        with open(path) as handle:
            manifest = json.load(handle)
    except FileNotFoundError as exc:
        raise DatasetError("missing manifest", path) from exc
    except (OSError, json.JSONDecodeError) as exc:
        raise DatasetError(f"unreadable manifest ({exc})", path) from exc
    if not isinstance(manifest, dict) or manifest.get("version") != MANIFEST_VERSION:
        raise DatasetError(f"manifest version must be {MANIFEST_VERSION}", path)
    samples = manifest.get("samples")
    if not isinstance(samples, list):
        raise DatasetError("manifest has no sample list", path)
    for entry in samples:
        if not isinstance(entry, dict) or "id" not in entry or "seed" not in entry:
            raise DatasetError("manifest entry lacks id or seed", path)
    return manifest


def read_sample(directory: str, entry: Dict[str, Any], n: int) -> SynthSample:
    sample_dir = os.path.join(directory, entry["id"])
    if not os.path.isdir(sample_dir):
        raise DatasetError("missing sample directory", sample_dir)
    images = {}
    for name in ("I", "B"):
        path = os.path.join(sample_dir, f"{name}.png")
        if not os.path.isfile(path):
            raise DatasetError("missing image", path)
        images[name] = load_png(path)
    true_path = os.path.join(sample_dir, "B_true.png")
    background_true = load_png(true_path) if os.path.isfile(true_path) else None
    gt_dir = os.path.join(sample_dir, "gt")
    try:
        spec = _spec_from_record(entry)
    except (KeyError, TypeError, ValueError) as exc:
        raise DatasetError(f"malformed scene record for {entry['id']} ({exc})", os.path.join(directory, MANIFEST)) from exc
    return SynthSample(
        I=images["I"],
        B=images["B"],
        gt_stack=load_stack(gt_dir, n),
        gt_traj=read_trajectory(os.path.join(gt_dir, "traj.csv"), entry.get("radius")),
        spec=spec,
        background_true=background_true,
    )


def read_dataset(directory: str) -> List[SynthSample]:
    """Samples in manifest order."""
    manifest = read_manifest(directory)
    return [read_sample(directory, entry, manifest["N"]) for entry in manifest["samples"]]
