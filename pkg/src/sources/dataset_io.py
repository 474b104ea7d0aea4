"""Plain dataset directory: imu.csv, features.csv, groundtruth.csv and calib.yaml.

Floats are written with their shortest round-trip representation, so an
export/ingest cycle reproduces every value bit for bit.
"""
from __future__ import annotations

import logging
import os
from typing import Any, Dict, List

import numpy as np
import yaml
from scipy.spatial.transform import Rotation

from ..errors import DatasetError
from ..models import CameraIntrinsics, Dataset, Frame, GroundTruth, ImuNoiseModel, ImuStream
from ..utils import LINE_KEY, fmt_float, read_numeric_csv, require_increasing, write_csv

logger = logging.getLogger(__name__)

IMU_FILE = "imu.csv"
FEATURES_FILE = "features.csv"
GROUNDTRUTH_FILE = "groundtruth.csv"
CALIB_FILE = "calib.yaml"

IMU_COLUMNS = [("t_ns", int), ("wx", float), ("wy", float), ("wz", float)]
ACC_COLUMNS = [("ax", float), ("ay", float), ("az", float)]
FEATURE_COLUMNS = [("t_ns", int), ("frame_id", int), ("feature_id", int), ("u", float), ("v", float)]
GT_COLUMNS = ([("t_ns", int), ("px", float), ("py", float), ("pz", float),
               ("qw", float), ("qx", float), ("qy", float), ("qz", float),
               ("bgx", float), ("bgy", float), ("bgz", float)]
              + [(f"r{i}{j}", float) for i in range(3) for j in range(3)])


def _matrix(m: np.ndarray) -> List[List[float]]:
    return [[float(x) for x in row] for row in m]


def export(dataset: Dataset, folder: str) -> None:
    os.makedirs(folder, exist_ok=True)
    imu = dataset.imu
    header = [c for c, _ in IMU_COLUMNS] + ([c for c, _ in ACC_COLUMNS] if imu.acc is not None else [])

    def imu_rows():
        for k in range(len(imu)):
            row = [str(int(imu.t_ns[k]))] + [fmt_float(x) for x in imu.omega[k]]
            if imu.acc is not None:
                row += [fmt_float(x) for x in imu.acc[k]]
            yield row

    write_csv(os.path.join(folder, IMU_FILE), header, imu_rows())

    def feature_rows():
        for fr in dataset.frames:
            for fid, (u, v) in zip(fr.feature_ids, fr.uv):
                yield [str(fr.t_ns), str(fr.frame_id), str(int(fid)), fmt_float(u), fmt_float(v)]

    write_csv(os.path.join(folder, FEATURES_FILE), [c for c, _ in FEATURE_COLUMNS], feature_rows())

    gt = dataset.ground_truth
    if gt is not None:
        quats = Rotation.from_matrix(gt.rotations).as_quat()  # x, y, z, w

        def gt_rows():
            for k in range(len(gt.t_ns)):
                q = quats[k]
                yield ([str(int(gt.t_ns[k]))] + [fmt_float(x) for x in gt.positions[k]]
                       + [fmt_float(q[3]), fmt_float(q[0]), fmt_float(q[1]), fmt_float(q[2])]
                       + [fmt_float(x) for x in gt.biases[k]]
                       + [fmt_float(x) for x in gt.rotations[k].ravel()])

        write_csv(os.path.join(folder, GROUNDTRUTH_FILE), [c for c, _ in GT_COLUMNS], gt_rows())

    K = dataset.intrinsics
    calib: Dict[str, Any] = {
        "name": dataset.name,
        "camera": {"fx": K.fx, "fy": K.fy, "cx": K.cx, "cy": K.cy, "width": K.width, "height": K.height},
        "imu": {"sigma_g": dataset.noise.sigma_g, "sigma_bg": dataset.noise.sigma_bg, "dt": dataset.noise.dt},
        "r_ci_nominal": _matrix(dataset.r_ci_nominal),
    }
    if gt is not None:
        calib["r_ci_true"] = _matrix(gt.r_ci)
    with open(os.path.join(folder, CALIB_FILE), "w", encoding="utf-8") as f:
        yaml.safe_dump(calib, f, sort_keys=False, default_flow_style=None)
    logger.info("exported %s: %d IMU samples, %d frames -> %s", dataset.name, len(imu), len(dataset.frames), folder)


def _require(d: Dict[str, Any], key: str, path: str):
    if key not in d:
        raise DatasetError(path, f"missing key '{key}'")
    return d[key]


def read_calib(path: str) -> Dict[str, Any]:
    try:
        with open(path, "r", encoding="utf-8") as f:
            text = f.read()
    except FileNotFoundError:
        raise DatasetError(path, "file not found") from None
    try:
        data = yaml.safe_load(text) or {}
    except yaml.YAMLError as e:
        mark = getattr(e, "problem_mark", None)
        raise DatasetError(path, f"invalid YAML: {getattr(e, 'problem', e)}",
                           line=mark.line + 1 if mark else None,
                           column=mark.column + 1 if mark else None) from None
    if not isinstance(data, dict):
        raise DatasetError(path, "expected a mapping at top level")
    return data


def frames_from_arrays(cols: Dict[str, np.ndarray], path: str) -> List[Frame]:
    order = np.lexsort((cols["feature_id"], cols["frame_id"]))
    frame_id = cols["frame_id"][order]
    frames: List[Frame] = []
    if frame_id.size == 0:
        return frames
    starts = np.flatnonzero(np.r_[True, np.diff(frame_id) != 0])
    ends = np.r_[starts[1:], frame_id.size]
    for s, e in zip(starts, ends):
        sl = order[s:e]
        t = np.unique(cols["t_ns"][sl])
        if t.size != 1:
            raise DatasetError(path, f"frame {int(frame_id[s])} has {t.size} different timestamps")
        fids = cols["feature_id"][sl]
        if np.unique(fids).size != fids.size:
            raise DatasetError(path, f"frame {int(frame_id[s])} lists a feature id twice")
        frames.append(Frame(frame_id=int(frame_id[s]), t_ns=int(t[0]), feature_ids=fids,
                            uv=np.column_stack([cols["u"][sl], cols["v"][sl]])))
    frames.sort(key=lambda fr: fr.t_ns)
    return frames


def read_features(path: str) -> List[Frame]:
    return frames_from_arrays(read_numeric_csv(path, FEATURE_COLUMNS), path)


def ingest(folder: str) -> Dataset:
    imu_path = os.path.join(folder, IMU_FILE)
    calib_path = os.path.join(folder, CALIB_FILE)
    calib = read_calib(calib_path)

    cols = read_numeric_csv(imu_path, IMU_COLUMNS + ACC_COLUMNS, min_columns=len(IMU_COLUMNS))
    t_ns = cols["t_ns"]
    if t_ns.size == 0:
        raise DatasetError(imu_path, "no IMU samples")
    require_increasing(imu_path, t_ns, cols[LINE_KEY])
    acc = np.column_stack([cols["ax"], cols["ay"], cols["az"]])
    imu = ImuStream(t_ns=t_ns, omega=np.column_stack([cols["wx"], cols["wy"], cols["wz"]]),
                    acc=None if np.all(np.isnan(acc)) else acc)

    frames = read_features(os.path.join(folder, FEATURES_FILE))

    cam = _require(calib, "camera", calib_path)
    noise_cfg = _require(calib, "imu", calib_path)
    try:
        K = CameraIntrinsics(float(cam["fx"]), float(cam["fy"]), float(cam["cx"]), float(cam["cy"]),
                             int(cam["width"]), int(cam["height"]))
        noise = ImuNoiseModel(float(noise_cfg["sigma_g"]), float(noise_cfg["sigma_bg"]), float(noise_cfg["dt"]))
        r_nominal = np.array(_require(calib, "r_ci_nominal", calib_path), dtype=float)
    except (KeyError, TypeError, ValueError) as e:
        raise DatasetError(calib_path, f"bad calibration entry: {e}") from None

    truth = None
    gt_path = os.path.join(folder, GROUNDTRUTH_FILE)
    if os.path.exists(gt_path):
        g = read_numeric_csv(gt_path, GT_COLUMNS, min_columns=11)
        if np.all(np.isfinite(g["r00"])):
            rot = np.stack([g[f"r{i}{j}"] for i in range(3) for j in range(3)], axis=1).reshape(-1, 3, 3)
        else:
            rot = Rotation.from_quat(np.column_stack([g["qx"], g["qy"], g["qz"], g["qw"]])).as_matrix()
        r_true = np.array(calib.get("r_ci_true", r_nominal), dtype=float)
        truth = GroundTruth(
            t_ns=g["t_ns"],
            positions=np.column_stack([g["px"], g["py"], g["pz"]]),
            rotations=rot,
            biases=np.column_stack([g["bgx"], g["bgy"], g["bgz"]]),
            r_ci=r_true,
        )
    logger.info("ingested %s: %d IMU samples, %d frames", folder, len(imu), len(frames))
    return Dataset(imu=imu, frames=frames, intrinsics=K, noise=noise, r_ci_nominal=r_nominal,
                   ground_truth=truth, name=str(calib.get("name", os.path.basename(os.path.normpath(folder)))))
