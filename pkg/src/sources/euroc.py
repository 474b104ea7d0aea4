"""EuRoC MAV directory layout (mav0/...) plus an external features.csv."""
from __future__ import annotations

import logging
import os
from typing import Any, Dict, Optional

import numpy as np
import yaml
from scipy.spatial.transform import Rotation

from ..config import euroc_defaults
from ..errors import DatasetError
from ..models import CameraIntrinsics, Dataset, GroundTruth, ImuNoiseModel, ImuStream
from ..utils import LINE_KEY, read_numeric_csv, require_increasing
from .dataset_io import read_features

logger = logging.getLogger(__name__)

EUROC_IMU_COLUMNS = [("t_ns", int), ("wx", float), ("wy", float), ("wz", float),
                     ("ax", float), ("ay", float), ("az", float)]
EUROC_GT_COLUMNS = ([("t_ns", int), ("px", float), ("py", float), ("pz", float),
                     ("qw", float), ("qx", float), ("qy", float), ("qz", float),
                     ("vx", float), ("vy", float), ("vz", float),
                     ("bgx", float), ("bgy", float), ("bgz", float)])


def is_euroc(folder: str) -> bool:
    return os.path.isdir(os.path.join(folder, "mav0"))


def read_sensor_yaml(path: str) -> Dict[str, Any]:
    """EuRoC sensor.yaml; the leading `%YAML:1.0` directive is not YAML 1.1 and is dropped."""
    try:
        with open(path, "r", encoding="utf-8") as f:
            lines = f.readlines()
    except FileNotFoundError:
        raise DatasetError(path, "file not found") from None
    offset = 0
    if lines and lines[0].startswith("%YAML"):
        lines = lines[1:]
        offset = 1
    try:
        data = yaml.safe_load("".join(lines)) or {}
    except yaml.YAMLError as e:
        mark = getattr(e, "problem_mark", None)
        raise DatasetError(path, f"invalid YAML: {getattr(e, 'problem', e)}",
                           line=mark.line + 1 + offset if mark else None,
                           column=mark.column + 1 if mark else None) from None
    return data


def _t_bs_rotation(sensor: Dict[str, Any], path: str) -> np.ndarray:
    try:
        data = np.array(sensor["T_BS"]["data"], dtype=float).reshape(4, 4)
    except (KeyError, TypeError, ValueError):
        raise DatasetError(path, "T_BS must hold 16 numbers under T_BS.data") from None
    return data[:3, :3]


def _features_path(folder: str) -> str:
    for cand in (os.path.join(folder, "features.csv"), os.path.join(folder, "mav0", "features.csv")):
        if os.path.exists(cand):
            return cand
    return os.path.join(folder, "features.csv")


def ingest_euroc(folder: str, noise: Optional[ImuNoiseModel] = None) -> Dataset:
    mav = os.path.join(folder, "mav0")
    imu_path = os.path.join(mav, "imu0", "data.csv")
    cols = read_numeric_csv(imu_path, EUROC_IMU_COLUMNS)
    if cols["t_ns"].size == 0:
        raise DatasetError(imu_path, "no IMU samples")
    require_increasing(imu_path, cols["t_ns"], cols[LINE_KEY])
    imu = ImuStream(
        t_ns=cols["t_ns"],
        omega=np.column_stack([cols["wx"], cols["wy"], cols["wz"]]),
        acc=np.column_stack([cols["ax"], cols["ay"], cols["az"]]),
    )

    cam_path = os.path.join(mav, "cam0", "sensor.yaml")
    cam = read_sensor_yaml(cam_path)
    try:
        fu, fv, cu, cv = (float(x) for x in cam["intrinsics"])
        width, height = (int(x) for x in cam["resolution"])
    except (KeyError, TypeError, ValueError):
        raise DatasetError(cam_path, "intrinsics [fu, fv, cu, cv] and resolution [w, h] are required") from None
    if str(cam.get("distortion_model", "")).strip() not in ("", "none"):
        logger.info("%s: distortion model %s ignored, features are expected undistorted",
                    cam_path, cam.get("distortion_model"))
    r_ic = _t_bs_rotation(cam, cam_path)  # body (IMU) from camera
    r_ci = r_ic.T

    if noise is None:
        imu_yaml = os.path.join(mav, "imu0", "sensor.yaml")
        if os.path.exists(imu_yaml):
            s = read_sensor_yaml(imu_yaml)
            try:
                noise = ImuNoiseModel(float(s["gyroscope_noise_density"]), float(s["gyroscope_random_walk"]),
                                      1.0 / float(s["rate_hz"]))
            except (KeyError, TypeError, ValueError):
                raise DatasetError(imu_yaml, "gyroscope_noise_density, gyroscope_random_walk and rate_hz "
                                             "are required") from None
        else:
            defaults = euroc_defaults().get("imu", {})
            dt = float(np.median(np.diff(imu.t_ns))) * 1e-9 if len(imu) > 1 else 1.0 / float(defaults["rate_hz"])
            noise = ImuNoiseModel(float(defaults["sigma_g"]), float(defaults["sigma_bg"]), dt)

    frames = read_features(_features_path(folder))

    truth = None
    gt_path = os.path.join(mav, "state_groundtruth_estimate0", "data.csv")
    if os.path.exists(gt_path):
        g = read_numeric_csv(gt_path, EUROC_GT_COLUMNS)
        truth = GroundTruth(
            t_ns=g["t_ns"],
            positions=np.column_stack([g["px"], g["py"], g["pz"]]),
            rotations=Rotation.from_quat(np.column_stack([g["qx"], g["qy"], g["qz"], g["qw"]])).as_matrix(),
            biases=np.column_stack([g["bgx"], g["bgy"], g["bgz"]]),
            r_ci=r_ci,
        )
    logger.info("ingested EuRoC %s: %d IMU samples, %d frames", folder, len(imu), len(frames))
    return Dataset(imu=imu, frames=frames, intrinsics=CameraIntrinsics(fu, fv, cu, cv, width, height),
                   noise=noise, r_ci_nominal=r_ci, ground_truth=truth,
                   name=os.path.basename(os.path.normpath(folder)))
