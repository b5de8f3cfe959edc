"""On-disk formats: binary scans, sequence manifest, IMU csv, TUM trajectories."""
from __future__ import annotations

import csv
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..features import LidarFrame
from ..geometry import Pose, Rotation
from ..imu import ImuSamples

SCAN_MAGIC = b"LSCN"
SCAN_VERSION = 1
_HEADER = struct.Struct("<4sIId")
_POINT = np.dtype([("x", "<f4"), ("y", "<f4"), ("z", "<f4"), ("rel_time", "<f4"), ("ring", "<f4")])

IMU_HEADER = ["t", "ax", "ay", "az", "gx", "gy", "gz"]
MANIFEST_HEADER = ["index", "stamp", "file"]


class FormatError(ValueError):
    pass


def scan_name(index: int) -> str:
    return f"scan_{index:06d}.lscan"


def write_scan(path, frame: LidarFrame) -> None:
    rec = np.empty(len(frame), dtype=_POINT)
    rec["x"], rec["y"], rec["z"] = frame.points.T
    rec["rel_time"] = frame.rel_time
    rec["ring"] = frame.ring
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(SCAN_MAGIC, SCAN_VERSION, len(frame), float(frame.stamp)))
        fh.write(rec.tobytes())


def read_scan(path, period: float = 0.1) -> LidarFrame:
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise FormatError(f"{path}: truncated header")
    magic, version, count, stamp = _HEADER.unpack_from(data)
    if magic != SCAN_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != SCAN_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    body = data[_HEADER.size:]
    if len(body) != count * _POINT.itemsize:
        raise FormatError(f"{path}: expected {count} points, found {len(body) / _POINT.itemsize:g}")
    rec = np.frombuffer(body, dtype=_POINT)
    pts = np.stack([rec["x"], rec["y"], rec["z"]], axis=1).astype(float)
    return LidarFrame(stamp, pts, rec["ring"].astype(np.int64), rec["rel_time"].astype(float), period)


# ---------------------------------------------------------------------------

@dataclass
class ManifestEntry:
    index: int
    stamp: float
    file: str


def write_manifest(path, entries) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(MANIFEST_HEADER)
        for e in entries:
            w.writerow([e.index, repr(float(e.stamp)), e.file])


def read_manifest(path) -> list:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != MANIFEST_HEADER:
        raise FormatError(f"{path}: expected header {','.join(MANIFEST_HEADER)}")
    out = [ManifestEntry(int(r[0]), float(r[1]), r[2]) for r in rows[1:] if r]
    stamps = [e.stamp for e in out]
    if any(b <= a for a, b in zip(stamps, stamps[1:])):
        raise FormatError(f"{path}: scan stamps must be strictly increasing")
    return out


def write_imu(path, samples: ImuSamples) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(IMU_HEADER)
        for t, a, g in zip(samples.t, samples.accel, samples.gyro):
            w.writerow([repr(float(v)) for v in (t, *a, *g)])


def read_imu(path) -> ImuSamples:
    with open(path, newline="") as fh:
        header = fh.readline().strip().split(",")
        if header != IMU_HEADER:
            raise FormatError(f"{path}: expected header {','.join(IMU_HEADER)}")
        data = np.loadtxt(fh, delimiter=",", ndmin=2)
    if data.size == 0:
        return ImuSamples.empty()
    if data.shape[1] != 7:
        raise FormatError(f"{path}: expected 7 columns")
    return ImuSamples(data[:, 0], data[:, 1:4], data[:, 4:7])


# ---------------------------------------------------------------------------
# TUM trajectories: ``stamp tx ty tz qx qy qz qw``

def format_tum_line(stamp: float, pose: Pose) -> str:
    w, x, y, z = pose.rotation.q
    vals = (stamp, *pose.translation, x, y, z, w)
    return " ".join(f"{v:.9g}" for v in vals)


def write_trajectory(path, stamps, poses) -> None:
    stamps = list(stamps)
    if any(b <= a for a, b in zip(stamps, stamps[1:])):
        raise ValueError("trajectory stamps must be strictly increasing")
    with open(path, "w") as fh:
        for s, p in zip(stamps, poses):
            fh.write(format_tum_line(s, p) + "\n")


def read_trajectory(path):
    """Returns ``(stamps (N,), poses list)``."""
    stamps, poses = [], []
    with open(path) as fh:
        for n, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            vals = line.split()
            if len(vals) != 8:
                raise FormatError(f"{path}:{n}: expected 8 fields")
            s, tx, ty, tz, qx, qy, qz, qw = (float(v) for v in vals)
            stamps.append(s)
            poses.append(Pose(Rotation((qw, qx, qy, qz)), (tx, ty, tz)))
    return np.array(stamps), poses


# ---------------------------------------------------------------------------
# datasets

@dataclass
class Dataset:
    root: Path
    entries: list
    imu: ImuSamples
    scan_period: float = 0.1

    @classmethod
    def open(cls, root, scan_period: float = 0.1) -> "Dataset":
        root = Path(root)
        entries = read_manifest(root / "scans.csv")
        imu_path = root / "imu.csv"
        samples = read_imu(imu_path) if imu_path.exists() else ImuSamples.empty()
        return cls(root, entries, samples, scan_period)

    def __len__(self):
        return len(self.entries)

    def scan(self, n: int) -> LidarFrame:
        return read_scan(self.root / self.entries[n].file, self.scan_period)

    def frames(self):
        for n in range(len(self)):
            yield self.scan(n)


def write_dataset(root, frames, imu: ImuSamples, ground_truth=None) -> Path:
    """Write scans, manifest, IMU and (optionally) ``groundtruth.txt``.

    ``ground_truth`` is a ``(stamps, poses)`` pair.
    """
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    entries = []
    for n, frame in enumerate(frames):
        name = scan_name(n)
        write_scan(root / name, frame)
        entries.append(ManifestEntry(n, frame.stamp, name))
    write_manifest(root / "scans.csv", entries)
    write_imu(root / "imu.csv", imu)
    if ground_truth is not None:
        write_trajectory(root / "groundtruth.txt", *ground_truth)
    return root
