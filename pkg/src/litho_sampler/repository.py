import json
import os
import shutil
import tempfile
from contextlib import contextmanager
from pathlib import Path
from typing import Callable, Iterator, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from pydantic import BaseModel, ValidationError

from .config import logger
from .errors import ArtifactIOError, ConfigError, DomainError
from .features import FeatureTensor
from .layout import precut_pairs
from .learner import MlpModel
from .models import Clip, DefectKind, DefectMarker, Label, Layout, Rect
from .schemas import (
    ClipItem,
    ClipsFile,
    DefectItem,
    FeatureSidecar,
    LayoutFile,
    PrecutClipsFile,
    SelectionRecord,
)

FEATURE_MAGIC = b"FTNS"
MODEL_MAGIC = b"MLP1"


def _io_error(path: Path, operation: str, err: Exception) -> ArtifactIOError:
    return ArtifactIOError(f"{path}: {err}", "repository", operation)


def atomic_write(path: Path, write: Callable[[Path], None]) -> Path:
    """Write through a temp sibling and rename into place only on success."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    os.close(fd)
    try:
        write(Path(tmp))
        os.replace(tmp, path)
    except OSError as e:
        raise _io_error(path, "atomic_write", e) from e
    finally:
        if os.path.exists(tmp):
            os.remove(tmp)
    return path


def read_json_model(path: Path, model: type, operation: str) -> BaseModel:
    path = Path(path)
    try:
        raw = path.read_text(encoding="utf-8")
    except OSError as e:
        raise _io_error(path, operation, e) from e
    try:
        return model.model_validate_json(raw)
    except ValidationError as e:
        raise ConfigError(f"{path}: {e.errors()[0]['msg']} at {e.errors()[0]['loc']}", "repository", operation) from e


def _write_text(path: Path, text: str) -> Path:
    return atomic_write(path, lambda tmp: tmp.write_text(text, encoding="utf-8"))


def _write_bytes(path: Path, payload: bytes) -> Path:
    return atomic_write(path, lambda tmp: tmp.write_bytes(payload))


# --- Layout and clip files ---

def layout_to_file(layout: Layout) -> LayoutFile:
    return LayoutFile(
        bbox=layout.bbox.as_list(),
        rects=[r.as_list() for r in layout.rects],
        defects=[DefectItem(x=d.x, y=d.y, kind=d.kind.value) for d in layout.defects],
    )


def layout_from_file(data: LayoutFile) -> Layout:
    try:
        return Layout(
            rects=[Rect(*r) for r in data.rects],
            bbox=Rect(*data.bbox),
            defects=[DefectMarker(d.x, d.y, DefectKind(d.kind)) for d in data.defects],
        )
    except DomainError as e:
        raise ConfigError(e.message, "repository", "read_layout", ids=e.ids) from e


def encode_features(ids: Sequence[int], tensors: Sequence[FeatureTensor]) -> Tuple[bytes, FeatureSidecar]:
    """FTNS header (u32 count, grid_h, grid_w, C) then f32 tensors in clip-id order."""
    order = sorted(range(len(ids)), key=lambda i: ids[i])
    if tensors:
        shape = tensors[0].data.shape
        if any(t.data.shape != shape for t in tensors):
            raise ConfigError("feature tensors differ in shape", "repository", "write_features")
    else:
        shape = (0, 0, 0)
    header = FEATURE_MAGIC + np.array([len(ids), *shape], dtype="<u4").tobytes()
    chunk = int(np.prod(shape)) * 4
    offsets = {str(int(ids[i])): len(header) + pos * chunk for pos, i in enumerate(order)}
    payload = b"".join(tensors[i].data.astype("<f4").tobytes() for i in order)
    sidecar = FeatureSidecar(count=len(ids), grid_h=shape[0], grid_w=shape[1], channels=shape[2], offsets=offsets)
    return header + payload, sidecar


def decode_features(blob: bytes, sidecar: Optional[FeatureSidecar] = None) -> Tuple[List[int], List[FeatureTensor]]:
    if blob[:4] != FEATURE_MAGIC:
        raise ConfigError("not a feature store (bad magic)", "repository", "read_features")
    count, gh, gw, c = (int(v) for v in np.frombuffer(blob, dtype="<u4", count=4, offset=4))
    data = np.frombuffer(blob, dtype="<f4", count=count * gh * gw * c, offset=20)
    tensors = [FeatureTensor(t.astype(np.float64)) for t in data.reshape(count, gh, gw, c)]
    if sidecar is not None:
        by_offset = sorted(sidecar.offsets.items(), key=lambda kv: kv[1])
        ids = [int(k) for k, _ in by_offset]
    else:
        ids = list(range(count))
    return ids, tensors


def encode_model(m: MlpModel) -> bytes:
    """MLP1, u32 layer count, u32 dims, then f32 W (row-major in x out) and b per layer."""
    parts = [MODEL_MAGIC, np.array([len(m.layer_dims), *m.layer_dims], dtype="<u4").tobytes()]
    for W, b in zip(m.weights, m.biases):
        parts.append(np.asarray(W, dtype="<f4").tobytes())
        parts.append(np.asarray(b, dtype="<f4").tobytes())
    return b"".join(parts)


def decode_model(blob: bytes) -> MlpModel:
    if blob[:4] != MODEL_MAGIC:
        raise ConfigError("not a model checkpoint (bad magic)", "repository", "read_model")
    n = int(np.frombuffer(blob, dtype="<u4", count=1, offset=4)[0])
    dims = [int(d) for d in np.frombuffer(blob, dtype="<u4", count=n, offset=8)]
    offset = 8 + 4 * n
    m = MlpModel.zeros(dims)
    for layer, (a, b) in enumerate(zip(dims[:-1], dims[1:])):
        m.weights[layer] = np.frombuffer(blob, dtype="<f4", count=a * b, offset=offset).reshape(a, b).astype(np.float64)
        offset += 4 * a * b
        m.biases[layer] = np.frombuffer(blob, dtype="<f4", count=b, offset=offset).astype(np.float64)
        offset += 4 * b
    if offset != len(blob):
        raise ConfigError(f"checkpoint has {len(blob) - offset} trailing bytes", "repository", "read_model")
    return m


class ArtifactRepository:
    """
    Data Access Layer (Repository Pattern) for run artifacts.
    Every file format lives here; callers never touch paths or bytes.
    """

    def __init__(self, out_dir: Path):
        self.out_dir = Path(out_dir)

    def path(self, name: str) -> Path:
        return self.out_dir / name

    @classmethod
    @contextmanager
    def staged(cls, out_dir: Path) -> Iterator["ArtifactRepository"]:
        """Repository over a hidden sibling of out_dir; its files move into out_dir only if the block succeeds."""
        out_dir = Path(out_dir)
        try:
            out_dir.parent.mkdir(parents=True, exist_ok=True)
            staging = Path(tempfile.mkdtemp(prefix=f".{out_dir.name}.", suffix=".staging", dir=out_dir.parent))
        except OSError as e:
            raise _io_error(out_dir, "staged", e) from e
        try:
            yield cls(staging)
            out_dir.mkdir(parents=True, exist_ok=True)
            for item in sorted(staging.iterdir()):
                os.replace(item, out_dir / item.name)
        except OSError as e:
            raise _io_error(out_dir, "staged", e) from e
        finally:
            shutil.rmtree(staging, ignore_errors=True)
        logger.info(f"✅ Artifacts committed to {out_dir}")

    # Layouts and clips
    def write_layout(self, layout: Layout, name: str = "layout.json") -> Path:
        return _write_text(self.path(name), layout_to_file(layout).model_dump_json(indent=1))

    @staticmethod
    def read_layout(path: Path) -> Layout:
        return layout_from_file(read_json_model(path, LayoutFile, "read_layout"))

    def write_clips(self, clips: Sequence[Clip], clip_nm: int, stride_nm: int, core_nm: int,
                    name: str = "clips.json") -> Path:
        data = ClipsFile(
            clip_nm=clip_nm, stride_nm=stride_nm, core_nm=core_nm,
            clips=[ClipItem(id=c.id, window=c.window.as_list(), core=c.core.as_list(),
                            label=c.label.value if c.label else None) for c in clips],
        )
        return _write_text(self.path(name), data.model_dump_json())

    @staticmethod
    def read_clips(path: Path) -> Tuple[ClipsFile, List[Clip]]:
        data = read_json_model(path, ClipsFile, "read_clips")
        try:
            clips = [Clip(c.id, Rect(*c.window), Rect(*c.core), Label(c.label) if c.label else None)
                     for c in data.clips]
        except DomainError as e:
            raise ConfigError(e.message, "repository", "read_clips", ids=e.ids) from e
        return data, clips

    @staticmethod
    def read_precut(path: Path) -> Tuple[PrecutClipsFile, List[Tuple[Layout, Clip]]]:
        data = read_json_model(path, PrecutClipsFile, "read_precut")
        try:
            pairs = precut_pairs(data.clip_nm, [(c.id, c.label, c.rects) for c in data.clips], data.core_nm)
        except DomainError as e:
            raise ConfigError(e.message, "repository", "read_precut", ids=e.ids) from e
        return data, pairs

    # Feature store
    def write_features(self, ids: Sequence[int], tensors: Sequence[FeatureTensor],
                       name: str = "features.bin") -> Path:
        blob, sidecar = encode_features(ids, tensors)
        path = _write_bytes(self.path(name), blob)
        _write_text(path.with_suffix(".json"), sidecar.model_dump_json())
        logger.info(f"Wrote {len(ids)} feature tensors to {path}")
        return path

    @staticmethod
    def read_features(path: Path) -> Tuple[List[int], List[FeatureTensor]]:
        path = Path(path)
        try:
            blob = path.read_bytes()
        except OSError as e:
            raise _io_error(path, "read_features", e) from e
        sidecar_path = path.with_suffix(".json")
        sidecar = read_json_model(sidecar_path, FeatureSidecar, "read_features") if sidecar_path.exists() else None
        return decode_features(blob, sidecar)

    # Model checkpoint
    def write_model(self, m: MlpModel, name: str = "model.bin") -> Path:
        return _write_bytes(self.path(name), encode_model(m))

    @staticmethod
    def read_model(path: Path) -> MlpModel:
        try:
            return decode_model(Path(path).read_bytes())
        except OSError as e:
            raise _io_error(Path(path), "read_model", e) from e

    # Selection log
    @contextmanager
    def selection_log(self, name: str = "selection.jsonl") -> Iterator[Callable[[SelectionRecord], None]]:
        """Append records to a .part file; it becomes `name` only if the block succeeds."""
        final = self.path(name)
        part = final.with_name(final.name + ".part")
        final.parent.mkdir(parents=True, exist_ok=True)
        try:
            fh = open(part, "w", encoding="utf-8")
        except OSError as e:
            raise _io_error(part, "selection_log", e) from e

        def append(record: SelectionRecord) -> None:
            fh.write(record.model_dump_json() + "\n")
            fh.flush()

        try:
            yield append
        except BaseException:
            fh.close()
            part.unlink(missing_ok=True)
            raise
        fh.close()
        os.replace(part, final)

    @staticmethod
    def read_selection_log(path: Path) -> List[SelectionRecord]:
        try:
            lines = Path(path).read_text(encoding="utf-8").splitlines()
        except OSError as e:
            raise _io_error(Path(path), "read_selection_log", e) from e
        return [SelectionRecord.model_validate_json(line) for line in lines if line.strip()]

    def write_json(self, payload: dict, name: str) -> Path:
        return _write_text(self.path(name), json.dumps(payload, indent=2, sort_keys=True))

    # Tables
    def write_csv(self, df: pd.DataFrame, name: str) -> Path:
        path = atomic_write(self.path(name), lambda tmp: df.to_csv(tmp, index=False, lineterminator="\n"))
        logger.info(f"✅ Saved {len(df)} rows to {path}")
        return path

    @staticmethod
    def read_csv(path: Path) -> pd.DataFrame:
        try:
            return pd.read_csv(path)
        except OSError as e:
            raise _io_error(Path(path), "read_csv", e) from e
