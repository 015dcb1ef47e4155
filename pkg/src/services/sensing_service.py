"""Sensing Service"""

import math
import re
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
import structlog

from src.models.sensing import (
    CoordFingerprintDatabase,
    FingerprintDatabase,
    MagneticSignature,
    ObservationFrame,
    Vector3,
)
from src.utils.config import settings
from src.utils.errors import FingerprintParseError

logger = structlog.get_logger()

PathLike = Union[str, Path]


def decompose_mf(mf: Sequence[float], gravity: Sequence[float]) -> MagneticSignature:
    """
    Split a phone-frame magnetometer reading into vertical and horizontal parts

    mf_v is the signed projection onto the unit gravity axis; mf_h is the norm
    of what remains. Both are invariant to rotating mf and gravity together.
    """
    g = np.asarray(gravity, dtype=float)
    norm = float(np.linalg.norm(g))
    if norm <= 0:
        raise ValueError("undefined vertical axis")
    g_hat = g / norm
    m = np.asarray(mf, dtype=float)
    mf_v = float(m @ g_hat)
    mf_h = float(np.linalg.norm(m - mf_v * g_hat))
    return MagneticSignature(mf_v=mf_v, mf_h=mf_h)


def frame_to_features(
    frame: ObservationFrame,
    ap_list: Sequence[str],
    missing_fill: Optional[float] = None,
    include_mf: bool = True,
) -> np.ndarray:
    """[rssi(ap_1), ..., rssi(ap_k), mf_v, mf_h]; unheard APs get missing_fill"""
    if not ap_list:
        raise ValueError("ap_list must not be empty")
    fill = settings.MISSING_FILL_DBM if missing_fill is None else missing_fill
    values = [frame.rssi.get(ap, fill) for ap in ap_list]
    if include_mf:
        if frame.mf is None:
            values += [0.0, 0.0]
        else:
            sig = decompose_mf(frame.mf, frame.gravity)
            values += [sig.mf_v, sig.mf_h]
    return np.asarray(values, dtype=float)


def frames_to_matrix(
    frames: Sequence[ObservationFrame],
    ap_list: Sequence[str],
    missing_fill: Optional[float] = None,
    include_mf: bool = True,
) -> np.ndarray:
    width = len(ap_list) + (2 if include_mf else 0)
    if not frames:
        return np.empty((0, width))
    return np.vstack([frame_to_features(f, ap_list, missing_fill, include_mf) for f in frames])


def assemble_frames(
    rssi_readings: Sequence[Tuple[float, str, float]],
    mf_readings: Sequence[Tuple[float, Vector3, Vector3]] = (),
    window_s: Optional[float] = None,
) -> List[ObservationFrame]:
    """
    Group raw sensor readings into one frame per collection window

    rssi_readings are (t, an_id, dBm); mf_readings are (t, mf, gravity).
    Window k covers [k*w, (k+1)*w) with w = 1 / WIFI_RATE_HZ by default.
    Within a window the latest reading per AP wins (no averaging), and so
    does the latest magnetometer sample. Windows without any reading are
    skipped; frame timestamps are window starts.
    """
    window = 1.0 / settings.WIFI_RATE_HZ if window_s is None else window_s
    if window <= 0:
        raise ValueError("window must be positive")

    rssi: dict = {}
    for t, an_id, dbm in sorted(rssi_readings, key=lambda r: r[0]):
        rssi.setdefault(int(math.floor(t / window)), {})[an_id] = dbm
    magnetic: dict = {}
    for t, mf, gravity in sorted(mf_readings, key=lambda r: r[0]):
        magnetic[int(math.floor(t / window))] = (mf, gravity)

    frames = []
    for k in sorted(set(rssi) | set(magnetic)):
        mf, gravity = magnetic.get(k, (None, None))
        frames.append(ObservationFrame(timestamp=k * window, rssi=rssi.get(k, {}), mf=mf, gravity=gravity))
    return frames


# --- CSV plumbing -----------------------------------------------------------
# Tables are read as text so each cell can be checked on its own; an empty
# cell is NaN. Data row i of a table sits on file line i + 2.

_TOKENIZER_LINE = re.compile(r"line (\d+)")


def _format(value: float) -> str:
    return repr(float(value))


def _read_table(path: PathLike) -> pd.DataFrame:
    try:
        raw = pd.read_csv(path, header=None, dtype=str, keep_default_na=False, na_values=[""])
    except pd.errors.EmptyDataError:
        raise FingerprintParseError("missing header", 1) from None
    except pd.errors.ParserError as e:
        match = _TOKENIZER_LINE.search(str(e))
        raise FingerprintParseError(f"ragged row ({str(e).strip()})", int(match.group(1)) if match else None) from None

    header = raw.iloc[0]
    if header.isna().any():
        raise FingerprintParseError("empty column name in header", 1)
    names = [str(name) for name in header]
    if len(set(names)) != len(names):
        raise FingerprintParseError("duplicate column names in header", 1)
    table = raw.iloc[1:].reset_index(drop=True)
    table.columns = names
    return table


def _numeric(table: pd.DataFrame, column: str, fill: Optional[float] = None) -> np.ndarray:
    """Float column; empty cells take `fill`, and are an error without one"""
    cells = table[column]
    empty = cells.isna()
    parsed = pd.to_numeric(cells, errors="coerce").to_numpy(dtype=float)
    bad = ~empty.to_numpy() & ~np.isfinite(parsed)
    if fill is None:
        bad |= empty.to_numpy()
    if bad.any():
        row = int(np.flatnonzero(bad)[0])
        problem = "missing value" if empty.iloc[row] else f"non-numeric value {cells.iloc[row]!r}"
        raise FingerprintParseError(f"{problem} in column '{column}'", row + 2)
    values = cells.astype(float)
    return (values if fill is None else values.fillna(fill)).to_numpy()


def _feature_table(features: np.ndarray, ap_list: Sequence[str], missing_fill: float) -> pd.DataFrame:
    """RSSI and MF columns as text; unheard RSSI becomes an empty cell"""
    k = len(ap_list)
    columns = [*ap_list, "mf_v", "mf_h"]
    return pd.DataFrame({
        name: ["" if c < k and v == missing_fill else _format(v) for v in features[:, c]]
        for c, name in enumerate(columns)
    }, columns=columns)


def _write(table: pd.DataFrame, path: PathLike):
    table.to_csv(path, index=False, lineterminator="\n")


def save_fingerprint_db(db: FingerprintDatabase, path: PathLike):
    """Write `room,ap_1..ap_k,mf_v,mf_h`; missing RSSI becomes an empty cell"""
    if not db.include_mf:
        raise ValueError("canonical fingerprint CSV requires MF columns")
    table = _feature_table(db.features, db.ap_list, db.missing_fill)
    table.insert(0, "room", list(db.labels))
    _write(table, path)
    logger.info("fingerprint_db_saved", path=str(path), instances=len(db))


def load_fingerprint_db(
    path: PathLike,
    rooms: Optional[Sequence[str]] = None,
    missing_fill: Optional[float] = None,
) -> FingerprintDatabase:
    """Parse the canonical fingerprint CSV; errors name the offending line"""
    fill = settings.MISSING_FILL_DBM if missing_fill is None else missing_fill
    table = _read_table(path)
    header = list(table.columns)
    if len(header) < 3 or header[0] != "room" or header[-2:] != ["mf_v", "mf_h"]:
        raise FingerprintParseError("header must be room,<ap ids...>,mf_v,mf_h", 1)
    ap_list = header[1:-2]

    labels = table["room"]
    if labels.isna().any():
        raise FingerprintParseError("missing room label", int(np.flatnonzero(labels.isna())[0]) + 2)
    if rooms is not None:
        unknown = ~labels.isin(list(rooms))
        if unknown.any():
            row = int(np.flatnonzero(unknown)[0])
            raise FingerprintParseError(f"unknown room label '{labels.iloc[row]}'", row + 2)

    features = np.column_stack(
        [_numeric(table, ap, fill) for ap in ap_list] + [_numeric(table, "mf_v"), _numeric(table, "mf_h")]
    )
    db = FingerprintDatabase(ap_list=ap_list, features=features, labels=tuple(labels), missing_fill=fill)
    logger.info("fingerprint_db_loaded", path=str(path), instances=len(db), aps=len(ap_list))
    return db


def save_coord_db(db: CoordFingerprintDatabase, path: PathLike):
    """Write `x,y,ap_1..ap_k,mf_v,mf_h`"""
    table = _feature_table(db.features, db.ap_list, db.missing_fill)
    table.insert(0, "y", [_format(v) for v in db.coords[:, 1]])
    table.insert(0, "x", [_format(v) for v in db.coords[:, 0]])
    _write(table, path)


def load_coord_db(path: PathLike, missing_fill: Optional[float] = None) -> CoordFingerprintDatabase:
    fill = settings.MISSING_FILL_DBM if missing_fill is None else missing_fill
    table = _read_table(path)
    header = list(table.columns)
    if len(header) < 4 or header[:2] != ["x", "y"] or header[-2:] != ["mf_v", "mf_h"]:
        raise FingerprintParseError("header must be x,y,<ap ids...>,mf_v,mf_h", 1)
    ap_list = header[2:-2]
    coords = np.column_stack([_numeric(table, "x"), _numeric(table, "y")])
    features = np.column_stack(
        [_numeric(table, ap, fill) for ap in ap_list] + [_numeric(table, "mf_v"), _numeric(table, "mf_h")]
    )
    return CoordFingerprintDatabase(ap_list=ap_list, features=features, coords=coords, missing_fill=fill)


_VECTOR_COLUMNS = (("mfx", "mfy", "mfz"), ("gx", "gy", "gz"))


def save_observations(frames: Sequence[ObservationFrame], ap_list: Sequence[str], path: PathLike):
    """Write `t,ap_1..ap_k,mfx,mfy,mfz,gx,gy,gz` (empty cell = unheard)"""
    rows = []
    for f in frames:
        rssi = [_format(f.rssi[a]) if a in f.rssi else "" for a in ap_list]
        mf = [_format(v) for v in f.mf] if f.mf is not None else ["", "", ""]
        g = [_format(v) for v in f.gravity] if f.gravity is not None else ["", "", ""]
        rows.append([_format(f.timestamp), *rssi, *mf, *g])
    columns = ["t", *ap_list, *_VECTOR_COLUMNS[0], *_VECTOR_COLUMNS[1]]
    _write(pd.DataFrame(rows, columns=columns), path)


def load_observations(path: PathLike) -> Tuple[List[str], List[ObservationFrame]]:
    table = _read_table(path)
    header = list(table.columns)
    tail = [*_VECTOR_COLUMNS[0], *_VECTOR_COLUMNS[1]]
    if len(header) < 7 or header[0] != "t" or header[-6:] != tail:
        raise FingerprintParseError("header must be t,<ap ids...>,mfx,mfy,mfz,gx,gy,gz", 1)
    ap_list = header[1:-6]

    t = _numeric(table, "t")
    rssi = {ap: _numeric(table, ap, math.nan) for ap in ap_list}
    vectors = []
    for names in _VECTOR_COLUMNS:
        present = table[list(names)].notna()
        partial = (present.any(axis=1) & ~present.all(axis=1)).to_numpy()
        if partial.any():
            row = int(np.flatnonzero(partial)[0])
            column = names[int(np.argmin(present.iloc[row].to_numpy()))]
            raise FingerprintParseError(f"missing value in column '{column}'", row + 2)
        vectors.append(np.column_stack([_numeric(table, n, math.nan) for n in names]))

    frames = []
    for i in range(len(table)):
        mf, gravity = (None if np.isnan(v[i]).all() else tuple(float(c) for c in v[i]) for v in vectors)
        try:
            frames.append(ObservationFrame(
                timestamp=float(t[i]),
                rssi={ap: float(values[i]) for ap, values in rssi.items() if not np.isnan(values[i])},
                mf=mf,
                gravity=gravity,
            ))
        except ValueError as e:
            raise FingerprintParseError(str(e), i + 2) from None
    return ap_list, frames
