"""
File Formats Module

Readers and writers for every artifact seistomo emits:

    JSSM1  grid model (float32, first axis fastest)
    JSWF1  wavefield blocks: header "JSWF1 <nsrc> <nnodes> <f32|f16>", then per
           source either nnodes (re, im) f32 pairs, or one f32 scale (the row's
           largest |re| or |im|) followed by nnodes (re, im) f16 pairs divided by it
    JSER1  eikonal sensitivity records
    JSDT1  frequency-domain and travel-time data (NaN marks inactive receivers)
    CSV    misfit histories and benchmark tables
    PGM    8-bit grayscale snapshots (P5)

All binary payloads are little-endian.
"""

import csv
import logging
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .errors import InvalidArgumentError, ParseError

logger = logging.getLogger(__name__)

MAX_HEADER_BYTES = 512


def _split_header(blob: bytes, magic: str) -> Tuple[List[str], int]:
    """Header tokens and the offset of the first payload byte"""
    end = blob.find(b"\n", 0, MAX_HEADER_BYTES)
    if end < 0:
        raise ParseError("Missing header line terminator", min(len(blob), MAX_HEADER_BYTES))
    try:
        tokens = blob[:end].decode("ascii").split()
    except UnicodeDecodeError as e:
        raise ParseError("Header is not ASCII", e.start)
    if not tokens or tokens[0] != magic:
        raise ParseError(f"Expected magic '{magic}'", 0)
    return tokens, end + 1


def _token_offset(blob: bytes, index: int) -> int:
    header = blob[:blob.find(b"\n")].decode("ascii", errors="replace")
    pos = 0
    for i, tok in enumerate(header.split()):
        pos = header.index(tok, pos)
        if i == index:
            return pos
        pos += len(tok)
    return len(header)


def _parse_int(blob: bytes, tokens: List[str], index: int, what: str) -> int:
    try:
        value = int(tokens[index])
    except (IndexError, ValueError):
        raise ParseError(f"Invalid {what}", _token_offset(blob, index))
    if value < 0:
        raise ParseError(f"Negative {what}", _token_offset(blob, index))
    return value


def _parse_float(blob: bytes, tokens: List[str], index: int, what: str) -> float:
    try:
        return float(tokens[index])
    except (IndexError, ValueError):
        raise ParseError(f"Invalid {what}", _token_offset(blob, index))


def _check_payload(blob: bytes, start: int, expected: int) -> None:
    actual = len(blob) - start
    if actual != expected:
        raise ParseError(f"Payload has {actual} bytes, expected {expected}", start + min(actual, expected))


# Models

def encode_model(n: Sequence[int], h: Sequence[float], values: np.ndarray) -> bytes:
    if len(n) not in (2, 3) or len(h) != len(n):
        raise InvalidArgumentError("Models must be 2D or 3D with one spacing per axis")
    values = np.asarray(values)
    flat = values.ravel(order="F") if values.shape == tuple(n) else values.ravel()
    if flat.size != int(np.prod(n)):
        raise InvalidArgumentError("Model values do not match the grid")
    header = " ".join(["JSSM1", str(len(n))] + [str(int(v)) for v in n] + [repr(float(v)) for v in h])
    return header.encode("ascii") + b"\n" + flat.astype("<f4").tobytes()


def decode_model(blob: bytes) -> Tuple[Tuple[int, ...], Tuple[float, ...], np.ndarray]:
    """(n, h, values shaped n) from JSSM1 bytes"""
    tokens, start = _split_header(blob, "JSSM1")
    ndim = _parse_int(blob, tokens, 1, "dimension")
    if ndim not in (2, 3):
        raise ParseError(f"Unsupported dimension {ndim}", _token_offset(blob, 1))
    if len(tokens) != 2 + 2 * ndim:
        raise ParseError(f"Expected {2 + 2 * ndim} header fields, found {len(tokens)}", start - 1)
    n = tuple(_parse_int(blob, tokens, 2 + k, "node count") for k in range(ndim))
    h = tuple(_parse_float(blob, tokens, 2 + ndim + k, "spacing") for k in range(ndim))
    count = int(np.prod(n))
    _check_payload(blob, start, 4 * count)
    values = np.frombuffer(blob, dtype="<f4", count=count, offset=start).astype(np.float64)
    return n, h, values.reshape(n, order="F")


def write_model(path: Path, n: Sequence[int], h: Sequence[float], values: np.ndarray) -> Path:
    path = Path(path)
    path.write_bytes(encode_model(n, h, values))
    return path


def read_model(path: Path) -> Tuple[Tuple[int, ...], Tuple[float, ...], np.ndarray]:
    return decode_model(Path(path).read_bytes())


# Wavefields

def encode_wavefields(fields: np.ndarray, precision: str = "f32") -> bytes:
    """fields: (nsrc, nnodes) complex"""
    fields = np.atleast_2d(np.asarray(fields))
    nsrc, nnodes = fields.shape
    header = f"JSWF1 {nsrc} {nnodes} {precision}\n".encode("ascii")
    if precision == "f32":
        pairs = np.stack([fields.real, fields.imag], axis=-1).astype("<f4")
        return header + pairs.tobytes()
    if precision == "f16":
        chunks = [header]
        for row in fields:
            scale = np.float32(max(np.abs(row.real).max(initial=0.0), np.abs(row.imag).max(initial=0.0)))
            safe = float(scale) if scale > 0 else 1.0
            pairs = np.stack([row.real / safe, row.imag / safe], axis=-1).astype("<f2")
            chunks.append(np.array([scale], dtype="<f4").tobytes())
            chunks.append(pairs.tobytes())
        return b"".join(chunks)
    raise InvalidArgumentError(f"Unknown wavefield precision '{precision}'")


def decode_wavefields(blob: bytes) -> np.ndarray:
    tokens, start = _split_header(blob, "JSWF1")
    if len(tokens) != 4:
        raise ParseError("Expected 4 header fields", start - 1)
    nsrc = _parse_int(blob, tokens, 1, "source count")
    nnodes = _parse_int(blob, tokens, 2, "node count")
    precision = tokens[3]
    if precision == "f32":
        _check_payload(blob, start, nsrc * nnodes * 8)
        pairs = np.frombuffer(blob, dtype="<f4", offset=start).reshape(nsrc, nnodes, 2).astype(np.float64)
        return pairs[..., 0] + 1j * pairs[..., 1]
    if precision == "f16":
        row_bytes = 4 + nnodes * 4
        _check_payload(blob, start, nsrc * row_bytes)
        fields = np.empty((nsrc, nnodes), dtype=np.complex128)
        for s in range(nsrc):
            offset = start + s * row_bytes
            scale = float(np.frombuffer(blob, dtype="<f4", count=1, offset=offset)[0])
            pairs = np.frombuffer(blob, dtype="<f2", count=2 * nnodes, offset=offset + 4)
            pairs = pairs.reshape(nnodes, 2).astype(np.float64) * scale
            fields[s] = pairs[:, 0] + 1j * pairs[:, 1]
        return fields
    raise ParseError(f"Unknown precision '{precision}'", _token_offset(blob, 3))


# Sensitivity records

def encode_record(fm_order: np.ndarray, direction_codes: np.ndarray, tau1: np.ndarray) -> bytes:
    n = len(fm_order)
    header = f"JSER1 {n}\n".encode("ascii")
    return (header + np.asarray(fm_order, dtype="<u4").tobytes()
            + np.asarray(direction_codes, dtype=np.uint8).tobytes()
            + np.asarray(tau1, dtype="<f4").tobytes())


def decode_record(blob: bytes) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    tokens, start = _split_header(blob, "JSER1")
    n = _parse_int(blob, tokens, 1, "node count")
    _check_payload(blob, start, 9 * n)
    order = np.frombuffer(blob, dtype="<u4", count=n, offset=start).copy()
    codes = np.frombuffer(blob, dtype=np.uint8, count=n, offset=start + 4 * n).copy()
    tau1 = np.frombuffer(blob, dtype="<f4", count=n, offset=start + 5 * n).copy()
    return order, codes, tau1


# Observed data

def encode_data(fwi: np.ndarray, travel_times: np.ndarray) -> bytes:
    """fwi: (nsrc, nfreq, nrec) complex, travel_times: (nsrc, nrec); NaN marks inactive receivers"""
    fwi = np.asarray(fwi)
    travel_times = np.asarray(travel_times)
    if fwi.ndim != 3 or travel_times.shape != (fwi.shape[0], fwi.shape[2]):
        raise InvalidArgumentError("Data arrays must be (nsrc, nfreq, nrec) and (nsrc, nrec)")
    nsrc, nfreq, nrec = fwi.shape
    header = f"JSDT1 {nsrc} {nfreq} {nrec}\n".encode("ascii")
    pairs = np.stack([fwi.real, fwi.imag], axis=-1).astype("<f4")
    return header + pairs.tobytes() + travel_times.astype("<f4").tobytes()


def decode_data(blob: bytes) -> Tuple[np.ndarray, np.ndarray]:
    tokens, start = _split_header(blob, "JSDT1")
    if len(tokens) != 4:
        raise ParseError("Expected 4 header fields", start - 1)
    nsrc = _parse_int(blob, tokens, 1, "source count")
    nfreq = _parse_int(blob, tokens, 2, "frequency count")
    nrec = _parse_int(blob, tokens, 3, "receiver count")
    n_pairs = nsrc * nfreq * nrec
    _check_payload(blob, start, 8 * n_pairs + 4 * nsrc * nrec)
    pairs = np.frombuffer(blob, dtype="<f4", count=2 * n_pairs, offset=start).astype(np.float64)
    pairs = pairs.reshape(nsrc, nfreq, nrec, 2)
    fwi = pairs[..., 0] + 1j * pairs[..., 1]
    tt = np.frombuffer(blob, dtype="<f4", count=nsrc * nrec, offset=start + 8 * n_pairs)
    return fwi, tt.astype(np.float64).reshape(nsrc, nrec)


def write_data(path: Path, fwi: np.ndarray, travel_times: np.ndarray) -> Path:
    path = Path(path)
    path.write_bytes(encode_data(fwi, travel_times))
    return path


def read_data(path: Path) -> Tuple[np.ndarray, np.ndarray]:
    return decode_data(Path(path).read_bytes())


# Tables

def write_csv(path: Path, columns: Sequence[str], rows: Iterable[Dict[str, object]]) -> Path:
    path = Path(path)
    with path.open("w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=list(columns))
        writer.writeheader()
        for row in rows:
            writer.writerow({c: row.get(c, "") for c in columns})
    return path


def read_csv(path: Path) -> List[Dict[str, str]]:
    with Path(path).open(newline="") as f:
        return list(csv.DictReader(f))


# Images

def to_grayscale(values: np.ndarray) -> np.ndarray:
    """Linear map of [min, max] to [0, 255]; a constant field renders as 128"""
    values = np.asarray(values, dtype=np.float64)
    lo, hi = float(values.min()), float(values.max())
    if hi == lo:
        return np.full(values.shape, 128, dtype=np.uint8)
    return np.rint((values - lo) / (hi - lo) * 255.0).astype(np.uint8)


def encode_pgm(image: np.ndarray) -> bytes:
    """image: (height, width) uint8"""
    image = np.asarray(image, dtype=np.uint8)
    height, width = image.shape
    return f"P5\n{width} {height}\n255\n".encode("ascii") + image.tobytes()


def decode_pgm(blob: bytes) -> np.ndarray:
    tokens: List[str] = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(blob) and blob[pos:pos + 1].isspace():
            pos += 1
        end = pos
        while end < len(blob) and not blob[end:end + 1].isspace():
            end += 1
        if end == pos:
            raise ParseError("Truncated PGM header", pos)
        tokens.append(blob[pos:end].decode("ascii", errors="replace"))
        pos = end
    if tokens[0] != "P5":
        raise ParseError("Expected magic 'P5'", 0)
    try:
        width, height, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    except ValueError:
        raise ParseError("Invalid PGM dimensions", 3)
    if maxval != 255:
        raise ParseError(f"Unsupported maxval {maxval}", pos)
    start = pos + 1
    _check_payload(blob, start, width * height)
    return np.frombuffer(blob, dtype=np.uint8, count=width * height, offset=start).reshape(height, width).copy()


def write_pgm(path: Path, image: np.ndarray) -> Path:
    path = Path(path)
    path.write_bytes(encode_pgm(image))
    return path


def read_pgm(path: Path) -> np.ndarray:
    return decode_pgm(Path(path).read_bytes())


def field_image(values: np.ndarray, slice_index: Optional[int] = None) -> np.ndarray:
    """
    Image of a grid field: columns run along the first axis, rows along the last (depth)

    3D fields are cut at slice_index along the second axis (middle by default).
    """
    values = np.asarray(values)
    if values.ndim == 3:
        index = values.shape[1] // 2 if slice_index is None else slice_index
        if not 0 <= index < values.shape[1]:
            raise InvalidArgumentError(f"Slice index {index} outside [0, {values.shape[1]})")
        values = values[:, index, :]
    elif values.ndim != 2:
        raise InvalidArgumentError("Only 2D fields or slices can be rendered")
    return to_grayscale(values.T)
