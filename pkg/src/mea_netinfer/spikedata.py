"""
Binned binary spike trains with electrode geometry, and the MEASPIKES
text format used to store them.

A train is a ``(n_bins, n_electrodes)`` uint8 matrix: entry ``[t, n]`` is 1
when electrode ``n`` fired in bin ``t``. An electrode fires at most once per
bin, so several detected events in one bin collapse to a single 1.

MEASPIKES version 1::

    MEASPIKES 1
    <n_electrodes> <n_bins> <bin_ms>
    GEOM <electrode_index> <row> <col> <id>      (one line per electrode)
    <bin_index> <electrode_index>                (one line per spike)

Lines starting with ``#`` are comments.
"""
import io
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, SpikeFormatError

__all__ = [
    "SpikeTrain",
    "bin_spike_events",
    "default_geometry",
    "read_spike_train",
    "write_spike_train",
    "load_spike_train",
    "save_spike_train",
]

DEFAULT_BIN_MS = 1.0
FORMAT_MAGIC = "MEASPIKES"
FORMAT_VERSION = 1


def default_geometry(n_electrodes):
    """Row-major grid of the most square ``rows x cols`` factorisation.

    Prime counts give a single row, i.e. electrodes on a line.
    """
    rows = 1
    for r in range(1, int(math.isqrt(n_electrodes)) + 1):
        if n_electrodes % r == 0:
            rows = r
    cols = n_electrodes // rows
    idx = np.arange(n_electrodes)
    return np.column_stack([idx // cols, idx % cols]).astype(float)


@dataclass(frozen=True, eq=False)
class SpikeTrain:
    """Binned binary spike train.

    Attributes
    ----------
    data : ndarray of uint8, shape (n_bins, n_electrodes)
        Read-only firing matrix.
    bin_ms : float
        Bin width in milliseconds.
    geometry : ndarray, shape (n_electrodes, 2)
        Grid coordinates ``(row, col)`` of each electrode.
    ids : tuple of str
        Electrode labels.
    geometry_synthesized : bool
        True when no geometry was supplied and :func:`default_geometry`
        filled it in.
    """

    data: np.ndarray
    bin_ms: float = DEFAULT_BIN_MS
    geometry: np.ndarray = None
    ids: tuple = None
    geometry_synthesized: bool = field(default=False)

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 2:
            raise DataError(f"spike data must be 2-D (bins x electrodes), got shape {data.shape}")
        if data.shape[0] < 1:
            raise DataError("a spike train needs at least one bin")
        if data.dtype != np.uint8:
            if not np.all((data == 0) | (data == 1)):
                raise DataError("spike data entries must be 0 or 1")
            data = data.astype(np.uint8)
        elif data.size and data.max() > 1:
            raise DataError("spike data entries must be 0 or 1")
        data = np.array(data, dtype=np.uint8, copy=True)
        data.flags.writeable = False
        object.__setattr__(self, "data", data)

        if not (self.bin_ms > 0 and math.isfinite(self.bin_ms)):
            raise DataError(f"bin_ms must be positive, got {self.bin_ms}")
        object.__setattr__(self, "bin_ms", float(self.bin_ms))

        n = data.shape[1]
        if self.geometry is None:
            geom = default_geometry(n)
            object.__setattr__(self, "geometry_synthesized", True)
        else:
            geom = np.array(self.geometry, dtype=float, copy=True).reshape(-1, 2)
        if geom.shape != (n, 2):
            raise DataError(f"geometry must have {n} entries, got {geom.shape[0]}")
        if len({tuple(g) for g in geom}) != n:
            raise DataError("geometry entries must be distinct")
        geom.flags.writeable = False
        object.__setattr__(self, "geometry", geom)

        ids = tuple(str(i) for i in range(n)) if self.ids is None else tuple(str(i) for i in self.ids)
        if len(ids) != n:
            raise DataError(f"expected {n} electrode ids, got {len(ids)}")
        if any((not i) or any(ch.isspace() for ch in i) for i in ids):
            raise DataError("electrode ids must be non-empty and contain no whitespace")
        object.__setattr__(self, "ids", ids)

    @property
    def n_bins(self):
        return self.data.shape[0]

    @property
    def n_electrodes(self):
        return self.data.shape[1]

    @property
    def duration_ms(self):
        return self.n_bins * self.bin_ms

    def n_spikes(self):
        return int(self.data.sum(dtype=np.int64))

    def events(self):
        """Spike events as ``(time_ms, electrode)`` pairs at bin starts."""
        t, n = np.nonzero(self.data)
        return [(float(ti) * self.bin_ms, int(ni)) for ti, ni in zip(t, n)]

    def subset(self, electrodes):
        """Restrict the train to the given electrode indices (in that order)."""
        electrodes = np.asarray(electrodes, dtype=int)
        return SpikeTrain(
            self.data[:, electrodes],
            bin_ms=self.bin_ms,
            geometry=self.geometry[electrodes],
            ids=tuple(self.ids[i] for i in electrodes),
        )

    def __eq__(self, other):
        if not isinstance(other, SpikeTrain):
            return NotImplemented
        return (
            self.bin_ms == other.bin_ms
            and self.ids == other.ids
            and self.data.shape == other.data.shape
            and np.array_equal(self.geometry, other.geometry)
            and np.array_equal(self.data, other.data)
        )

    __hash__ = None


def bin_spike_events(events, n_electrodes, bin_ms=DEFAULT_BIN_MS, duration_ms=None,
                     geometry=None, ids=None, return_collapsed=False):
    """Bin ``(time_ms, electrode_index)`` events into a binary train.

    An event at time ``t`` lands in bin ``floor(t / bin_ms)``; the train has
    ``ceil(duration_ms / bin_ms)`` bins. Repeated events of one electrode in
    one bin collapse to a single spike.

    Parameters
    ----------
    events : sequence of (float, int)
    n_electrodes : int
    bin_ms : float
    duration_ms : float, optional
        Recording length; defaults to just past the last event.
    return_collapsed : bool
        Also return how many events were absorbed by same-bin collisions.

    Raises
    ------
    DataError
        If an event has a negative time, lies beyond ``duration_ms`` or names
        an electrode outside ``[0, n_electrodes)``. The message gives the
        offending event's index.
    """
    if bin_ms <= 0:
        raise DataError(f"bin_ms must be positive, got {bin_ms}")
    ev = np.asarray(events, dtype=float).reshape(-1, 2)
    times, elec = ev[:, 0], ev[:, 1]
    bad = np.flatnonzero((times < 0) | ~np.isfinite(times))
    if bad.size:
        raise DataError(f"event {bad[0]}: negative or non-finite time {times[bad[0]]}")
    bad = np.flatnonzero((elec < 0) | (elec >= n_electrodes) | (elec != np.floor(elec)))
    if bad.size:
        raise DataError(f"event {bad[0]}: electrode index {elec[bad[0]]} outside [0, {n_electrodes})")
    if duration_ms is None:
        duration_ms = (np.floor(times.max() / bin_ms) + 1) * bin_ms if len(times) else bin_ms
    bad = np.flatnonzero(times >= duration_ms)
    if bad.size:
        raise DataError(f"event {bad[0]}: time {times[bad[0]]} not before duration {duration_ms}")

    n_bins = max(1, int(math.ceil(duration_ms / bin_ms)))
    bins = np.floor(times / bin_ms).astype(np.int64)
    data = np.zeros((n_bins, n_electrodes), dtype=np.uint8)
    data[bins, elec.astype(np.int64)] = 1
    train = SpikeTrain(data, bin_ms=bin_ms, geometry=geometry, ids=ids)
    if return_collapsed:
        return train, len(ev) - train.n_spikes()
    return train


def _fmt_coord(x):
    return str(int(x)) if float(x).is_integer() else repr(float(x))


def write_spike_train(train, sink):
    """Serialise ``train`` to a MEASPIKES stream (binary or text) or path."""
    lines = [f"{FORMAT_MAGIC} {FORMAT_VERSION}",
             f"{train.n_electrodes} {train.n_bins} {train.bin_ms!r}"]
    for i, ((r, c), name) in enumerate(zip(train.geometry, train.ids)):
        lines.append(f"GEOM {i} {_fmt_coord(r)} {_fmt_coord(c)} {name}")
    header = "\n".join(lines) + "\n"
    t, n = np.nonzero(train.data)  # row-major: sorted by bin, then electrode
    if t.size:
        body = "\n".join(map("{} {}".format, t.tolist(), n.tolist())) + "\n"
    else:
        body = ""
    text = header + body
    if isinstance(sink, (str, os.PathLike)):
        with open(sink, "wb") as fh:
            fh.write(text.encode("ascii"))
    elif isinstance(sink, io.TextIOBase):
        sink.write(text)
    else:
        sink.write(text.encode("ascii"))


def _parse_coord(tok, lineno):
    try:
        v = float(tok)
    except ValueError:
        raise SpikeFormatError(f"bad coordinate {tok!r}", lineno) from None
    if not math.isfinite(v) or v < 0:
        raise SpikeFormatError(f"coordinate {tok!r} out of range", lineno)
    return v


def read_spike_train(source):
    """Parse a MEASPIKES stream (binary or text file object, or a path).

    Raises
    ------
    SpikeFormatError
        With the offending line number, for a malformed header, a bad or
        duplicate GEOM entry, or a spike outside the declared ranges.
    """
    if isinstance(source, (str, os.PathLike)):
        with open(source, "rb") as fh:
            raw = fh.read()
    else:
        raw = source.read()
    text = raw.decode("ascii") if isinstance(raw, bytes) else raw
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()

    # meaningful lines with their 1-based line numbers
    it = ((i + 1, ln) for i, ln in enumerate(lines) if ln.strip() and not ln.lstrip().startswith("#"))

    def next_line(what):
        try:
            return next(it)
        except StopIteration:
            raise SpikeFormatError(f"unexpected end of file, expected {what}", len(lines)) from None

    lineno, ln = next_line("header")
    tok = ln.split()
    if len(tok) != 2 or tok[0] != FORMAT_MAGIC:
        raise SpikeFormatError(f"expected '{FORMAT_MAGIC} {FORMAT_VERSION}'", lineno)
    if tok[1] != str(FORMAT_VERSION):
        raise SpikeFormatError(f"unsupported version {tok[1]}", lineno)

    lineno, ln = next_line("dimensions line")
    tok = ln.split()
    try:
        n_el, n_bins, bin_ms = int(tok[0]), int(tok[1]), float(tok[2])
        if len(tok) != 3:
            raise ValueError
    except (ValueError, IndexError):
        raise SpikeFormatError("expected '<n_electrodes> <n_bins> <bin_ms>'", lineno) from None
    if n_el < 1 or n_bins < 1 or not (bin_ms > 0 and math.isfinite(bin_ms)):
        raise SpikeFormatError("dimensions out of range", lineno)

    geometry = np.full((n_el, 2), np.nan)
    ids = [None] * n_el
    seen = {}
    for _ in range(n_el):
        lineno, ln = next_line("GEOM line")
        tok = ln.split()
        if len(tok) != 5 or tok[0] != "GEOM":
            raise SpikeFormatError("expected 'GEOM <index> <row> <col> <id>'", lineno)
        try:
            idx = int(tok[1])
        except ValueError:
            raise SpikeFormatError(f"bad electrode index {tok[1]!r}", lineno) from None
        if not 0 <= idx < n_el:
            raise SpikeFormatError(f"electrode index {idx} out of range", lineno)
        if ids[idx] is not None:
            raise SpikeFormatError(f"duplicate GEOM entry for electrode {idx}", lineno)
        rc = (_parse_coord(tok[2], lineno), _parse_coord(tok[3], lineno))
        if rc in seen:
            raise SpikeFormatError(f"duplicate coordinate {rc} (electrodes {seen[rc]} and {idx})", lineno)
        seen[rc] = idx
        geometry[idx] = rc
        ids[idx] = tok[4]

    rest = list(it)
    data = np.zeros((n_bins, n_el), dtype=np.uint8)
    if rest:
        linenos = np.fromiter((r[0] for r in rest), dtype=np.int64, count=len(rest))
        try:
            pairs = np.array([r[1].split() for r in rest], dtype=np.int64)
            if pairs.ndim != 2 or pairs.shape[1] != 2:
                raise ValueError
        except ValueError:
            for lno, ln in rest:
                tok = ln.split()
                if len(tok) != 2 or not all(_is_int(x) for x in tok):
                    raise SpikeFormatError("expected '<bin_index> <electrode_index>'", lno) from None
            raise
        bad = np.flatnonzero((pairs[:, 0] < 0) | (pairs[:, 0] >= n_bins))
        if bad.size:
            raise SpikeFormatError(f"bin index {pairs[bad[0], 0]} out of range", int(linenos[bad[0]]))
        bad = np.flatnonzero((pairs[:, 1] < 0) | (pairs[:, 1] >= n_el))
        if bad.size:
            raise SpikeFormatError(f"electrode index {pairs[bad[0], 1]} out of range", int(linenos[bad[0]]))
        data[pairs[:, 0], pairs[:, 1]] = 1

    return SpikeTrain(data, bin_ms=bin_ms, geometry=geometry, ids=tuple(ids))


def _is_int(s):
    try:
        int(s)
    except ValueError:
        return False
    return True


def load_spike_train(path):
    return read_spike_train(path)


def save_spike_train(train, path):
    write_spike_train(train, path)
