"""Atomic, schema-tagged CSV and text output."""
import os
import tempfile

import numpy as np

SCHEMA_VERSION = 1


def fmt(v):
    """17 significant digits for floats, plain text otherwise."""
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.17g}"
    if isinstance(v, (np.integer,)):
        return str(int(v))
    return str(v)


def write_atomic(path, text):
    """Write ``text`` to a temporary file next to ``path`` and rename it into place."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=".tmp-", dir=directory)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_csv(path, name, columns, rows, meta=None):
    """
    ``columns`` is a list of names and ``rows`` an iterable of sequences.

    The first line is ``# schema: rescale/<name> v1``; further ``# key: value``
    lines carry ``meta``.
    """
    lines = [f"# schema: rescale/{name} v{SCHEMA_VERSION}"]
    for k, v in (meta or {}).items():
        lines.append(f"# {k}: {fmt(v)}")
    lines.append(",".join(columns))
    for row in rows:
        lines.append(",".join(fmt(v) for v in row))
    write_atomic(path, "\n".join(lines) + "\n")


def read_csv(path):
    """Return ``(columns, rows_as_float_array, meta)``; comment lines become ``meta``."""
    meta, body = {}, []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if line.startswith("#"):
                k, _, v = line[1:].partition(":")
                meta[k.strip()] = v.strip()
            elif line:
                body.append(line)
    columns = body[0].split(",")
    data = np.array([[float(x) for x in row.split(",")] for row in body[1:]]).reshape(-1, len(columns))
    return columns, data, meta


def masked_lines(path, column="wall_ms"):
    """File lines with one column blanked; used to compare runs byte for byte."""
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().split("\n")
    idx = None
    out = []
    for line in lines:
        if line.startswith("#") or not line:
            out.append(line)
            continue
        parts = line.split(",")
        if idx is None:
            idx = parts.index(column) if column in parts else -1
        elif idx >= 0:
            parts[idx] = "*"
        out.append(",".join(parts))
    return out


def write_trace(out_dir, trace, dim):
    """``trace.csv``, one ``hist_<time>.csv`` per checkpoint and ``events.csv``."""
    write_csv(os.path.join(out_dir, "trace.csv"), "trace", ["time", "rebirths", "tv", "dw", "wall_ms"],
              zip(trace.times, trace.rebirths, trace.tv, trace.dw, trace.wall_ms), trace.metadata)
    edges = trace.bin_edges
    for t, hist in zip(trace.times, trace.histograms):
        if dim == 1:
            rows = zip(edges[:-1], edges[1:], hist[0])
            cols = ["bin_lo", "bin_hi", "mass"]
        else:
            rows = [(a, edges[i], edges[i + 1], hist[a][i]) for a in range(dim) for i in range(len(edges) - 1)]
            cols = ["axis", "bin_lo", "bin_hi", "mass"]
        write_csv(os.path.join(out_dir, f"hist_{fmt(float(t))}.csv"), "histogram", cols, rows,
                  {"time": float(t)})
    kt, pre, post = trace.events
    if len(kt) or trace.metadata.get("aggregate") is None:
        suffix = [""] if dim == 1 else [str(j + 1) for j in range(dim)]
        cols = ["kill_time"] + [f"pre_theta{s}" for s in suffix] + [f"rebirth_theta{s}" for s in suffix]
        rows = (tuple([t]) + tuple(p) + tuple(q) for t, p, q in zip(kt, pre, post))
        write_csv(os.path.join(out_dir, "events.csv"), "events", cols, rows)
