"""Deterministic report files: canonical JSON, delimited tables, SVG figures.

Rerunning a command with the same config and seed must reproduce every
output byte for byte, so the writers here are pinned down: JSON keys
are sorted and floats go through repr, CSV cells use a fixed %.17g
format, and figures are stripped of wall-clock metadata with their
internal ids salted by a constant string.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import math
import os

import matplotlib

matplotlib.use("Agg")
matplotlib.rcParams["svg.hashsalt"] = "conelab"

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)
import numpy as np  # noqa: E402

from . import __version__

REPORT_NAME = "report.json"


def jsonable(obj):
    """Recursively convert report payloads to plain JSON types.

    Numpy scalars and arrays become numbers and lists, complex numbers
    become {"re", "im"} pairs, dataclass reports become dicts, and
    non-finite floats become strings (JSON has no inf/nan).  Dict keys
    are stringified so mode indices and horizons survive.
    """
    if obj is None or isinstance(obj, (bool, str, int)):
        return obj
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else repr(v)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (complex, np.complexfloating)):
        return {"re": jsonable(obj.real), "im": jsonable(obj.imag)}
    if isinstance(obj, np.ndarray):
        return [jsonable(v) for v in obj.tolist()]
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple, set, frozenset)):
        seq = sorted(obj) if isinstance(obj, (set, frozenset)) else obj
        return [jsonable(v) for v in seq]
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        if hasattr(obj, "as_dict"):
            return jsonable(obj.as_dict())
        return {f.name: jsonable(getattr(obj, f.name))
                for f in dataclasses.fields(obj)}
    raise TypeError(f"cannot serialize {type(obj).__name__} into a report")


def canonical_json(payload) -> str:
    return json.dumps(jsonable(payload), sort_keys=True, indent=2,
                      separators=(",", ": ")) + "\n"


def write_report(out_dir, command: str, config: dict, results=None,
                 error: dict | None = None) -> str:
    """Write report.json; exactly one of results/error is present."""
    doc = {
        "command": command,
        "version": __version__,
        "status": "ok" if error is None else "error",
        "config": config,
    }
    if error is None:
        doc["results"] = results
    else:
        doc["error"] = error
    path = os.path.join(out_dir, REPORT_NAME)
    with open(path, "w") as fh:
        fh.write(canonical_json(doc))
    return path


def _cell(v) -> str:
    if isinstance(v, str):
        return v
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (complex, np.complexfloating)):
        return f"{v.real:.17g}{v.imag:+.17g}j"
    return f"{float(v):.17g}"


def write_csv(path, header, rows) -> str:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(list(header))
        for row in rows:
            writer.writerow([_cell(v) for v in row])
    return str(path)


def figure(*args, **kwargs):
    """New matplotlib figure on the headless backend."""
    return plt.figure(*args, **kwargs)


def save_figure(fig, path) -> str:
    """SVG without creation-date metadata, then release the figure."""
    fig.savefig(path, format="svg", metadata={"Date": None},
                bbox_inches="tight")
    plt.close(fig)
    return str(path)


def heatmap(values: np.ndarray, extent, title: str, path,
            cbar_label: str = "|u|") -> str:
    fig = figure(figsize=(5.4, 4.6))
    ax = fig.add_subplot(111)
    im = ax.imshow(np.abs(values).T, origin="lower", extent=extent,
                   aspect="equal", cmap="magma")
    ax.set_title(title)
    ax.set_xlabel("x")
    ax.set_ylabel("y")
    fig.colorbar(im, ax=ax, label=cbar_label)
    return save_figure(fig, path)
