"""Compression/timing tables and the offline HTML retrieval gallery."""

from __future__ import annotations

import base64
import csv
import html
import io
from pathlib import Path

from .dataio import encode_png
from .errors import DataError

STATS_HEADER = ("method", "frames", "raw_bytes", "index_bytes", "ratio", "encode_seconds")


def _fmt_ratio(ratio):
    return "n/a" if ratio is None else f"{ratio:.1f}"


def compression_report(stats):
    """Render compression statistics as ``(text_table, csv_text)``."""
    if not stats:
        raise ValueError("compression_report needs at least one entry")
    rows = [(s.label, str(s.n_frames), str(s.raw_bytes), str(s.index_bytes), _fmt_ratio(s.ratio),
             f"{s.encode_seconds:.3f}") for s in stats]
    widths = [max(len(h), *(len(r[i]) for r in rows)) for i, h in enumerate(STATS_HEADER)]
    line = lambda cells: "  ".join(c.ljust(w) if i == 0 else c.rjust(w)
                                   for i, (c, w) in enumerate(zip(cells, widths)))
    text = "\n".join([line(STATS_HEADER), line(["-" * w for w in widths])] + [line(r) for r in rows]) + "\n"
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(STATS_HEADER)
    w.writerows(rows)
    return text, buf.getvalue()


def _img(pixels):
    return "data:image/png;base64," + base64.b64encode(encode_png(pixels)).decode("ascii")


_STYLE = """
body{font-family:sans-serif;margin:1em;background:#fafafa}
section{margin-bottom:2em}
.row{display:flex;flex-wrap:wrap;align-items:flex-start;gap:4px;margin:4px 0}
.method{width:8em;font-weight:bold}
figure{margin:0;text-align:center;font-size:10px}
figure img{width:64px;height:64px;image-rendering:pixelated;display:block}
.query img{outline:2px solid #c33}
"""


def render_gallery(results, frames, path, query_frames=None, title="Retrieval gallery"):
    """Write a self-contained HTML page: one section per query, one row per method."""
    groups = {}
    for res in results:
        groups.setdefault(res.query_id, []).append(res)
    parts = ["<!DOCTYPE html>", "<html><head><meta charset=\"utf-8\">",
             f"<title>{html.escape(title)}</title><style>{_STYLE}</style></head><body>",
             f"<h1>{html.escape(title)}</h1>"]
    if not groups:
        parts.append('<p class="empty">No queries to display.</p>')
    for qid, rows in groups.items():
        parts.append(f'<section><h2>Query {html.escape(qid)}</h2>')
        qpx = None
        for source in (query_frames, frames):
            if source is not None and qpx is None:
                qpx = source.get(qid)
        if qpx is not None:
            parts.append(f'<div class="row"><figure class="cell query"><img src="{_img(qpx)}" alt="query">'
                         f'<figcaption>query {html.escape(qid)}</figcaption></figure></div>')
        else:
            parts.append(f'<div class="row"><figure class="cell query"><figcaption>query '
                         f'{html.escape(qid)} (pixels unavailable)</figcaption></figure></div>')
        for res in rows:
            cells = [f'<div class="row"><div class="method">{html.escape(res.method)}</div>']
            for c in res.ranked:
                px = frames.get(c.frame_id) if frames is not None else None
                if px is None:
                    raise DataError(f"gallery: no pixels for frame {c.frame_id}")
                caption = f"#{c.final_rank} {html.escape(c.frame_id)}<br>L2 {c.l2_score:.3f}"
                if c.siamese_distance is not None:
                    caption += f"<br>D {c.siamese_distance:.3f}"
                cells.append(f'<figure class="cell result"><img src="{_img(px)}" alt="{html.escape(c.frame_id)}">'
                             f"<figcaption>{caption}</figcaption></figure>")
            cells.append("</div>")
            parts.append("".join(cells))
        parts.append("</section>")
    parts.append("</body></html>")
    try:
        Path(path).write_text("\n".join(parts), encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot write gallery {path}: {exc}") from exc
    return path
