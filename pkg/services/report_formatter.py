import re
from typing import Dict, Iterable, List, Optional, Sequence

import markdown

METHOD_ORDER = ("baseline-I", "baseline-B", "solver")
NOT_AVAILABLE = "N/A"


def _fmt(value: Optional[float], digits: int) -> str:
    return NOT_AVAILABLE if value is None else f"{value:.{digits}f}"


def _mean(values: Iterable[Optional[float]]) -> Optional[float]:
    present = [v for v in values if v is not None]
    return sum(present) / len(present) if present else None


def summarize(rows: Sequence[Dict]) -> List[Dict]:
    """Per-method means of psnr_db, ssim and tiou; methods without a TIoU keep None."""
    methods = sorted(
        {row["method"] for row in rows},
        key=lambda m: (METHOD_ORDER.index(m) if m in METHOD_ORDER else len(METHOD_ORDER), m),
    )
    summary = []
    for method in methods:
        chosen = [row for row in rows if row["method"] == method and row.get("psnr_db") is not None]
        summary.append(
            {
                "method": method,
                "count": len(chosen),
                "psnr_db": _mean(row["psnr_db"] for row in chosen),
                "ssim": _mean(row["ssim"] for row in chosen),
                "tiou": _mean(row.get("tiou") for row in chosen),
            }
        )
    return summary


def format_markdown(rows: Sequence[Dict], title: str = "Evaluation summary") -> str:
    lines = [
        f"# {title}",
        "",
        "| Method | Samples | PSNR (dB) | SSIM | TIoU |",
        "| --- | ---: | ---: | ---: | ---: |",
    ]
    for entry in summarize(rows):
        lines.append(
            f"| {entry['method']} | {entry['count']} | {_fmt(entry['psnr_db'], 2)} "
            f"| {_fmt(entry['ssim'], 3)} | {_fmt(entry['tiou'], 3)} |"
        )
    return "\n".join(lines) + "\n"


def format_html(markdown_text: str) -> str:
    """Markdown summary rendered to an HTML fragment."""
    if not markdown_text:
        return ""
    text = re.sub(r"\n{3,}", "\n\n", markdown_text.strip())
    return markdown.markdown(text, extensions=["tables"]).strip()
