#!/usr/bin/env python3
"""
HTML Report Generator for unwrapping method comparisons
Renders the summary.json written by `unwrap.py compare` into a single HTML page.
"""

import datetime
import html
import json
import os
import sys

METHOD_LABELS = {
    "registration": "Image registration (frame-to-frame)",
    "sfm_slerp": "SfM + interpolated rotation",
    "sfm_inplane": "SfM + registration-based rotation",
}


def _fmt(value, digits=3):
    return "" if value is None else f"{value:.{digits}f}"


def _rows_table(rows):
    body = "".join(
        f"""
                        <tr>
                            <td>{html.escape(str(row['landmark_id']))}</td>
                            <td>{_fmt(row['mean'])}</td>
                            <td>{_fmt(row['max'])}</td>
                            <td>{_fmt(row['min'])}</td>
                            <td>{_fmt(row['std'])}</td>
                            <td>{row['samples']}</td>
                        </tr>"""
        for row in rows
    )
    return f"""
                    <table class="rows-table">
                        <thead>
                            <tr><th>landmark</th><th>mean</th><th>max</th><th>min</th><th>std</th><th>samples</th></tr>
                        </thead>
                        <tbody>{body}
                        </tbody>
                    </table>"""


def generate_html_report(json_file="summary.json", output_file="comparison_report.html"):
    """Generate an HTML report from a compare summary; returns False when the summary is missing."""

    try:
        with open(json_file, "r", encoding="utf-8") as f:
            data = json.load(f)
    except FileNotFoundError:
        print(f"Error: {json_file} not found. Run `unwrap.py compare` first.", file=sys.stderr)
        return False

    methods = data.get("methods", [])
    gaps = data.get("gaps", {})
    best = min(methods, key=lambda m: m["weighted_mean"])["method"] if methods else None

    html_content = f"""
    <!DOCTYPE html>
    <html lang="en">
    <head>
        <meta charset="UTF-8">
        <meta name="viewport" content="width=device-width, initial-scale=1.0">
        <title>Unwrapping Method Comparison</title>
        <style>
            body {{ font-family: Helvetica, Arial, sans-serif; background: #eef1f5; color: #222; margin: 0; padding: 24px; }}
            main {{ max-width: 1100px; margin: 0 auto; background: #fff; border-radius: 6px; }}
            header {{ background: #16222a; color: #fff; padding: 24px 32px; }}
            header h1 {{ font-size: 1.8em; margin: 0 0 6px; }}
            header p {{ margin: 2px 0; opacity: 0.8; }}
            .stats-grid {{ display: grid; grid-template-columns: repeat(auto-fit, minmax(240px, 1fr)); gap: 16px; padding: 24px 32px; }}
            .stat-card {{ border: 1px solid #d5dbe3; border-radius: 6px; padding: 18px; }}
            .stat-card.best {{ border: 2px solid #2e7d32; }}
            .stat-number {{ font-size: 2em; font-weight: 600; color: #1f5f8b; }}
            .best .stat-number {{ color: #2e7d32; }}
            .stat-detail {{ color: #777; font-size: 0.85em; margin-top: 6px; }}
            section {{ padding: 0 32px 24px; }}
            section h2 {{ border-bottom: 2px solid #16222a; padding-bottom: 6px; }}
            h3 {{ display: flex; justify-content: space-between; font-size: 1em; margin: 24px 0 8px; }}
            h3 span {{ font-weight: normal; color: #555; }}
            .rows-table {{ width: 100%; border-collapse: collapse; font-family: monospace; }}
            .rows-table th, .rows-table td {{ text-align: right; padding: 3px 8px; border-bottom: 1px solid #eee; }}
            .rows-table th:first-child, .rows-table td:first-child {{ text-align: left; }}
        </style>
    </head>
    <body>
        <main>
            <header>
                <h1>Unwrapping Method Comparison</h1>
                <p>Landmark distance to centroid, in median body lengths</p>
                <p>{html.escape(os.path.basename(json_file))}, {datetime.datetime.now():%Y-%m-%d %H:%M}</p>
            </header>

            <div class="stats-grid">
    """

    for method in methods:
        name = method["method"]
        card_class = "stat-card best" if name == best else "stat-card"
        html_content += f"""
                <div class="{card_class}">
                    <div class="stat-number">{_fmt(method['weighted_mean'])}</div>
                    <div>{html.escape(METHOD_LABELS.get(name, name))}</div>
                    <div class="stat-detail">body length {_fmt(method['body_length'], 4)} &middot; {method['tracks']} landmarks</div>
                </div>"""

    html_content += """
            </div>

            <section>
                <h2>Per-landmark dispersion</h2>"""

    for method in methods:
        name = method["method"]
        dropped_total = sum(part.get("dropped_total", 0) for part in gaps.get(name, {}).values())
        html_content += f"""
                <h3>{html.escape(METHOD_LABELS.get(name, name))}
                    <span>weighted mean {_fmt(method['weighted_mean'])} BL &middot; {dropped_total} entries dropped</span></h3>
                {_rows_table(method.get('rows', []))}"""

    html_content += """
            </section>
        </main>
    </body>
    </html>
    """

    with open(output_file, "w", encoding="utf-8") as f:
        f.write(html_content)

    print(f"HTML comparison report generated: {output_file}")
    if best is not None:
        print(f"Lowest landmark dispersion: {best}")

    return True


if __name__ == "__main__":
    generate_html_report(*sys.argv[1:3])
