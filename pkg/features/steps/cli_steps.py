# features/steps/cli_steps.py
"""
Step definitions for cli.feature

Commands run in-process through cli.run with the scenario's working
directory as the current directory, so feature files can use relative paths.
"""

import contextlib
import csv
import filecmp
import json
import os
import shlex

from behave import given, then, when

from step_helpers import small_scene_config

import parallel
from cli import run
from generate_html_report import generate_html_report
from landmarks import read_dispersion_table, summarize_rows


@contextlib.contextmanager
def _inside(directory):
    previous = os.getcwd()
    os.chdir(directory)
    try:
        yield
    finally:
        os.chdir(previous)


def _run(context, argv):
    with _inside(context.workdir):
        code = run(argv)
    context.exit_codes = getattr(context, 'exit_codes', []) + [code]
    return code


def _path(context, name):
    return os.path.join(context.workdir, name)


def _write_json(path, document):
    with open(path, "w", encoding="utf-8") as f:
        json.dump(document, f)


def _read_manifest(context, directory):
    with open(_path(context, os.path.join(directory, "manifest.json")), "r", encoding="utf-8") as f:
        return json.load(f)


@given(u'a small scene configuration "{name}" with seed {seed:d}')
def step_scene_config(context, name, seed):
    _write_json(_path(context, name), small_scene_config(seed=seed))


@given(u'the worker chunks hold as few as {rows:d} rows')
def step_min_chunk(context, rows):
    previous = parallel.MIN_CHUNK
    parallel.MIN_CHUNK = rows
    context.add_cleanup(setattr, parallel, "MIN_CHUNK", previous)


@when(u'I run "{arguments}"')
def step_run(context, arguments):
    _run(context, shlex.split(arguments))


@when(u'I run the command without arguments')
def step_run_bare(context):
    _run(context, [])


@then(u'the command exits with code {code:d}')
def step_exit_code(context, code):
    codes = context.exit_codes
    if codes[-1] != code:
        raise AssertionError(f"exit code {codes[-1]}, expected {code}")
    if code == 0 and any(codes):
        raise AssertionError(f"an earlier command failed: exit codes {codes}")


# ---------------------------------------------------------------------------
# Outputs
# ---------------------------------------------------------------------------

@then(u'the directory "{directory}" holds "{names}"')
def step_directory_holds(context, directory, names):
    missing = [n.strip() for n in names.split(",") if not os.path.isfile(_path(context, os.path.join(directory, n.strip())))]
    if missing:
        raise AssertionError(f"{directory} lacks {missing}")


@then(u'the manifest in "{directory}" records subcommand "{command}" and seed {seed:d}')
def step_manifest_seed(context, directory, command, seed):
    manifest = _read_manifest(context, directory)
    if manifest["subcommand"] != command or manifest["seed"] != seed:
        raise AssertionError(f"manifest records {manifest['subcommand']} with seed {manifest['seed']}")


@then(u'the manifest in "{directory}" records subcommand "{command}" with input "{role}"')
def step_manifest_input(context, directory, command, role):
    manifest = _read_manifest(context, directory)
    if manifest["subcommand"] != command:
        raise AssertionError(f"manifest records subcommand {manifest['subcommand']}")
    entry = manifest["inputs"].get(role)
    if entry is None or len(entry.get("sha256", "")) != 64:
        raise AssertionError(f"manifest has no digest for input {role}: {manifest['inputs']}")


@then(u'the manifest in "{directory}" lists the output "{name}"')
def step_manifest_output(context, directory, name):
    if name not in _read_manifest(context, directory)["outputs"]:
        raise AssertionError(f"manifest does not list {name}")


@then(u'the manifest in "{directory}" does not record the parameter "{name}"')
def step_manifest_excludes(context, directory, name):
    if name in _read_manifest(context, directory)["parameters"]:
        raise AssertionError(f"manifest records the parameter {name}")


@then(u'the directory "{directory}" does not hold "{name}"')
def step_directory_lacks(context, directory, name):
    if os.path.exists(_path(context, os.path.join(directory, name))):
        raise AssertionError(f"{directory} unexpectedly holds {name}")


@then(u'the manifest in "{directory}" has no input "{role}"')
def step_manifest_no_input(context, directory, role):
    inputs = _read_manifest(context, directory)["inputs"]
    if role in inputs:
        raise AssertionError(f"manifest records the unused input {role}: {inputs[role]}")


@then(u'the rows of "{name}" are split into {count:d} chunks for {threads:d} threads')
def step_chunk_count(context, name, count, threads):
    with open(_path(context, name), "r", encoding="utf-8") as f:
        rows = sum(1 for _ in csv.reader(f)) - 1
    found = len(parallel.chunk_bounds(rows, threads))
    if found != count:
        raise AssertionError(f"{rows} rows split into {found} chunks with {threads} threads, expected {count}")


def _report(context, name):
    rows = read_dispersion_table(_path(context, name))
    with open(_path(context, name), "r", encoding="utf-8") as f:
        trailer = dict(line.strip().split("=", 1) for line in f if "=" in line)
    return summarize_rows(rows, float(trailer["body_length"])), trailer


@then(u'the dispersion report "{name}" has a weighted mean below {limit:g} body lengths')
def step_report_below(context, name, limit):
    report, trailer = _report(context, name)
    if not report.weighted_mean < limit:
        raise AssertionError(f"weighted mean {report.weighted_mean} (file: {trailer['weighted_mean']}) is not below {limit}")


@then(u'the dispersion report "{name}" has body length {value:g} within {tol:g}')
def step_report_body_length(context, name, value, tol):
    _, trailer = _report(context, name)
    if not abs(float(trailer["body_length"]) - value) <= tol:
        raise AssertionError(f"body length {trailer['body_length']}, expected {value}")


@then(u'the files "{a}" and "{b}" are identical')
def step_files_identical(context, a, b):
    if not filecmp.cmp(_path(context, a), _path(context, b), shallow=False):
        raise AssertionError(f"{a} and {b} differ")


def _summary_rows(path):
    with open(path, "r", encoding="utf-8", newline="") as f:
        return list(csv.DictReader(f))


@then(u'the summary "{name}" lists the methods "{methods}"')
def step_summary_methods(context, name, methods):
    found = [row["method"] for row in _summary_rows(_path(context, name))]
    expected = [m.strip() for m in methods.split(",")]
    if found != expected:
        raise AssertionError(f"summary lists {found}, expected {expected}")


# ---------------------------------------------------------------------------
# HTML report
# ---------------------------------------------------------------------------

@when(u'I render the HTML report of "{summary}" to "{output}"')
def step_render_html(context, summary, output):
    context.html_written = generate_html_report(_path(context, summary), _path(context, output))
    context.html_path = _path(context, output)


@then(u'the HTML report is written')
def step_html_written(context):
    if not context.html_written or not os.path.isfile(context.html_path):
        raise AssertionError("no HTML report was written")


@then(u'no HTML report is written')
def step_html_missing(context):
    if context.html_written or os.path.exists(context.html_path):
        raise AssertionError("an HTML report was written without a summary")


@then(u'the HTML report "{name}" marks exactly one method as the best')
def step_html_best(context, name):
    with open(_path(context, name), "r", encoding="utf-8") as f:
        count = f.read().count('class="stat-card best"')
    if count != 1:
        raise AssertionError(f"{count} methods are marked as the best")


# ---------------------------------------------------------------------------
# Method ranking
# ---------------------------------------------------------------------------

NOISY_FLIGHT = {
    "n_individuals": 10,
    "n_landmarks": 20,
    "drone": {
        "interpolation": "spline",
        "waypoints": [[0.0, 0.0, 80.0], [30.0, 6.0, 80.0], [60.0, -4.0, 80.0], [90.0, 0.0, 80.0]],
        "yaw_deg": [0.0, 20.0, -10.0],
        "pitch_deg": [0.0],
    },
    "noise": {
        "pose_rotation_sigma_deg": 0.02,
        "pose_translation_sigma": 0.05,
        "registration_sigma_deg": 0.05,
        "registration_translation_sigma": 0.5,
    },
}


@when(u'I compare the methods on noisy {frames:d}-frame flights with seeds {first:d} to {last:d}')
def step_rank_methods(context, frames, first, last):
    context.rankings = []
    for seed in range(first, last + 1):
        name = f"flight_{seed}"
        _write_json(_path(context, f"{name}.json"), small_scene_config(NOISY_FLIGHT, n_frames=frames, seed=seed))
        for argv in (["synth", "--config", f"{name}.json", "--out-dir", name],
                     ["compare", "--scene-dir", name, "--min-samples", "50", "--out-dir", f"{name}/compare"]):
            code = _run(context, argv)
            if code != 0:
                raise AssertionError(f"{argv[0]} failed with exit code {code} for seed {seed}")
        rows = _summary_rows(_path(context, f"{name}/compare/summary.csv"))
        context.rankings.append({row["method"]: float(row["weighted_mean"]) for row in rows})


@then(u'sfm_slerp is at most sfm_inplane and sfm_inplane is below registration in at least {k:d} of the flights')
def step_ranking(context, k):
    ordered = [r for r in context.rankings if r["sfm_slerp"] <= r["sfm_inplane"] < r["registration"]]
    if len(ordered) < k:
        raise AssertionError(f"expected ordering held in {len(ordered)} of {len(context.rankings)} flights: {context.rankings}")
