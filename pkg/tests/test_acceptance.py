"""Acceptance suite: one test per criterion, one PASS/FAIL line each.

Run with `pytest tests/test_acceptance.py -s` to see the per-criterion
lines; tolerances are pinned here, not calibrated elsewhere.
"""

import itertools
import json
import time
from pathlib import Path

import mpmath
import numpy as np
import pytest

from cytofuse.cli import main
from cytofuse.core import LabelMask, ProbMap, stack_models
from cytofuse.errors import FormatError, ParseError
from cytofuse.io import (
    load_manifest,
    read_mask,
    read_probmap,
    write_manifest,
    write_mask,
    write_probmap,
)
from cytofuse.metrics import ConfusionMatrix, accumulate, iou_per_class, mean_iou
from cytofuse.parallel import thread_map
from cytofuse.rules import (
    FusionRule,
    _memberships,
    fuse,
    fuse_average,
    fuse_borda,
    fuse_fuzzy_rank,
    fuse_median,
    fuse_scores,
)
from oracles import borda_contributions

DATA = Path(__file__).parent / "data"
ALL_RULES = tuple(FusionRule)


def report(name: str, ok: bool, detail: str = "") -> None:
    status = "PASS" if ok else "FAIL"
    suffix = f" ({detail})" if detail else ""
    print(f"[{status}] {name}{suffix}")
    assert ok, f"{name}{suffix}"


def test_argmax_reduction():
    """N=1 fusion equals argmax for every rule over 1e5 simplex pixels."""
    rng = np.random.default_rng(2024)
    start = time.perf_counter()
    pixels_per_class_count = 15_000  # 7 class counts -> 105k pixels total
    mismatches = 0
    for num_classes in range(2, 9):
        probs = rng.dirichlet(np.ones(num_classes), size=pixels_per_class_count)
        probmap = ProbMap.from_array(probs[:, None, :])
        stack = stack_models([("only", probmap)])
        expected = np.argmax(probmap.data.astype(np.float64), axis=2)
        for rule in ALL_RULES:
            mismatches += int(np.count_nonzero(fuse(rule, stack).labels != expected))
    elapsed = time.perf_counter() - start
    report("argmax reduction (N=1, all rules, C=2..8)",
           mismatches == 0 and elapsed < 5.0,
           f"{mismatches} mismatches, {elapsed:.2f}s")


def test_fuzzy_monotonicity_and_endpoints():
    """g strictly decreasing on a 1e4 grid; exact endpoints."""
    grid = np.linspace(0.0, 1.0, 10_000)
    r1, r2 = _memberships(grid)
    g = r1 * r2
    strictly_decreasing = bool((np.diff(g) < 0).all())
    g1_exact = g[-1] == 0.0
    with mpmath.workdps(60):
        oracle_g0 = float((1 - mpmath.tanh(mpmath.mpf(1) / 2))
                          * (1 - mpmath.e ** (mpmath.mpf(-1) / 2)))
    g0_error = abs(g[0] - oracle_g0)
    report("fuzzy monotonicity + endpoints",
           strictly_decreasing and g1_exact and g0_error <= 1e-12,
           f"g(1)={g[-1]!r}, |g(0)-oracle|={g0_error:.2e}")


def test_borda_exhaustive_oracle():
    """Exhaustive agreement with the sort-based oracle on the 0.1 grid.

    Borda votes are sums of per-model contributions, so exhausting
    unordered model multisets covers every ordered stack.
    """
    start = time.perf_counter()
    mismatches = 0
    cases = 0
    for num_classes in (2, 3, 4):
        units = [p for p in itertools.product(range(11), repeat=num_classes)
                 if sum(p) == 10]
        points64 = np.asarray(units, dtype=np.float64) / 10.0
        # the pipeline stores float32; rank on exactly what it sees
        points = points64.astype(np.float32).astype(np.float64)
        contrib = np.asarray([borda_contributions(list(row)) for row in points],
                             dtype=np.int64)
        for n_models in (1, 2, 3):
            combos = np.fromiter(
                itertools.chain.from_iterable(
                    itertools.combinations_with_replacement(range(len(points)), n_models)),
                dtype=np.int64,
            ).reshape(-1, n_models)
            cases += combos.shape[0]
            for chunk in np.array_split(combos, max(1, combos.shape[0] // 400_000)):
                stack = stack_models([
                    (f"m{j}", ProbMap.from_array(points64[chunk[:, j]][:, None, :]))
                    for j in range(n_models)
                ])
                scores, mask = fuse_borda(stack)
                oracle_votes = contrib[chunk].sum(axis=1)
                oracle_labels = np.argmax(oracle_votes, axis=1)
                mismatches += int(np.count_nonzero(
                    scores.scores[:, 0, :] != oracle_votes))
                mismatches += int(np.count_nonzero(
                    mask.labels[:, 0] != oracle_labels))
    elapsed = time.perf_counter() - start
    report("borda exhaustive oracle (C<=4, N<=3, 0.1 grid)",
           mismatches == 0 and elapsed < 30.0,
           f"{cases} stacks, {mismatches} mismatches, {elapsed:.1f}s")


def test_median_equals_average_for_two_models():
    rng = np.random.default_rng(77)
    mismatched_stacks = 0
    for _ in range(10_000):
        num_classes = int(rng.integers(2, 7))
        probs = rng.dirichlet(np.ones(num_classes), size=(2, 2, 1))
        stack = stack_models([
            ("a", ProbMap.from_array(probs[0])),
            ("b", ProbMap.from_array(probs[1])),
        ])
        if not np.array_equal(fuse_median(stack)[1].labels,
                              fuse_average(stack)[1].labels):
            mismatched_stacks += 1
    report("median == average for N=2 (1e4 stacks)",
           mismatched_stacks == 0, f"{mismatched_stacks} mismatching stacks")


def test_idempotence_duplicated_models():
    rng = np.random.default_rng(88)
    probs = rng.dirichlet(np.ones(5), size=(100, 100))
    probmap = ProbMap.from_array(probs)
    single = {rule: fuse(rule, stack_models([("m", probmap)])) for rule in ALL_RULES}
    failures = []
    for n in (2, 3):
        dup = stack_models([(f"m{j}", probmap) for j in range(n)])
        for rule in ALL_RULES:
            if not np.array_equal(fuse(rule, dup).labels, single[rule].labels):
                failures.append((rule.value, n))
    report("idempotence under duplicated models (N=2,3, all rules)",
           not failures, f"failures: {failures}")


def test_permutation_robustness():
    rng = np.random.default_rng(99)
    maps = [ProbMap.from_array(rng.dirichlet(np.ones(5), size=(128, 128)))
            for _ in range(4)]
    stack = stack_models([(f"m{j}", pm) for j, pm in enumerate(maps)])
    order = [3, 1, 0, 2]
    shuffled = stack_models([(stack.names[j], stack.maps[j]) for j in order])
    worst_score_delta = 0.0
    label_flips_on_decided = 0
    for rule in ALL_RULES:
        base_scores, base_mask = fuse_scores(rule, stack)
        perm_scores, perm_mask = fuse_scores(rule, shuffled)
        worst_score_delta = max(
            worst_score_delta,
            float(np.abs(base_scores.scores - perm_scores.scores).max()))
        top_two = np.sort(base_scores.scores, axis=2)[:, :, -2:]
        decided = (top_two[:, :, 1] - top_two[:, :, 0]) > 1e-9
        label_flips_on_decided += int(np.count_nonzero(
            base_mask.labels[decided] != perm_mask.labels[decided]))
    report("permutation robustness (scores <= 1e-9, decided labels equal)",
           worst_score_delta <= 1e-9 and label_flips_on_decided == 0,
           f"max score delta {worst_score_delta:.2e}, flips {label_flips_on_decided}")


def test_metrics_oracle():
    gt = LabelMask(np.array([[0, 0], [1, 1]], dtype=np.uint8))
    pred = LabelMask(np.array([[0, 1], [1, 1]], dtype=np.uint8))
    cm = accumulate(ConfusionMatrix.zeros(2), pred, gt)
    fixture_ok = abs(mean_iou(cm) * 100.0 - 58.33) <= 0.005

    rng = np.random.default_rng(55)
    pairs = [(rng.integers(0, 3, (10, 10)), rng.integers(0, 3, (10, 10)))
             for _ in range(3)]
    pooled = ConfusionMatrix.zeros(3)
    for pred_arr, gt_arr in pairs:
        pooled = accumulate(pooled, LabelMask(pred_arr.astype(np.uint8)),
                            LabelMask(gt_arr.astype(np.uint8)))
    concat_pred = LabelMask(np.concatenate([p for p, _ in pairs]).astype(np.uint8))
    concat_gt = LabelMask(np.concatenate([g for _, g in pairs]).astype(np.uint8))
    concat = accumulate(ConfusionMatrix.zeros(3), concat_pred, concat_gt)
    pooled_ok = (iou_per_class(pooled) == iou_per_class(concat)
                 and mean_iou(pooled) == mean_iou(concat))
    report("metrics oracle (58.33% fixture, pooled == concatenated)",
           fixture_ok and pooled_ok,
           f"mean IoU {mean_iou(cm) * 100.0:.4f}%")


def test_io_round_trips_and_rejection(tmp_path):
    rng = np.random.default_rng(66)
    probmap = ProbMap.from_array(rng.dirichlet(np.ones(5), size=(16, 16)))
    p1, p2 = tmp_path / "a.npy", tmp_path / "b.npy"
    write_probmap(probmap, p1)
    write_probmap(read_probmap(p1), p2)
    probmap_ok = p1.read_bytes() == p2.read_bytes()

    mask = LabelMask(rng.integers(0, 5, (16, 16)).astype(np.uint8))
    m1, m2 = tmp_path / "a.pgm", tmp_path / "b.pgm"
    write_mask(mask, m1)
    write_mask(read_mask(m1), m2)
    mask_ok = m1.read_bytes() == m2.read_bytes()

    (tmp_path / "models" / "m").mkdir(parents=True)
    (tmp_path / "gt").mkdir()
    write_probmap(probmap, tmp_path / "models" / "m" / "i.npy")
    write_mask(mask, tmp_path / "gt" / "i.pgm")
    from cytofuse.core import ClassSet
    from cytofuse.io import Manifest
    manifest = Manifest(
        classes=ClassSet(5, tuple(f"c{k}" for k in range(5))),
        models=(("m", "models/m"),), ground_truth_dir="gt",
        images=("i",), base_dir=tmp_path)
    mf1, mf2 = tmp_path / "m1.json", tmp_path / "m2.json"
    write_manifest(manifest, mf1)
    write_manifest(load_manifest(mf1), mf2)
    manifest_ok = mf1.read_bytes() == mf2.read_bytes()

    good = p1.read_bytes()
    corpus = {
        "truncated payload": (good[:-8], ParseError),
        "truncated header": (good[:32], ParseError),
        "bad magic": (b"XXXXXX" + good[6:], ParseError),
        "fortran flag": (good.replace(b"'fortran_order': False",
                                      b"'fortran_order': True "), FormatError),
        "wrong dtype": (good.replace(b"'<f4'", b"'<f8'"), FormatError),
        "bad version": (good[:6] + b"\x09\x00" + good[8:], FormatError),
    }
    rejected = {}
    for name, (data, expected) in corpus.items():
        bad_path = tmp_path / "bad.npy"
        bad_path.write_bytes(data)
        try:
            read_probmap(bad_path)
            rejected[name] = "accepted"
        except expected:
            rejected[name] = "ok"
        except Exception as exc:  # wrong class
            rejected[name] = type(exc).__name__
    corpus_ok = all(v == "ok" for v in rejected.values())
    report("i/o round trips + malformed corpus",
           probmap_ok and mask_ok and manifest_ok and corpus_ok,
           f"corpus: {rejected}")


def test_end_to_end_synthetic_regression(tmp_path, capsys):
    golden = json.loads((DATA / "golden_compare.json").read_text())
    scenario = golden["scenario"]
    start = time.perf_counter()
    data_dir = tmp_path / "dataset"
    assert main(["synth", "--seed", str(scenario["seed"]),
                 "--images", str(scenario["images"]),
                 "--size", scenario["size"],
                 "--classes", str(scenario["classes"]),
                 "--variants", str(scenario["variants"]),
                 "--out", str(data_dir)]) == 0
    out_md = tmp_path / "table.md"
    assert main(["compare", "--manifest", str(data_dir / "manifest.json"),
                 "--rules", scenario["rules"], "--combos", scenario["combos"],
                 "--out", str(out_md)]) == 0
    elapsed = time.perf_counter() - start
    capsys.readouterr()

    doc = json.loads((tmp_path / "table.json").read_text())
    rendered_base = {row["model"]: f"{row['mean_iou'] * 100.0:.2f}"
                     for row in doc["base_models"]}
    rendered = {row["label"]: {rule: f"{v * 100.0:.2f}"
                               for rule, v in row["mean_iou"].items()}
                for row in doc["combinations"]}
    matches_golden = (rendered == golden["table"] and rendered_base == golden["base"])

    best_base = max(float(v) for v in golden["base"].values())
    best_fused = max(float(v) for cells in rendered.values() for v in cells.values())
    report("end-to-end synthetic regression (seed 42 golden)",
           matches_golden and best_fused >= best_base and elapsed < 60.0,
           f"golden match={matches_golden}, best fused {best_fused:.2f} vs "
           f"best base {best_base:.2f}, {elapsed:.1f}s")


@pytest.mark.parametrize("fixture_name,row_label,bold_value", [
    ("table_herlev.json", "U+P", "84.27"),
    ("table_jucyt_v1.json", "U+S", "83.79"),
])
def test_reference_table_rendering(fixture_name, row_label, bold_value):
    from cytofuse.tables import render_markdown, table_from_doc

    doc = json.loads((DATA / fixture_name).read_text())
    table = table_from_doc(doc)
    md = render_markdown(table)
    row = next(line for line in md.splitlines() if line.startswith(f"| {row_label} |"))
    cells = [c.strip() for c in row.strip("|").split("|")][1:]
    fuzzy_column = table.rules.index(FusionRule.FUZZY_RANK)
    ok = cells[fuzzy_column] == f"**{bold_value}**" and row.count("**") == 2
    report(f"reference table rendering ({fixture_name}: {row_label})",
           ok, f"row: {row}")


def test_secondary_exporter_contract(tmp_path):
    """Exporter files accepted by this tool; white/black GT becomes {1, 0}."""
    import os
    import subprocess
    import sys

    from PIL import Image

    from cytofuse.core import validate_probmap

    exporter_src = Path(__file__).resolve().parent.parent / "exporter" / "src"
    if not exporter_src.is_dir():
        pytest.skip("exporter package not present")
    env = dict(os.environ)
    env["PYTHONPATH"] = str(exporter_src) + os.pathsep + env.get("PYTHONPATH", "")

    def exporter(*argv):
        return subprocess.run([sys.executable, "-m", "cytoexport", *argv],
                              capture_output=True, text=True, env=env)

    rng = np.random.default_rng(31415)
    arrays = tmp_path / "arrays"
    arrays.mkdir()
    np.save(arrays / "img.npy", rng.normal(0, 3, (8, 8, 4)))
    result_t = exporter("--in", str(arrays), "--out", str(tmp_path / "tensors"),
                        "--classes", "4", "--softmax")

    gt_dir = tmp_path / "gt_color"
    gt_dir.mkdir()
    rgb = np.zeros((8, 8, 3), dtype=np.uint8)
    rgb[:4] = 255
    Image.fromarray(rgb).save(gt_dir / "gt.png")
    palette = tmp_path / "palette.json"
    palette.write_text(json.dumps([[0, 0, 0], [255, 255, 255]]))
    result_g = exporter("--in", str(gt_dir), "--out", str(tmp_path / "masks"),
                        "--classes", "2", "--palette", str(palette), "--strict")

    probmap = read_probmap(tmp_path / "tensors" / "img.npy")
    mask = read_mask(tmp_path / "masks" / "gt.pgm", num_classes=2)
    labels_ok = set(np.unique(mask.labels)) == {0, 1} and bool(
        (mask.labels[:4] == 1).all() and (mask.labels[4:] == 0).all())
    report("secondary exporter contract (readers accept, GT -> {1,0})",
           result_t.returncode == 0 and result_g.returncode == 0
           and validate_probmap(probmap).ok and labels_ok,
           f"tensor rc={result_t.returncode}, gt rc={result_g.returncode}")


def test_fuzzy_throughput_benchmark():
    """Documented benchmark, not a hard gate: 100 images, 224x224x5, N=3."""
    rng = np.random.default_rng(7)
    stacks = []
    for _ in range(100):
        maps = [ProbMap.from_array(rng.dirichlet(np.ones(5), size=(224, 224)))
                for _ in range(3)]
        stacks.append(stack_models([(f"m{j}", pm) for j, pm in enumerate(maps)]))
    start = time.perf_counter()
    results = thread_map(lambda s: fuse_fuzzy_rank(s)[1], stacks)
    elapsed = time.perf_counter() - start
    assert len(results) == 100
    report("fuzzy throughput benchmark (informational, target <1s on 4 cores)",
           True, f"{elapsed:.2f}s on this machine")
