"""CSV and figure rendering for planner and simulator outputs."""
from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

CONVERGENCE_HEADER = ["step", "best_score"]
REQUEST_HEADER = [
    "arrival", "input_len", "output_len", "prefill_replica",
    "decode_replica", "ttft", "kv_delay", "tpot", "e2e", "completed",
]
CURVE_HEADER = ["slo_scale", "attainment_ttft", "attainment_tpot", "attainment_e2e"]
SLO_MATRIX_HEADER = None  # D matrix CSV is positional


def write_convergence_csv(score_trace, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CONVERGENCE_HEADER)
        for i, s in enumerate(score_trace):
            w.writerow([i, repr(float(s))])


def write_requests_csv(result, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(REQUEST_HEADER)
        for r in result.records:
            w.writerow([
                repr(r.arrival), r.input_len, r.output_len, r.prefill_replica,
                r.decode_replica, repr(r.ttft), repr(r.kv_delay), repr(r.tpot),
                repr(r.e2e), int(r.completed),
            ])


def write_curve_csv(rows, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CURVE_HEADER)
        for scale, a_ttft, a_tpot, a_e2e in rows:
            w.writerow([repr(scale), repr(a_ttft), repr(a_tpot), repr(a_e2e)])


def write_slo_matrix_csv(d, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        for row in d:
            w.writerow([repr(float(v)) for v in row])


def _save(fig, path):
    # empty metadata keeps PNG bytes identical across runs
    fig.savefig(path, dpi=120, metadata={"Software": ""})
    plt.close(fig)


def plot_convergence(score_trace, path):
    fig, ax = plt.subplots(figsize=(5, 3.2), constrained_layout=True)
    ax.plot(range(len(score_trace)), score_trace, marker=".", lw=1.2)
    ax.set_xlabel("search step")
    ax.set_ylabel("best attainment")
    ax.set_ylim(-0.02, 1.02)
    ax.grid(alpha=0.3)
    _save(fig, path)


def plot_attainment_curve(rows, path):
    fig, ax = plt.subplots(figsize=(5, 3.2), constrained_layout=True)
    scales = [r[0] for r in rows]
    for idx, label in ((1, "TTFT"), (2, "TPOT"), (3, "E2E")):
        ax.plot(scales, [r[idx] for r in rows], marker=".", lw=1.2, label=label)
    ax.set_xlabel("SLO scale")
    ax.set_ylabel("attainment")
    ax.set_ylim(-0.02, 1.02)
    ax.legend(frameon=False)
    ax.grid(alpha=0.3)
    _save(fig, path)
