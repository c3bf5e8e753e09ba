"""Measurement studies rendered as CSV tables plus matplotlib figures.

Three studies ship:

* ``tamper-cost`` — signature operations needed to rewrite a tampered
  ledger as a function of its length, with a linear fit;
* ``rotation`` — how many transactions each executing provider saw over
  a workload, the privacy angle of per-transaction provider rotation;
* ``fault-matrix`` — read/write availability over every per-kind
  fault-count combination.

Each study writes ``<name>.csv`` and ``<name>.png`` into the chosen
output directory and returns the rows it wrote.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .fixtures import CountingSigner, build_demo_ledger
from .services import STORAGE, SERVICE_KINDS, CuttingCondition
from .simulate import build_stack, run_fault_matrix
from .validation import colluding_rewrite, validate_ledger


def _figure():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def write_csv(path: Path, header: Sequence[str], rows: Sequence[Sequence]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


@dataclass(frozen=True)
class LinearFit:
    slope: float
    intercept: float
    r_squared: float


def linear_fit(xs: Sequence[float], ys: Sequence[float]) -> LinearFit:
    x = np.asarray(xs, dtype=float)
    y = np.asarray(ys, dtype=float)
    slope, intercept = np.polyfit(x, y, 1)
    predicted = slope * x + intercept
    ss_res = float(np.sum((y - predicted) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r_squared = 1.0 if ss_tot == 0 else 1.0 - ss_res / ss_tot
    return LinearFit(float(slope), float(intercept), r_squared)


def rewrite_cost(n_blocks: int, height: int = 1, seed: int = 0) -> int:
    """Signature operations a full rewrite from ``height`` takes."""
    demo = build_demo_ledger(n_blocks, txs_per_block=1, seed=seed)
    osp = CountingSigner(demo.osp)
    vsp = CountingSigner(demo.vsp)
    user = CountingSigner(demo.user)
    rewritten = colluding_rewrite(demo.ledger, height, osp=osp, vsp=vsp, user=user)
    if not validate_ledger(rewritten, demo.keys).ok:
        raise RuntimeError("rewrite did not produce a valid ledger")
    return osp.count + vsp.count + user.count


def tamper_cost_study(out_dir: Path, ns: Sequence[int] = (50, 100, 150, 200),
                      seed: int = 0) -> tuple[list[tuple[int, int]], LinearFit]:
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = [(n, rewrite_cost(n, height=1, seed=seed)) for n in ns]
    fit = linear_fit([r[0] for r in rows], [r[1] for r in rows])
    write_csv(out_dir / "tamper_cost.csv", ["ledger_blocks", "signature_ops"], rows)

    plt = _figure()
    fig, ax = plt.subplots(figsize=(6, 4))
    xs = [r[0] for r in rows]
    ys = [r[1] for r in rows]
    ax.plot(xs, ys, "o", label="measured")
    ax.plot(xs, [fit.slope * x + fit.intercept for x in xs], "-",
            label=f"fit: {fit.slope:.2f}n{fit.intercept:+.2f} (R²={fit.r_squared:.5f})")
    ax.set_xlabel("ledger length (data blocks)")
    ax.set_ylabel("signature operations to rewrite from block 1")
    ax.set_title("Cost of a colluding rewrite grows linearly")
    ax.legend()
    fig.tight_layout()
    fig.savefig(out_dir / "tamper_cost.png", dpi=150)
    plt.close(fig)
    return rows, fit


def rotation_study(out_dir: Path, submissions: int = 300, m: int = 3,
                   seed: int = 11) -> list[tuple[str, int]]:
    out_dir.mkdir(parents=True, exist_ok=True)
    stack = build_stack({k: (m if k != "GBA" else 1) for k in SERVICE_KINDS},
                        seed=seed, cutting=CuttingCondition.count(5))
    api = stack.new_api()
    created = api.create_ledger(0)
    for i in range(submissions):
        api.submit(created.ledger_address, f"doc {i}".encode())
    session = api.session(created.ledger_address)
    counts: dict[str, int] = {pid: 0 for pid in stack.ids_of("ESP")}
    for receipt in session.receipts:
        if receipt.esp_id:
            counts[receipt.esp_id] += 1
    rows = sorted(counts.items())
    write_csv(out_dir / "rotation.csv", ["esp_id", "transactions_seen"], rows)

    plt = _figure()
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.bar([r[0] for r in rows], [r[1] for r in rows])
    ax.axhline(submissions / m, linestyle="--", color="grey",
               label=f"uniform share ({submissions / m:.0f})")
    ax.set_ylabel("transactions seen")
    ax.set_title(f"Executing-provider rotation over {submissions} submissions")
    ax.legend()
    fig.tight_layout()
    fig.savefig(out_dir / "rotation.png", dpi=150)
    plt.close(fig)
    return rows


def fault_matrix_study(out_dir: Path, m: int = 2, seed: int = 7) -> list[tuple]:
    out_dir.mkdir(parents=True, exist_ok=True)
    cells = run_fault_matrix(m, seed=seed)
    rows = []
    for cell in cells:
        faults = dict(cell.faults)
        rows.append((
            *(faults[k] for k in SERVICE_KINDS),
            "ok" if cell.read_ok else "fail",
            "ok" if cell.write_ok else "fail",
            str(cell.matches).lower(),
        ))
    header = [*(k.lower() + "_faults" for k in SERVICE_KINDS), "read", "write", "matches"]
    write_csv(out_dir / "fault_matrix.csv", header, rows)

    # Aggregate view: write availability by healthy-storage count vs the
    # minimum healthy count among the signing kinds.
    signing = [k for k in SERVICE_KINDS if k != STORAGE]
    grid = np.zeros((m + 1, m + 1))
    totals = np.zeros((m + 1, m + 1))
    for cell in cells:
        faults = dict(cell.faults)
        row = m - faults[STORAGE]
        col = min(m - faults[k] for k in signing)
        grid[row, col] += 1 if cell.write_ok else 0
        totals[row, col] += 1
    with np.errstate(invalid="ignore"):
        fraction = np.where(totals > 0, grid / np.maximum(totals, 1), np.nan)

    plt = _figure()
    fig, ax = plt.subplots(figsize=(6, 5))
    image = ax.imshow(fraction, origin="lower", vmin=0, vmax=1, cmap="RdYlGn")
    ax.set_xlabel("minimum healthy providers among signing kinds")
    ax.set_ylabel("healthy storage providers")
    ax.set_title("Write availability under provider faults")
    fig.colorbar(image, ax=ax, label="fraction of combinations writable")
    fig.tight_layout()
    fig.savefig(out_dir / "fault_matrix.png", dpi=150)
    plt.close(fig)
    return rows
