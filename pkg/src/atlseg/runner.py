"""Workflow pieces shared by the CLI: dataset splits, model setup, ablation sweeps."""

from __future__ import annotations

import csv
import io
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .adapter import VARIANT_NAMES
from .config import RunConfig
from .data import Dataset, build_dataset, split
from .metrics import MetricsReport
from .model import SegModel, closed_form_counts
from .train import apply_freeze_policy, count_params, train


def load_splits(run: RunConfig) -> tuple[Dataset, Dataset]:
    data = run.data
    return split(build_dataset(data), (data.train_fraction, data.val_fraction), data.seed)


def build_model(run: RunConfig, variant: Optional[str] = None, seed: Optional[int] = None) -> SegModel:
    """Fresh model with the freeze policy applied."""
    model = SegModel(run.model_config(variant), seed=run.seed if seed is None else seed)
    apply_freeze_policy(model)
    return model


@dataclass
class AblationRow:
    variant: str
    seed: int
    midlays: str
    residual: bool
    placement: str
    trainable: int
    metrics: Optional[MetricsReport] = None
    seconds: float = 0.0
    error: str = ""

    @property
    def ok(self) -> bool:
        return not self.error


ABLATION_COLUMNS = ("variant", "seed", "midlay", "residual", "placement", *MetricsReport.CSV_HEADER,
                    "trainable_params", "status")


def run_variant(run: RunConfig, variant: str, seed: int, train_set: Dataset, val_set: Dataset) -> AblationRow:
    """One seeded train + validation run; failures are captured in the row."""
    cfg = run.adapter_config(variant)
    closed = closed_form_counts(run.model_config(variant))
    # closed form stands in if the model cannot even be built; otherwise the measured count wins
    row = AblationRow(variant, seed, cfg.midlay_label, cfg.residual, cfg.placement.value,
                      closed["adapters"] + closed["decoder"])
    t0 = time.perf_counter()
    try:
        model = build_model(run, variant, seed)
        row.trainable = count_params(model).trainable
        result = train(model, train_set, val_set, run.train_config(seed))
        row.metrics = result.history[-1].val
    except Exception as exc:  # the sweep records the failure and moves on
        row.error = f"{type(exc).__name__}: {exc}"
    row.seconds = time.perf_counter() - t0
    return row


def _sort_key(row: AblationRow) -> tuple[int, int]:
    return VARIANT_NAMES.index(row.variant), row.seed


def run_ablation(run: RunConfig, variants: Sequence[str] = VARIANT_NAMES, seeds: Sequence[int] = (7,),
                 jobs: int = 1, on_row: Optional[Callable[[AblationRow], None]] = None) -> list[AblationRow]:
    """Train and validate every (variant, seed) pair; rows come back in grid order."""
    train_set, val_set = load_splits(run)
    tasks = [(v, s) for v in sorted(set(variants), key=VARIANT_NAMES.index) for s in seeds]
    rows = []
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = [pool.submit(run_variant, run, v, s, train_set, val_set) for v, s in tasks]
            for fut in futures:
                rows.append(fut.result())
                if on_row:
                    on_row(rows[-1])
    else:
        for v, s in tasks:
            rows.append(run_variant(run, v, s, train_set, val_set))
            if on_row:
                on_row(rows[-1])
    return sorted(rows, key=_sort_key)


def ablation_csv(rows: Sequence[AblationRow]) -> str:
    """Per-run rows. Wall time is left out so reruns compare byte for byte."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(ABLATION_COLUMNS)
    for r in rows:
        metrics = [repr(v) for v in r.metrics.csv_values()] if r.metrics else [""] * len(MetricsReport.CSV_HEADER)
        w.writerow([r.variant, r.seed, r.midlays, "yes" if r.residual else "no", r.placement, *metrics,
                    r.trainable, "ok" if r.ok else r.error])
    return buf.getvalue()


def ablation_table(rows: Sequence[AblationRow]) -> str:
    """Aligned summary, one line per variant: metrics averaged over successful seeds, in percent."""
    header = ("Model", "MidLay", "Residual", "Placement",
              *(f"{h}(%)" for h in MetricsReport.CSV_HEADER), "Trainable", "Seeds", "Time(s)")
    body = []
    for name in sorted({r.variant for r in rows}, key=VARIANT_NAMES.index):
        group = [r for r in rows if r.variant == name]
        good = [r.metrics.csv_values() for r in group if r.ok]
        means = np.mean(good, axis=0) * 100 if good else [float("nan")] * len(MetricsReport.CSV_HEADER)
        head = group[0]
        body.append((name, head.midlays, "yes" if head.residual else "no", head.placement,
                     *(f"{v:.2f}" for v in means), str(head.trainable), f"{len(good)}/{len(group)}",
                     f"{sum(r.seconds for r in group):.1f}"))
    widths = [max(len(r[i]) for r in [header, *body]) for i in range(len(header))]
    return "\n".join("  ".join(c.ljust(w) if i < 4 else c.rjust(w) for i, (c, w) in enumerate(zip(r, widths)))
                     for r in [header, *body])
