"""Multi-seed comparison of experiment modes.

Besides the five training modes a suite accepts two ablation variants of the
coupled model: ``mt_c_dm`` (distribution matching only) and ``mt_c_sca``
(soft co-annotation only).
"""

from __future__ import annotations

import csv
import io
import logging
import os
from dataclasses import dataclass, replace

import numpy as np

from ..errors import CoupledMTLError, ConfigError
from ..metrics import METRIC_NAMES, TaskMetrics, metrics_rows, transfer_report, write_metrics_csv
from .config import MODES, ExperimentConfig
from .train import RunLog, TASKS, load_data, student_teacher_pipeline, train, write_run

log = logging.getLogger(__name__)

VARIANTS = {"mt_c_dm": 3, "mt_c_sca": 2}  # variant -> index of the lambda switched off
SUITE_MODES = MODES + tuple(VARIANTS)
SINGLE_TASK = {"cls": "st_cls", "att": "st_att"}
PRIMARY_METRIC = {"cls": "macro_f1", "att": "afa"}
TABLE_COLUMNS = ("mode", "task", "metric", "mean", "spread", "n_ok", "n_failed")


def mode_config(base: ExperimentConfig, mode: str, seed: int) -> ExperimentConfig:
    """The run configuration of one (mode, seed) cell.

    The synthetic data seed moves with the run seed so that seeds differ in
    data as well as in initialisation.
    """
    if mode not in SUITE_MODES:
        raise ConfigError(f"unknown suite mode {mode!r}; choose from {SUITE_MODES}")
    cfg = base.with_(seed=seed, run_id=f"{mode}_seed{seed}")
    if base.data.synth is not None:
        cfg = cfg.with_(data=replace(base.data, synth=replace(base.data.synth, seed=base.data.synth.seed + seed)))
    if mode in VARIANTS:
        lam = list(base.lambdas)
        lam[VARIANTS[mode]] = 0.0
        return cfg.with_(mode="mt_c", lambdas=tuple(lam))
    return cfg.with_(mode=mode)


@dataclass
class SuiteRun:
    mode: str
    seed: int
    metrics: dict | None = None   # task -> TaskMetrics, None when the run failed
    log: RunLog | None = None
    error: str = ""

    @property
    def ok(self):
        return self.metrics is not None


@dataclass
class SuiteResult:
    modes: tuple
    seeds: tuple
    runs: dict                    # (mode, seed) -> SuiteRun
    primary_metric: dict

    def values(self, mode, task, metric):
        """Per-seed values of one metric for the runs that finished."""
        out = []
        for s in self.seeds:
            run = self.runs.get((mode, s))
            if run is not None and run.ok and task in run.metrics:
                out.append(getattr(run.metrics[task], metric))
        return out

    def failures(self, mode):
        return [s for s in self.seeds if not self.runs[(mode, s)].ok]

    def table(self):
        """Rows of (mode, task, metric, mean, spread, n_ok, n_failed); the
        spread is the population standard deviation over seeds."""
        rows = []
        for mode in self.modes:
            n_failed = len(self.failures(mode))
            emitted = False
            for task in TASKS:
                for metric in METRIC_NAMES:
                    vals = self.values(mode, task, metric)
                    if vals:
                        rows.append((mode, task, metric, float(np.mean(vals)), float(np.std(vals)),
                                     len(vals), n_failed))
                        emitted = True
            if not emitted:
                rows.append((mode, "", "", float("nan"), float("nan"), 0, n_failed))
        return rows

    def mean_metrics(self, mode):
        out = {}
        for task in TASKS:
            means = [self.values(mode, task, m) for m in METRIC_NAMES]
            if all(means):
                out[task] = TaskMetrics(*(float(np.mean(v)) for v in means))
        return out

    def _single_task(self, metrics_of):
        st = {}
        for task, mode in SINGLE_TASK.items():
            m = metrics_of(mode)
            if m and task in m:
                st[task] = m[task]
        return st

    def transfer(self, mode, seed=None):
        """Transfer report of a multi-task mode against the single-task
        baselines, for one seed or (``seed=None``) on the seed means.
        Returns None when a needed run failed."""
        if seed is None:
            metrics_of = self.mean_metrics
        else:
            def metrics_of(m):
                run = self.runs.get((m, seed))
                return run.metrics if run is not None and run.ok else None
        mt = metrics_of(mode)
        st = self._single_task(metrics_of)
        if not mt or not st:
            return None
        return transfer_report(st, mt, self.primary_metric)

    def multi_task_modes(self):
        return [m for m in self.modes if m not in SINGLE_TASK.values()]

    def transfer_rows(self):
        rows = []
        for mode in self.multi_task_modes():
            for seed in list(self.seeds) + [None]:
                rep = self.transfer(mode, seed)
                label = "mean" if seed is None else str(seed)
                if rep is None:
                    rows.append((mode, label, "", "", "", "FAILED"))
                    continue
                for task, t in rep.tasks.items():
                    rows.append((mode, label, task, t.st_score, t.mt_score,
                                 "negative" if t.negative_transfer else "ok"))
        return rows

    def table_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(TABLE_COLUMNS)
        for r in self.table():
            w.writerow(list(r[:3]) + [repr(r[3]), repr(r[4])] + list(r[5:]))
        return buf.getvalue()

    def transfer_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("mode", "seed", "task", "st_score", "mt_score", "status"))
        for r in self.transfer_rows():
            w.writerow([x if isinstance(x, str) else repr(x) for x in r])
        return buf.getvalue()

    def metrics_csv(self):
        rows = []
        for (mode, seed), run in sorted(self.runs.items(), key=lambda kv: (self.modes.index(kv[0][0]), kv[0][1])):
            if run.ok:
                rows += list(metrics_rows(f"{mode}_seed{seed}", mode, seed, run.metrics))
        return write_metrics_csv(rows)

    def render(self):
        """Aligned text: one line per mode with mean ± spread of the
        primary metric of each task, then the per-mode transfer verdicts."""
        head = ["mode"] + [f"{t} {self.primary_metric[t]}" for t in TASKS] + ["failed"]
        lines = []
        for mode in self.modes:
            cells = [mode]
            for task in TASKS:
                vals = self.values(mode, task, self.primary_metric[task])
                cells.append(f"{np.mean(vals):.4f} ± {np.std(vals):.4f}" if vals else "-")
            failed = self.failures(mode)
            cells.append("FAILED " + ",".join(map(str, failed)) if failed else "")
            lines.append(cells)
        widths = [max(len(r[i]) for r in [head] + lines) for i in range(len(head))]
        fmt = lambda r: "  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip()  # noqa: E731
        out = [fmt(head), fmt(["-" * w for w in widths])] + [fmt(r) for r in lines]
        out.append("")
        for mode in self.multi_task_modes():
            per_seed = [self.transfer(mode, s) for s in self.seeds]
            flagged = sum(1 for r in per_seed if r is not None and r.negative_transfer)
            mean = self.transfer(mode)
            verdict = "n/a" if mean is None else (
                "negative transfer on " + ",".join(mean.flagged()) if mean.negative_transfer else "no negative transfer")
            out.append(f"{mode}: {verdict} (means); flagged in {flagged}/{len(self.seeds)} seeds")
        return "\n".join(out) + "\n"


def _ordered(modes):
    """Run single-task modes first so the student-teacher runs can reuse them."""
    return sorted(modes, key=lambda m: 0 if m in SINGLE_TASK.values() else 1)


def run_suite(base: ExperimentConfig, modes, n_seeds: int, out_dir=None,
              primary_metric=None) -> SuiteResult:
    """Train every mode for seeds ``base.seed .. base.seed + n_seeds - 1``.

    A run that raises a package error is recorded as failed and the suite
    carries on.  With ``out_dir`` each run's log, metrics and checkpoint go to
    ``out_dir/<mode>_seed<k>/`` and the tables to ``out_dir`` itself.
    """
    if n_seeds < 1:
        raise ConfigError("n_seeds must be >= 1")
    modes = tuple(dict.fromkeys(modes))
    if not modes:
        raise ConfigError("no modes given")
    for m in modes:
        if m not in SUITE_MODES:
            raise ConfigError(f"unknown suite mode {m!r}; choose from {SUITE_MODES}")
    seeds = tuple(range(base.seed, base.seed + n_seeds))
    runs = {}
    for seed in seeds:
        data = None
        trained = {}
        for mode in _ordered(modes):
            cfg = mode_config(base, mode, seed)
            try:
                if data is None:
                    data = load_data(cfg)
                if mode == "st_teacher_mt":
                    teachers = None
                    if "st_cls" in trained and "st_att" in trained:
                        teachers = (trained["st_cls"].params, trained["st_att"].params)
                    result = student_teacher_pipeline(cfg, data, teachers)
                else:
                    result = train(cfg, data)
            except CoupledMTLError as exc:
                log.warning("run %s failed: %s", cfg.name(), exc)
                runs[(mode, seed)] = SuiteRun(mode, seed, error=f"{exc.kind}: {exc}")
                continue
            trained[mode] = result
            runs[(mode, seed)] = SuiteRun(mode, seed, result.metrics, result.log)
            if out_dir is not None:
                write_run(result, os.path.join(out_dir, cfg.name()))
    result = SuiteResult(modes, seeds, runs, dict(primary_metric or PRIMARY_METRIC))
    if out_dir is not None:
        write_suite(result, out_dir)
    return result


def write_suite(result: SuiteResult, out_dir):
    os.makedirs(out_dir, exist_ok=True)
    files = {
        "table.csv": result.table_csv(),
        "table.txt": result.render(),
        "transfer.csv": result.transfer_csv(),
        "metrics.csv": result.metrics_csv(),
    }
    failures = [f"{r.mode}_seed{r.seed}: {r.error}" for r in result.runs.values() if not r.ok]
    if failures:
        files["failures.txt"] = "\n".join(failures) + "\n"
    for name, text in files.items():
        with open(os.path.join(out_dir, name), "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
