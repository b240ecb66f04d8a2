"""Experiment orchestration: train methods, verify test properties, tabulate metrics."""
from __future__ import annotations

import csv
import io
import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .attacks import pgd_accuracy
from .bab import Budget, RobustnessProperty, VerifierConfig, bab_verify, encode_property
from .bounds import stable_percent
from .data import Dataset, gen_synthetic, load_mnist_idx, load_model, save_model
from .network import Network, mlp
from .training import Phase, TrainConfig, accuracy, train, write_history_csv

log = logging.getLogger(__name__)

CSV_COLUMNS = ("method", "radius", "test_acc", "unsat_pct", "stable_pct", "time_mean_s",
               "time_ut_mean_s", "pgd100_acc", "branches_mean", "n_props")

MNIST_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("test-images-idx3-ubyte", "test-labels-idx1-ubyte"),
}


def _phases(spec) -> list:
    return [p if isinstance(p, Phase) else Phase(**p) for p in spec]


@dataclass
class ExperimentConfig:
    """Everything needed to reproduce one metrics table.

    ``dataset`` is ``{"kind": "mnist", "root": ..., "train_per_class": n}`` or
    ``{"kind": "blobs" | "moons", "n": ..., "n_test": ..., "noise": ...}``.
    ``methods`` maps a method name to its phase schedule; ``models`` optionally
    maps a method name to a saved model file, which is loaded instead of trained.
    """

    dataset: dict = field(default_factory=lambda: {"kind": "mnist", "root": "data/mnist5k",
                                                   "train_per_class": 200})
    arch: list = field(default_factory=lambda: [784, 64, 32, 10])
    train: TrainConfig = field(default_factory=TrainConfig)
    methods: dict = field(default_factory=lambda: {"ce": [Phase("ce", 30)],
                                                   "nbc": [Phase("nbc", 30)]})
    radii: list = field(default_factory=lambda: [0.1])
    budget: Budget = field(default_factory=lambda: Budget(branches=10))
    k: int = 5
    out: str = "runs/experiment"
    seed: int = 0
    pgd_steps: int = 100
    pgd_step_size: float | None = None  # None: 2.5 * radius / pgd_steps
    pgd_restarts: int = 1
    pgd_limit: int | None = None        # evaluate PGD on the first n test points only
    models: dict = field(default_factory=dict)
    jobs: int = 1

    def __post_init__(self):
        if isinstance(self.train, dict):
            self.train = TrainConfig.from_dict(self.train)
        if isinstance(self.budget, dict):
            self.budget = Budget(**self.budget)
        self.methods = {name: _phases(spec) for name, spec in self.methods.items()}
        self.radii = [float(r) for r in self.radii]
        self.validate()

    def validate(self) -> None:
        if not self.radii:
            raise ValueError("radius list is empty")
        if any(r < 0 for r in self.radii):
            raise ValueError("radii must be nonnegative")
        if self.k < 1:
            raise ValueError("k (properties per class) must be at least 1")
        if not self.methods and not self.models:
            raise ValueError("no methods configured")
        if self.jobs < 1:
            raise ValueError("jobs must be positive")
        if len(self.arch) < 2:
            raise ValueError("architecture needs an input and an output size")

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d["train"] = self.train.to_dict()
        d["budget"] = asdict(self.budget)
        d["methods"] = {n: [asdict(p) for p in ph] for n, ph in self.methods.items()}
        return json.loads(json.dumps(d))

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown ExperimentConfig fields: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def desk_mnist_config(seed: int = 0, out: str = "runs/desk-mnist", epochs: int = 30,
                      root: str = "data/mnist5k") -> ExperimentConfig:
    """MNIST subset, 784-64-32-10, CE / NBC / Madry / Madry-then-NBC at eps = 0.1."""
    half = epochs // 2
    return ExperimentConfig(
        dataset={"kind": "mnist", "root": root, "train_per_class": 200},
        arch=[784, 64, 32, 10],
        train=TrainConfig(epsilon=0.1, beta=1.0, seed=seed, epsilon_warmup=5),
        methods={"ce": [Phase("ce", epochs)], "nbc": [Phase("nbc", epochs)],
                 "madry": [Phase("madry", epochs)],
                 "madry-then-nbc": [Phase("madry", half), Phase("madry+nbc", epochs - half)]},
        radii=[0.1], budget=Budget(branches=10), k=5, out=out, seed=seed)


def synthetic_config(seed: int = 0, out: str = "runs/synthetic", epochs: int = 200) -> ExperimentConfig:
    """2-D blobs, 2-16-16-2, CE vs NBC over a radius ladder."""
    return ExperimentConfig(
        dataset={"kind": "blobs", "n": 200, "n_test": 200, "noise": 0.1},
        arch=[2, 16, 16, 2],
        train=TrainConfig(epsilon=0.1, beta=1.0, seed=seed, batch_size=32),
        methods={"ce": [Phase("ce", epochs)], "nbc": [Phase("nbc", epochs)]},
        radii=[0.1, 0.2, 0.3], budget=Budget(branches=200), k=10, out=out, seed=seed)


# -- data -------------------------------------------------------------------

def load_datasets(spec: dict, seed: int = 0) -> tuple[Dataset, Dataset]:
    kind = spec.get("kind", "mnist")
    if kind == "mnist":
        root = Path(spec.get("root", "data/mnist5k"))
        paths = {s: [root / f for f in names] for s, names in MNIST_FILES.items()}
        missing = [str(p) for ps in paths.values() for p in ps if not p.exists()]
        if missing:
            raise FileNotFoundError(f"MNIST IDX files missing ({', '.join(missing)}); "
                                    "run scripts/prepare_mnist.py first")
        train_ds = load_mnist_idx(*paths["train"], spec.get("train_per_class"), "train")
        test_ds = load_mnist_idx(*paths["test"], spec.get("test_per_class"), "test")
        return train_ds, test_ds
    if kind in ("blobs", "moons"):
        noise = spec.get("noise", 0.05)
        return (gen_synthetic(kind, spec.get("n", 200), noise, seed, "train"),
                gen_synthetic(kind, spec.get("n_test", spec.get("n", 200)), noise, seed, "test"))
    raise ValueError(f"unknown dataset kind {kind!r}")


def make_properties(test: Dataset, k: int, radius: float, domain=(0.0, 1.0)) -> list:
    """First ``k`` test points of every class, each as an L-inf ball property."""
    sel = test.per_class(k)
    return [encode_property(x.ravel(), radius, int(c), domain, test.n_classes)
            for x, c in zip(sel.inputs, sel.labels)]


# -- verification -----------------------------------------------------------

@dataclass
class PropertyResult:
    method: str
    radius: float
    index: int
    label: int
    status: str
    branches: int
    time_s: float
    stable_ratio: float | None = None


def _verify_task(args):
    net, prop, budget, vcfg = args
    t0 = time.perf_counter()
    verdict = bab_verify(net, prop, budget, vcfg)
    return verdict, round(time.perf_counter() - t0, 3)


def verify_all(net: Network, props: list, budget: Budget, vcfg: VerifierConfig, jobs: int = 1):
    """(verdict, seconds) for each property, in order; a pool of ``jobs`` workers when > 1."""
    tasks = [(net, p, budget, vcfg) for p in props]
    if jobs <= 1:
        return [_verify_task(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_verify_task, tasks))


# -- metrics ----------------------------------------------------------------

@dataclass
class MetricsRow:
    method: str
    radius: float
    test_acc: float
    unsat_pct: float
    stable_pct: float
    time_mean_s: float
    time_ut_mean_s: float
    pgd100_acc: float
    branches_mean: float
    n_props: int


def _mean(values) -> float:
    values = list(values)
    return float(np.mean(values)) if values else float("nan")


def summarize(method: str, radius: float, test_acc: float, stable_pct: float, pgd_acc: float,
              results: list) -> MetricsRow:
    n = len(results)
    unsat = sum(r.status == "UNSAT" for r in results)
    return MetricsRow(
        method=method, radius=radius, test_acc=test_acc,
        unsat_pct=100.0 * unsat / n if n else float("nan"),
        stable_pct=stable_pct,
        time_mean_s=_mean(r.time_s for r in results),
        time_ut_mean_s=_mean(r.time_s for r in results if r.status in ("UNSAT", "UNKNOWN")),
        pgd100_acc=pgd_acc,
        branches_mean=_mean(r.branches for r in results),
        n_props=n)


@dataclass
class MetricsReport:
    rows: list
    properties: list = field(default_factory=list)   # PropertyResult, every method x radius
    errors: list = field(default_factory=list)       # (method, stage, message)
    config: dict = field(default_factory=dict)

    def row(self, method: str, radius: float) -> MetricsRow:
        for r in self.rows:
            if r.method == method and math.isclose(r.radius, radius):
                return r
        raise KeyError((method, radius))

    def results(self, method: str, radius: float) -> list:
        return [p for p in self.properties if p.method == method and math.isclose(p.radius, radius)]

    def status_pct(self, method: str, radius: float) -> dict:
        res = self.results(method, radius)
        n = len(res) or 1
        return {s: 100.0 * sum(p.status == s for p in res) / n for s in ("UNSAT", "SAT", "UNKNOWN")}

    def median_branches(self, method: str, radius: float) -> float:
        return float(np.median([p.branches for p in self.results(method, radius)]))


def _fmt(v) -> str:
    if isinstance(v, float):
        return "nan" if math.isnan(v) else repr(v)
    return str(v)


def report_csv(report: MetricsReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in report.rows:
        w.writerow([_fmt(getattr(r, c)) for c in CSV_COLUMNS])
    return buf.getvalue()


def parse_metrics_csv(text: str) -> list:
    reader = csv.DictReader(io.StringIO(text))
    if tuple(reader.fieldnames or ()) != CSV_COLUMNS:
        raise ValueError(f"unexpected metrics columns {reader.fieldnames}")
    rows = []
    for d in reader:
        rows.append(MetricsRow(
            method=d["method"], n_props=int(d["n_props"]),
            **{c: float(d[c]) for c in CSV_COLUMNS if c not in ("method", "n_props")}))
    return rows


def read_metrics_csv(path) -> MetricsReport:
    return MetricsReport(parse_metrics_csv(Path(path).read_text()))


def report_render(report: MetricsReport) -> tuple[str, str]:
    """Fixed-width table (methods x radii) and the metrics CSV text."""
    if not report.rows:
        raise ValueError("empty report")
    head = ["method", "eps", "acc%", "UNSAT%", "Stable%", "Time(s)", "Time_U+T(s)", "PGD100%",
            "branches", "N"]
    lines = []
    for r in report.rows:
        lines.append([r.method, f"{r.radius:g}", f"{100 * r.test_acc:.1f}", f"{r.unsat_pct:.1f}",
                      f"{r.stable_pct:.1f}", f"{r.time_mean_s:.3f}", f"{r.time_ut_mean_s:.3f}",
                      f"{100 * r.pgd100_acc:.1f}", f"{r.branches_mean:.1f}", str(r.n_props)])
    widths = [max(len(h), *(len(l[i]) for l in lines)) for i, h in enumerate(head)]
    fmt = "  ".join(f"{{:<{w}}}" if i == 0 else f"{{:>{w}}}" for i, w in enumerate(widths))
    text = "\n".join([fmt.format(*head), fmt.format(*["-" * w for w in widths])]
                     + [fmt.format(*l) for l in lines]) + "\n"
    return text, report_csv(report)


def write_report(report: MetricsReport, out) -> None:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    text, csv_text = report_render(report)
    if report.errors:
        text += "\nerrors:\n" + "".join(f"  {m} [{s}]: {e}\n" for m, s, e in report.errors)
    (out / "report.txt").write_text(text)
    (out / "metrics.csv").write_text(csv_text)
    (out / "properties.json").write_text(json.dumps([asdict(p) for p in report.properties], indent=1))


# -- pipeline ---------------------------------------------------------------

def _nan_row(method: str, radius: float, n: int) -> MetricsRow:
    nan = float("nan")
    return MetricsRow(method, radius, nan, nan, nan, nan, nan, nan, nan, n)


def obtain_model(name: str, cfg: ExperimentConfig, train_ds: Dataset, test_ds: Dataset,
                 out: Path) -> Network:
    if name in cfg.models:
        return load_model(cfg.models[name])
    tcfg = replace(cfg.train, phases=cfg.methods[name], seed=cfg.seed)
    net0 = mlp(cfg.arch, cfg.seed)
    t0 = time.perf_counter()
    net, history = train(net0, train_ds, tcfg, test_ds)
    log.info("trained %s in %.1fs, test acc %.3f", name, time.perf_counter() - t0,
             history[-1]["test_acc"] if history else float("nan"))
    (out / "models").mkdir(parents=True, exist_ok=True)
    net = Network(net.layers, net.input_shape, {**net.meta, "method": name, "seed": cfg.seed})
    save_model(net, out / "models" / f"{name}.json")
    write_history_csv(history, out / "models" / f"{name}_history.csv")
    return net


def run_experiment(cfg: ExperimentConfig, write: bool = True) -> MetricsReport:
    """Train (or load) every method, verify k properties per class at each radius."""
    cfg.validate()
    out = Path(cfg.out)
    if write:
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=1))
    train_ds, test_ds = load_datasets(cfg.dataset, cfg.seed)
    vcfg = VerifierConfig(seed=cfg.seed)
    domain = cfg.train.domain
    props_by_radius = {r: make_properties(test_ds, cfg.k, r, domain) for r in cfg.radii}
    n_props = len(next(iter(props_by_radius.values())))
    x_test = test_ds.inputs.reshape(len(test_ds), -1)
    y_test = test_ds.labels
    if cfg.pgd_limit is not None:
        x_test, y_test = x_test[:cfg.pgd_limit], y_test[:cfg.pgd_limit]
    names = list(dict.fromkeys([*cfg.methods, *cfg.models]))
    report = MetricsReport([], config=cfg.to_dict())
    for name in names:
        try:
            net = obtain_model(name, cfg, train_ds, test_ds, out)
            acc = accuracy(net, test_ds)
        except Exception as exc:  # recorded; remaining methods still run
            log.exception("method %s failed during training", name)
            report.errors.append((name, "train", repr(exc)))
            report.rows.extend(_nan_row(name, r, n_props) for r in cfg.radii)
            continue
        for radius in cfg.radii:
            props = props_by_radius[radius]
            try:
                stable = stable_percent(net, props)
                step = cfg.pgd_step_size
                pgd = pgd_accuracy(net, x_test, y_test, radius, cfg.pgd_steps, step, domain,
                                   cfg.seed, cfg.pgd_restarts) if radius > 0 else acc
                outcomes = verify_all(net, props, cfg.budget, vcfg, cfg.jobs)
            except Exception as exc:
                log.exception("method %s failed at radius %g", name, radius)
                report.errors.append((name, f"radius {radius:g}", repr(exc)))
                report.rows.append(_nan_row(name, radius, n_props))
                continue
            results = []
            for i, (prop, (verdict, secs)) in enumerate(zip(props, outcomes)):
                results.append(PropertyResult(name, radius, i, prop.label, verdict.status,
                                              int(verdict.stats["branches_explored"]), secs,
                                              verdict.stats.get("stable_ratio_at_root")))
                if write:
                    vdir = out / "verdicts"
                    vdir.mkdir(exist_ok=True)
                    doc = {"method": name, "radius": radius, "index": i, "label": prop.label,
                           "time_s": secs, **verdict.to_json()}
                    (vdir / f"{name}_eps{radius:g}_{i:04d}.json").write_text(json.dumps(doc))
            report.properties.extend(results)
            report.rows.append(summarize(name, radius, acc, stable, pgd, results))
    if write:
        write_report(report, out)
    return report


# -- directional trial ------------------------------------------------------

def directional_trial(seed: int, root: str = "data/mnist5k", epochs: int = 30, eps: float = 0.1,
                      branch_budget: int = 10, betas=(0.0, 1.0, 3.0), pgd_limit: int | None = None,
                      progress=None) -> dict:
    """Desk MNIST trial behind the trend comparisons.

    Trains CE, NBC at every beta in ``betas``, Madry and Madry-then-NBC; records test
    accuracy and Stable% at ``eps`` for each, PGD-100 accuracy for CE and NBC
    (beta = 1), and per-property branch counts for CE and NBC (beta = 1).
    """
    cfg = desk_mnist_config(seed, root=root, epochs=epochs)
    train_ds, test_ds = load_datasets(cfg.dataset, seed)
    props = make_properties(test_ds, cfg.k, eps)
    base = replace(cfg.train, epsilon=eps, seed=seed)
    half = epochs // 2
    schedules = {"ce": ([Phase("ce", epochs)], None)}
    for b in betas:
        schedules[f"nbc_b{b:g}"] = ([Phase("nbc", epochs)], b)
    schedules["madry"] = ([Phase("madry", epochs)], None)
    schedules["madry-then-nbc"] = ([Phase("madry", half), Phase("madry+nbc", epochs - half)], 1.0)
    x_test = test_ds.inputs.reshape(len(test_ds), -1)[:pgd_limit]
    y_test = test_ds.labels[:pgd_limit]
    out = {}
    for name, (phases, beta) in schedules.items():
        tcfg = replace(base, phases=phases, beta=base.beta if beta is None else beta)
        t0 = time.perf_counter()
        net, _ = train(mlp(cfg.arch, seed), train_ds, tcfg, test_ds)
        row = {"test_acc": accuracy(net, test_ds), "stable_pct": stable_percent(net, props),
               "train_s": time.perf_counter() - t0}
        if name in ("ce", "nbc_b1"):
            row["pgd100_acc"] = pgd_accuracy(net, x_test, y_test, eps, 100, None, (0.0, 1.0), seed)
            outcomes = verify_all(net, props, Budget(branches=branch_budget), VerifierConfig(seed=seed))
            row["branches"] = [int(v.stats["branches_explored"]) for v, _ in outcomes]
            row["status"] = [v.status for v, _ in outcomes]
            row["times"] = [secs for _, secs in outcomes]
        out[name] = row
        if progress is not None:
            progress(name, row)
    return out
