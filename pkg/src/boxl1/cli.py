"""Command-line entry point.

Commands: attack (per-example results + loss/accuracy-vs-iteration curves),
eval (ensemble and per-attack robust accuracy tables), train (adversarial
training plus the overfitting probe), verify (oracle suites), sparsity
(expected-sparsity table), bench (projection timing per kernel backend).

Every run writes its fully resolved configuration next to its outputs, and
examples are dispatched to a worker pool with per-example seeds derived from
hash(global_seed, example_id), so outputs are identical regardless of thread
count. Exit codes: 0 ok, 1 config error, 2 I/O error, 3 invariant violation
or oracle mismatch.
"""

import argparse
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import fileio, geometry, kernels, models, oracles
from .advtrain import AtConfig, adv_train, overfitting_probe
from .apgd import ApgdConfig, apgd_multi, apgd_restarts, apgd_single
from .ensemble import EnsembleConfig, autoattack, slide_attack, worst_case_merge
from .errors import InvariantViolationError, ParameterError
from .geometry import ThreatModel
from .squareattack import SquareConfig, square_attack

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_IO = 2
EXIT_INVARIANT = 3

PER_EXAMPLE_HEADER = ["example_id", "success", "loss_best", "l1_norm", "iterations_used"]
CURVE_HEADER = ["iter", "mean_best_loss", "robust_accuracy"]
REPORT_HEADER = ["example_id", "clean_correct", "robust", "stage_broken", "best_loss", "l1_norm"]
PROBE_HEADER = ["epoch", "split", "attack", "robust_accuracy"]

ATTACK_KINDS = ("apgd-single", "apgd-multi", "slide", "slide-exact", "square")

_KNOWN_KEYS = {
    "attack": {
        "kind", "eps", "iters", "queries", "restarts", "seed", "out", "threads",
        "n_points", "dataset", "dataset_inputs", "dataset_labels", "num_classes",
        "model", "model_path", "k", "image_h", "image_c", "early_stop",
    },
    "eval": {
        "eps", "iters", "queries", "restarts", "seed", "out", "threads",
        "n_points", "dataset", "dataset_inputs", "dataset_labels", "num_classes",
        "model", "model_path", "attacks", "image_h", "image_c",
    },
    "train": {
        "eps_train", "inner_steps", "k0", "epochs", "lr", "batch_size", "seed",
        "out", "d", "n", "num_classes", "margin", "arch", "hidden",
        "probe_every", "probe_points", "probe_eps", "probe_iters",
    },
    "verify": {"seed", "instances", "d_max", "mc_samples", "inject_bug", "out"},
    "sparsity": {"eps", "d", "mc_samples", "seed", "out"},
    "bench": {"dims", "reps", "eps", "seed", "out"},
}


def example_rng(global_seed, example_id):
    """Deterministic per-example generator: hash(global_seed, example_id)."""
    return np.random.default_rng(
        np.random.SeedSequence(entropy=int(global_seed), spawn_key=(int(example_id),))
    )


def _run_indexed(fn, n, threads):
    """Run fn(i) for i in range(n); results ordered by index."""
    if threads <= 1:
        return [fn(i) for i in range(n)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, range(n)))


def _resolve(args, command, defaults):
    """defaults <- config file <- command-line flags."""
    opts = dict(defaults)
    if args.config:
        opts.update(fileio.parse_config(args.config, command, _KNOWN_KEYS[command]))
    for key in defaults:
        flag = getattr(args, key, None)
        if flag is not None:
            opts[key] = flag
    return opts


def _as_bool(v):
    if isinstance(v, bool):
        return v
    return str(v).lower() in ("1", "true", "yes", "on")


def _load_dataset(opts, rng):
    kind = opts["dataset"]
    n = int(opts["n_points"])
    if opts.get("dataset_inputs"):
        return fileio.load_dataset(
            opts["dataset_inputs"], opts["dataset_labels"], int(opts["num_classes"])
        ), None
    if kind == "toy-cifar":
        data = models.make_blobs(192, n, 10, 24.0, rng)
        return data, (8, 8, 3)
    if kind == "blobs":
        return models.make_blobs(32, n, 2, 20.0, rng), None
    raise ParameterError(f"unknown dataset {kind!r} (toy-cifar, blobs, or file paths)")


def _load_model(opts, data, rng):
    if opts.get("model_path"):
        return fileio.load_model(opts["model_path"])
    kind = opts["model"]
    d = data.inputs.shape[1]
    if kind == "builtin-linear":
        model = models.LinearSoftmaxModel.initialized(d, data.num_classes, rng)
        return models.train_plain(model, data, epochs=30, lr=1.0, rng=rng)
    if kind == "builtin-mlp":
        model = models.MlpModel.initialized((d, 64, data.num_classes), rng)
        return models.train_plain(model, data, epochs=30, lr=0.3, rng=rng)
    raise ParameterError(f"unknown model {kind!r} (builtin-linear, builtin-mlp, or model_path)")


def _image_shape(opts, data, synth_shape):
    if opts.get("image_h"):
        h = int(opts["image_h"])
        c = int(opts["image_c"])
        if h * h * c != data.inputs.shape[1]:
            raise ParameterError("image_h/image_c do not match the input dimension")
        return (h, h, c)
    return synth_shape


def _per_iteration_series(res, clean_broken):
    """Best-loss-so-far and broken flags per update step (phase-aware)."""
    starts = list(res.phase_starts) + [len(res.loss_trace)]
    n_phases = len(res.phase_starts)
    losses, broken = [], []
    cur_broken = clean_broken
    for p in range(n_phases):
        seg_l = res.loss_trace[starts[p] : starts[p + 1]]
        seg_m = res.margin_trace[starts[p] : starts[p + 1]]
        final = p == n_phases - 1
        run = seg_l[0]
        if final and seg_m[0] <= 0.0:
            cur_broken = True
        for j in range(1, len(seg_l)):
            run = max(run, seg_l[j])
            if final and seg_m[j] <= 0.0:
                cur_broken = True
            losses.append(run)
            broken.append(cur_broken)
    return losses, broken


def _curve_rows(series, n_rows):
    """Aggregate per-example series into (iter, mean_best_loss, robust_acc)."""
    rows = []
    for it in range(n_rows):
        vals, rob = [], []
        for losses, broken in series:
            j = min(it, len(losses) - 1)
            vals.append(losses[j])
            rob.append(not broken[j])
        rows.append([it + 1, f"{np.mean(vals):.10g}", f"{np.mean(rob):.10g}"])
    return rows


def _write_attack_outputs(out_dir, results, series, n_rows, opts):
    per_example = [
        [i, int(r.success), f"{r.loss_best:.10g}", f"{r.l1_norm:.10g}", r.iterations_used]
        for i, r in enumerate(results)
    ]
    fileio.write_csv(out_dir / "per_example.csv", PER_EXAMPLE_HEADER, per_example)
    fileio.write_csv(out_dir / "curve.csv", CURVE_HEADER, _curve_rows(series, n_rows))
    fileio.write_resolved_config(out_dir, "attack", opts)


def cmd_attack(args):
    defaults = {
        "kind": "apgd-multi", "eps": 12.0, "iters": 100, "queries": 5000,
        "restarts": 1, "seed": 0, "out": "attack_out", "threads": None,
        "n_points": 64, "dataset": "toy-cifar", "dataset_inputs": None,
        "dataset_labels": None, "num_classes": 10, "model": "builtin-mlp",
        "model_path": None, "k": 0.01, "image_h": None, "image_c": None,
        "early_stop": False,
    }
    opts = _resolve(args, "attack", defaults)
    kind = opts["kind"]
    if kind not in ATTACK_KINDS:
        raise ParameterError(f"unknown attack kind {kind!r}; choose from {ATTACK_KINDS}")
    eps = float(opts["eps"])
    n_iter = int(opts["iters"])
    seed = int(opts["seed"])
    threads = _threads(opts)
    early_stop = _as_bool(opts["early_stop"])
    out_dir = Path(opts["out"])
    out_dir.mkdir(parents=True, exist_ok=True)

    data_rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(0xD47A,)))
    data, synth_shape = _load_dataset(opts, data_rng)
    model = _load_model(opts, data, np.random.default_rng(
        np.random.SeedSequence(entropy=seed, spawn_key=(0x30DE1,))))

    if eps == 0.0:
        # The threat set degenerates to {x}: report the clean statistics.
        rows, series = [], []
        for i in range(len(data)):
            logits = model.logits(data.inputs[i])
            y = int(data.labels[i])
            correct = models.classifies_correctly(logits, y)
            loss = models.cross_entropy(logits, y)
            rows.append(type("R", (), {
                "success": not correct, "loss_best": loss, "l1_norm": 0.0,
                "iterations_used": 0})())
            series.append(([loss], [not correct]))
        _write_attack_outputs(out_dir, rows, series, max(n_iter, 1), opts)
        print(f"eps=0: clean accuracy {np.mean([not r.success for r in rows]):.4f}")
        return EXIT_OK

    shape = _image_shape(opts, data, synth_shape)
    if kind == "square" and shape is None:
        raise ParameterError("square needs image_h/image_c (or the toy-cifar dataset)")
    n_rows = int(opts["queries"]) if kind == "square" else n_iter

    restarts = int(opts["restarts"])

    def job(i):
        rng = example_rng(seed, i)
        x = data.inputs[i]
        y = int(data.labels[i])
        if kind == "apgd-single":
            cfg = ApgdConfig(n_iter=n_iter, phases=(), early_stop=early_stop)
            if restarts > 1:
                return apgd_restarts(model, "ce", x, y, eps, cfg, restarts, rng)
            return apgd_single(model, "ce", None, x, y, ThreatModel(x, eps), cfg, rng=rng)
        if kind == "apgd-multi":
            cfg = ApgdConfig(n_iter=n_iter, early_stop=early_stop)
            if restarts > 1:
                return apgd_restarts(model, "ce", x, y, eps, cfg, restarts, rng)
            return apgd_multi(model, "ce", None, x, y, eps, cfg, rng=rng)
        if kind in ("slide", "slide-exact"):
            return slide_attack(
                model, x, y, eps, k=float(opts["k"]), n_iter=n_iter,
                use_exact_projection=(kind == "slide-exact"),
                early_stop=early_stop, rng=rng,
            )
        return square_attack(
            model, x.reshape(shape), y, eps,
            SquareConfig(n_queries=int(opts["queries"])), rng,
        )

    results = _run_indexed(job, len(data), threads)

    series = []
    for i, res in enumerate(results):
        x_adv = np.asarray(res.x_adv).reshape(-1)
        tm = ThreatModel(data.inputs[i], eps)
        if not tm.contains(x_adv):
            raise InvariantViolationError(f"example {i}: infeasible adversarial point")
        clean_broken = not models.classifies_correctly(
            model.logits(data.inputs[i]), int(data.labels[i])
        )
        if kind == "square":
            trace = res.margin_trace
            losses = trace[1:] or [trace[0]]
            broken = [clean_broken or m <= 0.0 for m in losses]
            series.append((losses, broken))
        else:
            series.append(_per_iteration_series(res, clean_broken))
    _write_attack_outputs(out_dir, results, series, n_rows, opts)
    robust = np.mean([not r.success for r in results])
    print(f"{kind}: {len(data)} points, eps={eps}: robust accuracy {robust:.4f}")
    print(f"wrote {out_dir / 'per_example.csv'} and {out_dir / 'curve.csv'}")
    return EXIT_OK


def _report_rows(report):
    return [
        [r.example_id, int(r.clean_correct), int(r.robust), r.stage_broken or "",
         f"{r.best_loss:.10g}", f"{r.l1_used:.10g}"]
        for r in report.per_example
    ]


def _single_attack_report(model, data, eps, attack_fn, name, seed, threads):
    from .ensemble import EvalReport, ExampleOutcome

    def job(i):
        x = data.inputs[i]
        y = int(data.labels[i])
        logits = model.logits(x)
        if not models.classifies_correctly(logits, y):
            return ExampleOutcome(i, False, False, "clean",
                                  models.cross_entropy(logits, y), 0.0)
        res = attack_fn(x, y, example_rng(seed, i))
        broken = res.success
        return ExampleOutcome(i, True, not broken, name if broken else None,
                              res.loss_best, res.l1_norm)

    rows = _run_indexed(job, len(data), threads)
    return EvalReport(
        per_example=rows,
        clean_accuracy=float(np.mean([r.clean_correct for r in rows])),
        robust_accuracy=float(np.mean([r.robust for r in rows])),
    )


def cmd_eval(args):
    defaults = {
        "eps": 12.0, "iters": 100, "queries": 5000, "restarts": 5, "seed": 0,
        "out": "eval_out", "threads": None, "n_points": 32,
        "dataset": "toy-cifar", "dataset_inputs": None, "dataset_labels": None,
        "num_classes": 10, "model": "builtin-mlp", "model_path": None,
        "attacks": "autoattack,apgd-ce,slide,square", "image_h": None, "image_c": None,
    }
    opts = _resolve(args, "eval", defaults)
    eps = float(opts["eps"])
    seed = int(opts["seed"])
    threads = _threads(opts)
    n_iter = int(opts["iters"])
    queries = int(opts["queries"])
    restarts = int(opts["restarts"])
    out_dir = Path(opts["out"])
    out_dir.mkdir(parents=True, exist_ok=True)

    data_rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(0xD47A,)))
    data, synth_shape = _load_dataset(opts, data_rng)
    model = _load_model(opts, data, np.random.default_rng(
        np.random.SeedSequence(entropy=seed, spawn_key=(0x30DE1,))))
    shape = _image_shape(opts, data, synth_shape)

    requested = [a.strip() for a in str(opts["attacks"]).split(",") if a.strip()]
    clean_acc = models.accuracy(model, data)
    summary = [["clean", f"{clean_acc:.10g}", f"{clean_acc:.10g}"]]
    if eps == 0.0:
        # degenerate threat set {x}: every attack's robust accuracy is clean
        from .ensemble import EvalReport, ExampleOutcome

        rows = []
        for i in range(len(data)):
            logits = model.logits(data.inputs[i])
            y = int(data.labels[i])
            correct = models.classifies_correctly(logits, y)
            rows.append(ExampleOutcome(i, correct, correct,
                                       None if correct else "clean",
                                       models.cross_entropy(logits, y), 0.0))
        report = EvalReport(rows, clean_acc, clean_acc)
        for name in requested:
            fileio.write_csv(out_dir / f"report_{name}.csv", REPORT_HEADER,
                             _report_rows(report))
            summary.append([name, f"{clean_acc:.10g}", f"{clean_acc:.10g}"])
        fileio.write_csv(out_dir / "summary.csv",
                         ["attack", "clean_accuracy", "robust_accuracy"], summary)
        fileio.write_resolved_config(out_dir, "eval", opts)
        print(f"eps=0: robust accuracy equals clean accuracy {clean_acc:.4f}")
        return EXIT_OK
    mergeable = []
    for name in requested:
        if name == "autoattack":
            cfg = EnsembleConfig(
                ce_restarts=restarts, ce_iters=n_iter,
                tdlr_restarts=restarts, tdlr_iters=n_iter,
                square_queries=queries, include_square=shape is not None,
            )
            report = autoattack(model, data, eps, cfg,
                                example_rng(seed, 0xAA), image_shape=shape)
        elif name == "apgd-ce":
            report = _single_attack_report(
                model, data, eps,
                lambda x, y, rng: apgd_restarts(
                    model, "ce", x, y, eps,
                    ApgdConfig(n_iter=n_iter, early_stop=True), restarts, rng),
                name, seed, threads)
        elif name == "apgd-tdlr":
            report = _single_attack_report(
                model, data, eps,
                lambda x, y, rng: apgd_restarts(
                    model, "dlr-t", x, y, eps,
                    ApgdConfig(n_iter=n_iter, early_stop=True), restarts, rng),
                name, seed, threads)
        elif name in ("slide", "slide-exact"):
            report = _single_attack_report(
                model, data, eps,
                lambda x, y, rng: slide_attack(
                    model, x, y, eps, n_iter=n_iter,
                    use_exact_projection=(name == "slide-exact"),
                    early_stop=True, rng=rng),
                name, seed, threads)
        elif name == "square":
            if shape is None:
                raise ParameterError("square needs image_h/image_c")
            report = _single_attack_report(
                model, data, eps,
                lambda x, y, rng: square_attack(
                    model, x.reshape(shape), y, eps,
                    SquareConfig(n_queries=queries), rng),
                name, seed, threads)
        else:
            raise ParameterError(f"unknown attack {name!r} in attacks list")
        fileio.write_csv(out_dir / f"report_{name}.csv", REPORT_HEADER, _report_rows(report))
        summary.append([name, f"{report.clean_accuracy:.10g}", f"{report.robust_accuracy:.10g}"])
        if name != "autoattack":
            mergeable.append(report)
    if len(mergeable) >= 2:
        wc = worst_case_merge(mergeable)
        fileio.write_csv(out_dir / "report_wc.csv", REPORT_HEADER, _report_rows(wc))
        summary.append(["wc", f"{wc.clean_accuracy:.10g}", f"{wc.robust_accuracy:.10g}"])
    fileio.write_csv(out_dir / "summary.csv",
                     ["attack", "clean_accuracy", "robust_accuracy"], summary)
    fileio.write_resolved_config(out_dir, "eval", opts)
    for row in summary:
        print(f"{row[0]:>12}: clean {row[1]}, robust {row[2]}")
    return EXIT_OK


def cmd_train(args):
    defaults = {
        "eps_train": 4.0, "inner_steps": 10, "k0": 0.05, "epochs": 10,
        "lr": 0.5, "batch_size": 32, "seed": 0, "out": "train_out",
        "d": 32, "n": 512, "num_classes": 2, "margin": 20.0,
        "arch": "mlp", "hidden": 32,
        "probe_every": 1, "probe_points": 64, "probe_eps": None, "probe_iters": 100,
    }
    opts = _resolve(args, "train", defaults)
    seed = int(opts["seed"])
    out_dir = Path(opts["out"])
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(0x7A01,)))
    d, n = int(opts["d"]), int(opts["n"])
    num_classes = int(opts["num_classes"])
    train_data = models.make_blobs(d, n, num_classes, float(opts["margin"]), rng)
    test_data = models.make_blobs(d, max(n // 4, num_classes), num_classes,
                                  float(opts["margin"]), rng)
    if opts["arch"] == "linear":
        model = models.LinearSoftmaxModel.initialized(d, num_classes, rng)
    elif opts["arch"] == "mlp":
        model = models.MlpModel.initialized((d, int(opts["hidden"]), num_classes), rng)
    else:
        raise ParameterError(f"unknown arch {opts['arch']!r}")
    cfg = AtConfig(
        eps_train=float(opts["eps_train"]), inner_steps=int(opts["inner_steps"]),
        k0=float(opts["k0"]), epochs=int(opts["epochs"]), lr=float(opts["lr"]),
        batch_size=int(opts["batch_size"]), seed=seed,
    )
    snapshots = []
    adv_train(model, train_data, cfg, rng, snapshots=snapshots)
    fileio.save_model(out_dir / "model.bxl1m", model)
    probe_eps = float(opts["probe_eps"]) if opts["probe_eps"] is not None else cfg.eps_train
    k = int(opts["probe_points"])
    probe_train = models.LabeledDataset(train_data.inputs[:k], train_data.labels[:k],
                                        num_classes)
    probe_test = models.LabeledDataset(test_data.inputs[:k], test_data.labels[:k],
                                       num_classes)
    if probe_eps > 0.0:
        rows = overfitting_probe(
            snapshots, probe_train, probe_test, probe_eps,
            example_rng(seed, 0xBE),
            probe_every=int(opts["probe_every"]),
            inner_steps=cfg.inner_steps, k0=cfg.k0,
            eval_iters=int(opts["probe_iters"]),
        )
    else:
        rows = []
    fileio.write_csv(out_dir / "probe.csv", PROBE_HEADER,
                     [[e, s, a, f"{acc:.10g}"] for e, s, a, acc in rows])
    fileio.save_dataset(out_dir, "train", train_data)
    fileio.save_dataset(out_dir, "test", test_data)
    fileio.write_resolved_config(out_dir, "train", opts)
    print(f"trained {opts['arch']} for {cfg.epochs} epochs at eps_train={cfg.eps_train}")
    print(f"clean train accuracy {models.accuracy(model, train_data):.4f}, "
          f"test {models.accuracy(model, test_data):.4f}")
    print(f"wrote {out_dir / 'model.bxl1m'} and {out_dir / 'probe.csv'}")
    return EXIT_OK


def cmd_verify(args):
    defaults = {"seed": 0, "instances": 2000, "d_max": 64, "mc_samples": 20000,
                "inject_bug": False, "out": None}
    opts = _resolve(args, "verify", defaults)
    seed = int(opts["seed"])
    instances = int(opts["instances"])
    d_max = int(opts["d_max"])
    mc_samples = int(opts["mc_samples"])
    if _as_bool(opts["inject_bug"]):
        geometry.set_lambda_debug_offset(1e-3)
    rng = np.random.default_rng(seed)
    failures = []
    lines = []

    def suite(name, passed, detail):
        status = "PASS" if passed else "FAIL"
        lines.append(f"[{status}] {name}: {detail}")
        if not passed:
            failures.append(name)

    try:
        # projection vs Dykstra + lemma inequality
        worst = 0.0
        lemma_viol = 0
        strict = 0
        eligible = 0
        converged = 0
        for i in range(instances):
            d = int(rng.integers(1, d_max + 1))
            x = rng.random(d)
            eps = float(rng.choice([0.1, 1.0, 12.0]))
            u = x + rng.normal(0.0, 1.0, d) if i % 2 else rng.uniform(-1.0, 2.0, d)
            tm = ThreatModel(x, eps)
            z = geometry.project_box_l1(u, tm)
            rep = oracles.dykstra_project(u, tm, tol=1e-9, max_iter=3000)
            if rep.residual < 1e-8:
                converged += 1
                worst = max(worst, float(np.max(np.abs(z - rep.value))))
            za = geometry.approx_project(u, tm)
            ps = float(np.abs(z - x).sum())
            pa = float(np.abs(za - x).sum())
            if ps < pa - 1e-9:
                lemma_viol += 1
            z1 = geometry.project_l1_ball(u, x, eps)
            if (z1.min() < 0 or z1.max() > 1) and np.abs(u - x).sum() > eps:
                eligible += 1
                if ps > pa + 1e-12:
                    strict += 1
        suite("projection-vs-dykstra", worst <= 1e-6 and converged > 0,
              f"{converged}/{instances} converged, worst |Ps - dykstra|_inf = {worst:.3g}")
        suite("lemma-inequality", lemma_viol == 0,
              f"{lemma_viol} violations; strict on {strict}/{max(eligible,1)} eligible")

        # steepest-descent dominance
        viol = 0
        for _ in range(max(instances // 10, 50)):
            d = int(rng.integers(1, 17))
            x = rng.random(d)
            eps = float(rng.choice([0.1, 1.0, 4.0]))
            w = rng.standard_normal(d)
            tm = ThreatModel(x, eps)
            step = geometry.steepest_descent_direction(w, tm)
            cand = oracles.sample_feasible_batch(tm, 2000, rng) - x
            if float((cand @ w).max()) > step.inner_product + 1e-9:
                viol += 1
        suite("steepest-dominance", viol == 0, f"{viol} dominated instances")

        # expected sparsity: closed form vs identity vs Monte Carlo
        closed = geometry.expected_sparsity_closed_form(12, 3024)
        ident = geometry.expected_sparsity_irwin_hall(12, 3024)
        mean, stderr = oracles.monte_carlo_sparsity(12, 3024, mc_samples, rng)
        ok = (
            abs(closed - 24.6667) <= 0.01
            and abs(closed - ident) <= 1e-9
            and abs(mean - closed) <= 4 * stderr
            and closed >= geometry.sparsity_lower_bound(12)
        )
        suite("expected-sparsity", ok,
              f"closed {closed:.6f} vs 24.6667, identity gap {abs(closed-ident):.2e}, "
              f"MC {mean:.4f} +/- {stderr:.4f}")

        # gradient checks
        gerr = 0.0
        mdl_rng = np.random.default_rng(seed + 1)
        lin = models.LinearSoftmaxModel.initialized(12, 5, mdl_rng)
        mlp = models.MlpModel.initialized((12, 16, 5), mdl_rng)
        for model in (lin, mlp):
            for kind in models.LOSS_KINDS:
                for _ in range(20):
                    x = mdl_rng.random(12)
                    y = int(mdl_rng.integers(0, 5))
                    target = int((y + 1) % 5) if kind == "dlr-t" else None
                    _, ga = models.loss_and_grad(model, x, y, kind, target)
                    gn = models.finite_diff_grad(model, x, y, kind, target=target)
                    denom = max(np.linalg.norm(gn), 1e-12)
                    gerr = max(gerr, float(np.linalg.norm(ga - gn) / denom))
        suite("gradient-checks", gerr <= 1e-5, f"worst relative l2 error {gerr:.3g}")
    except (ParameterError, InvariantViolationError) as exc:
        suite("setup", False, str(exc))

    geometry.set_lambda_debug_offset(0.0)
    report = "\n".join(lines)
    print(report)
    if opts["out"]:
        Path(opts["out"]).mkdir(parents=True, exist_ok=True)
        (Path(opts["out"]) / "verify.txt").write_text(report + "\n")
        fileio.write_resolved_config(opts["out"], "verify", opts)
    if failures:
        print(f"FAILED: {', '.join(failures)}")
        return EXIT_INVARIANT
    print("all oracle suites passed")
    return EXIT_OK


def cmd_sparsity(args):
    defaults = {"eps": "1,2,4,8,12", "d": 3024, "mc_samples": 0, "seed": 0, "out": None}
    opts = _resolve(args, "sparsity", defaults)
    d = int(opts["d"])
    mc = int(opts["mc_samples"])
    rng = np.random.default_rng(int(opts["seed"]))
    header = ["eps", "d", "expected_sparsity", "irwin_hall_identity", "lower_bound"]
    if mc:
        header += ["mc_mean", "mc_stderr"]
    rows = []
    for tok in str(opts["eps"]).split(","):
        eps = float(tok)
        closed = geometry.expected_sparsity_closed_form(eps, d)
        ident = geometry.expected_sparsity_irwin_hall(eps, d)
        row = [f"{eps:g}", d, f"{closed:.6f}", f"{ident:.6f}",
               f"{geometry.sparsity_lower_bound(eps):g}"]
        if mc:
            mean, stderr = oracles.monte_carlo_sparsity(eps, d, mc, rng)
            row += [f"{mean:.6f}", f"{stderr:.6f}"]
        rows.append(row)
        print("  ".join(str(v) for v in row))
    if opts["out"]:
        Path(opts["out"]).mkdir(parents=True, exist_ok=True)
        fileio.write_csv(Path(opts["out"]) / "sparsity.csv", header, rows)
        fileio.write_resolved_config(opts["out"], "sparsity", opts)
    return EXIT_OK


def cmd_bench(args):
    defaults = {"dims": "1024,32768,1048576", "reps": 7, "eps": 12.0, "seed": 0, "out": None}
    opts = _resolve(args, "bench", defaults)
    rng = np.random.default_rng(int(opts["seed"]))
    eps = float(opts["eps"])
    reps = int(opts["reps"])
    dims = [int(tok) for tok in str(opts["dims"]).split(",")]
    rows = []
    prev = kernels.backend_name()
    print(f"{'d':>10} {'backend':>10} {'seconds':>12}")
    for d in dims:
        x = rng.random(d)
        u = x + rng.normal(0.0, 1.0, d)
        tm = ThreatModel(x, eps)
        for backend in kernels.available_backends():
            kernels.set_backend(backend)
            geometry.project_box_l1(u, tm)  # warm up
            best = min(
                _timed(lambda: geometry.project_box_l1(u, tm)) for _ in range(reps)
            )
            rows.append([d, backend, f"{best:.6g}"])
            print(f"{d:>10} {backend:>10} {best:>12.6g}")
    kernels.set_backend(prev)
    if opts["out"]:
        Path(opts["out"]).mkdir(parents=True, exist_ok=True)
        fileio.write_csv(Path(opts["out"]) / "bench.csv", ["d", "backend", "seconds"], rows)
        fileio.write_resolved_config(opts["out"], "bench", opts)
    return EXIT_OK


def _timed(fn):
    t0 = time.perf_counter()
    fn()
    return time.perf_counter() - t0


def _threads(opts):
    if opts.get("threads") is not None:
        return int(opts["threads"])
    return int(os.environ.get("BXL1_THREADS", "1"))


def build_parser():
    parser = argparse.ArgumentParser(
        prog="boxl1",
        description="Adversarial optimization in the l1-ball ∩ [0,1]^d threat model",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", default=None, help="INI config file")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", default=None)

    p = sub.add_parser("attack", help="run one attack over a dataset, emit CSVs")
    common(p)
    p.add_argument("--kind", choices=ATTACK_KINDS, default=None)
    p.add_argument("--eps", type=float, default=None)
    p.add_argument("--iters", type=int, default=None)
    p.add_argument("--queries", type=int, default=None)
    p.add_argument("--restarts", type=int, default=None)
    p.add_argument("--threads", type=int, default=None)
    p.add_argument("--n-points", dest="n_points", type=int, default=None)
    p.add_argument("--dataset", default=None)
    p.add_argument("--model", default=None)
    p.add_argument("--model-path", dest="model_path", default=None)
    p.add_argument("--k", type=float, default=None, help="SLIDE sparsity fraction")

    p = sub.add_parser("eval", help="robust-accuracy table for the ensemble and components")
    common(p)
    p.add_argument("--eps", type=float, default=None)
    p.add_argument("--iters", type=int, default=None)
    p.add_argument("--queries", type=int, default=None)
    p.add_argument("--restarts", type=int, default=None)
    p.add_argument("--threads", type=int, default=None)
    p.add_argument("--n-points", dest="n_points", type=int, default=None)
    p.add_argument("--dataset", default=None)
    p.add_argument("--model", default=None)
    p.add_argument("--model-path", dest="model_path", default=None)
    p.add_argument("--attacks", default=None)

    p = sub.add_parser("train", help="adversarial training plus overfitting probe")
    common(p)
    p.add_argument("--eps-train", dest="eps_train", type=float, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--inner-steps", dest="inner_steps", type=int, default=None)
    p.add_argument("--arch", default=None)

    p = sub.add_parser("verify", help="run the oracle suites")
    common(p)
    p.add_argument("--instances", type=int, default=None)
    p.add_argument("--mc-samples", dest="mc_samples", type=int, default=None)
    p.add_argument("--inject-bug", dest="inject_bug", action="store_const",
                   const=True, default=None, help="negative control: must FAIL")

    p = sub.add_parser("sparsity", help="expected-sparsity table")
    common(p)
    p.add_argument("--eps", default=None, help="comma-separated radii")
    p.add_argument("--d", type=int, default=None)
    p.add_argument("--mc-samples", dest="mc_samples", type=int, default=None)

    p = sub.add_parser("bench", help="projection timing per kernel backend")
    common(p)
    p.add_argument("--dims", default=None)
    p.add_argument("--reps", type=int, default=None)
    p.add_argument("--eps", type=float, default=None)
    return parser


_COMMANDS = {
    "attack": cmd_attack,
    "eval": cmd_eval,
    "train": cmd_train,
    "verify": cmd_verify,
    "sparsity": cmd_sparsity,
    "bench": cmd_bench,
}


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except ParameterError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except InvariantViolationError as exc:
        print(f"invariant violation: {exc}", file=sys.stderr)
        return EXIT_INVARIANT


if __name__ == "__main__":
    sys.exit(main())
