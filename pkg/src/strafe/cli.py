"""Command-line pipeline: simulate, embed, train, evaluate, explain.

Exit codes: 0 success, 2 configuration error, 3 missing input file,
4 training divergence, 5 unsupported operation for the configured variant.
Outputs are deterministic given (config, seed): no timestamps, sorted JSON
keys, fixed float formatting.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import checkpoint as ckpt
from .config import RunConfig, load_run_config
from .data import (filter_fixed_time_cohort, fixed_time_labels, load_cohort,
                   save_cohort, split_train_test)
from .embeddings import EmbeddingMatrix, Vocabulary, build_sentences, train_skipgram
from .errors import (CheckpointError, CohortParseError, ConfigError, DivergenceError,
                     ParameterError, StrafeError, UndefinedMetricError,
                     UnsupportedVariantError, ValidationError)
from .explain import (counterfactual_remove_visits, export_curves_csv,
                      export_graph_json, export_heatmap_csv, extract_attention,
                      visit_graph)
from .metrics import (PredictionSet, auc_roc, bootstrap_metric, c_index, decile_ppv,
                      decile_progression, mae, stratified_auc)
from .model import ModelConfig, init_parameters
from .optim import Parameter
from .survival import fixed_time_risk
from .synthetic import SyntheticGroundTruth, generate_synthetic_cohort
from .training import TrainResult, predict_survival, train_strafe

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_MISSING_INPUT = 3
EXIT_DIVERGENCE = 4
EXIT_UNSUPPORTED = 5

EMBEDDINGS_KIND = "embeddings-v1"
MODEL_KIND = "strafe-model-v1"


def eval_threads() -> int:
    """Evaluation parallelism cap from STRAFE_THREADS (currently 1 worker is used)."""
    raw = os.environ.get("STRAFE_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"STRAFE_THREADS must be an integer, got {raw!r}")
    if n < 1:
        raise ConfigError("STRAFE_THREADS must be >= 1")
    return n


def _require_file(path: str, what: str) -> None:
    if not Path(path).is_file():
        raise FileNotFoundError(f"{what} not found: {path}")


def save_embeddings(path: str, emb: EmbeddingMatrix) -> None:
    config = {"codes": emb.vocab.codes, "counts": emb.vocab.counts.tolist(),
              "d_e": emb.d_e}
    ckpt.save_checkpoint(path, EMBEDDINGS_KIND, config, {"vectors": emb.vectors})


def load_embeddings(path: str) -> EmbeddingMatrix:
    config, tensors = ckpt.load_checkpoint(path, expect_kind=EMBEDDINGS_KIND)
    vocab = Vocabulary(dict(zip(config["codes"], config["counts"])))
    return EmbeddingMatrix(vocab=vocab, vectors=tensors["vectors"])


def save_model(path: str, params: dict[str, Parameter], config: ModelConfig,
               loss_history: list[float]) -> None:
    snapshot = {"d_e": config.d_e, "n_v": config.n_v, "heads": config.heads,
                "blocks": config.blocks, "dropout": config.dropout,
                "t_max": config.t_max, "variant": config.variant,
                "clip_visit_days": config.clip_visit_days, "seed": config.seed,
                "loss_history": loss_history}
    ckpt.save_checkpoint(path, MODEL_KIND, snapshot,
                         {name: p.data for name, p in params.items()})


def load_model(path: str) -> tuple[dict[str, Parameter], ModelConfig, list[float]]:
    snapshot, tensors = ckpt.load_checkpoint(path, expect_kind=MODEL_KIND)
    history = snapshot.pop("loss_history", [])
    config = ModelConfig(**snapshot)
    params = {name: Parameter(arr, dtype=arr.dtype) for name, arr in tensors.items()}
    expected = set(init_parameters(config))
    if set(params) != expected:
        raise CheckpointError("checkpoint tensors do not match the configured variant")
    return params, config, history


# -- commands -------------------------------------------------------------------


def cmd_simulate(cfg: RunConfig) -> int:
    cohort, truth = generate_synthetic_cohort(cfg.cohort)
    save_cohort(cohort, cfg.paths.cohort)
    truth.save(cfg.paths.truth_path())
    print(f"wrote {len(cohort)} patients to {cfg.paths.cohort} "
          f"(event rate {cohort.event_rate():.4f})")
    return EXIT_OK


def cmd_embed(cfg: RunConfig) -> int:
    _require_file(cfg.paths.cohort, "cohort file")
    cohort = load_cohort(cfg.paths.cohort)
    sentences = build_sentences(cohort, window_days=cfg.embedding.window_days)
    emb, history = train_skipgram(
        sentences, d_e=cfg.embedding.d_e, epochs=cfg.embedding.epochs,
        negatives_per_positive=cfg.embedding.negatives_per_positive,
        lr=cfg.embedding.lr, seed=cfg.seed)
    if cfg.embedding.vector_scale != 1.0:
        emb.vectors = emb.vectors * cfg.embedding.vector_scale
    save_embeddings(cfg.paths.embeddings, emb)
    final = f"final loss {history[-1]:.4f}" if history else "0 epochs"
    print(f"trained {len(emb.vocab)}x{emb.d_e} embeddings "
          f"({len(sentences)} sentences); {final}")
    return EXIT_OK


def cmd_train(cfg: RunConfig) -> int:
    _require_file(cfg.paths.cohort, "cohort file")
    _require_file(cfg.paths.embeddings, "embeddings checkpoint")
    cohort = load_cohort(cfg.paths.cohort, max_duration=cfg.model.t_max)
    emb = load_embeddings(cfg.paths.embeddings)
    train, _ = split_train_test(cohort, cfg.data.split_ratio, cfg.data.split_seed)
    result = train_strafe(train, emb, cfg.model, cfg.train)
    save_model(cfg.paths.model, result.params, cfg.model, result.loss_history)
    _write_loss_csv(result, cfg.paths.model + ".loss.csv")
    last = result.loss_history[-1] if result.loss_history else float("nan")
    print(f"trained variant {cfg.model.variant} on {len(train)} patients; "
          f"final epoch loss {last:.4f}")
    return EXIT_OK


def _write_loss_csv(result: TrainResult, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("epoch,mean_loss\n")
        for i, v in enumerate(result.loss_history):
            fh.write(f"{i},{v:.10g}\n")


def _metric_or_reason(fn, *args):
    try:
        return fn(*args), None
    except UndefinedMetricError as exc:
        return None, str(exc)


def cmd_evaluate(cfg: RunConfig) -> int:
    _require_file(cfg.paths.cohort, "cohort file")
    _require_file(cfg.paths.embeddings, "embeddings checkpoint")
    _require_file(cfg.paths.model, "model checkpoint")
    eval_threads()  # validate the env var even though evaluation is sequential
    cohort = load_cohort(cfg.paths.cohort, max_duration=cfg.model.t_max)
    emb = load_embeddings(cfg.paths.embeddings)
    params, model_cfg, _ = load_model(cfg.paths.model)
    _, test = split_train_test(cohort, cfg.data.split_ratio, cfg.data.split_seed)

    patients = list(test)
    curves = predict_survival(patients, emb, params, model_cfg)
    preds = PredictionSet(
        predicted_time=curves.sum(axis=1),
        duration=np.array([p.label.duration_months for p in patients]),
        event=np.array([p.label.event for p in patients]),
        curves=curves,
        groups=np.array([p.sex for p in patients]))

    report: dict = {"variant": model_cfg.variant, "n_test": len(patients),
                    "seed": cfg.seed, "metrics": {}}

    ci, reason = _metric_or_reason(c_index, preds)
    report["metrics"]["c_index"] = {"value": ci, "reason": reason}
    mv, reason = _metric_or_reason(mae, preds)
    report["metrics"]["mae"] = {"value": mv, "reason": reason}

    truth_path = cfg.paths.truth_path()
    if Path(truth_path).is_file():
        truth = SyntheticGroundTruth.load(truth_path)
        oracle_mu = np.array([truth.mean_survival_time(p.id) for p in patients])
        oracle_preds = PredictionSet(predicted_time=oracle_mu,
                                     duration=preds.duration, event=preds.event)
        oci, reason = _metric_or_reason(c_index, oracle_preds)
        report["metrics"]["oracle_c_index"] = {"value": oci, "reason": reason}

    out_dir = Path(cfg.paths.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    report["fixed_time"] = []
    for t_r in cfg.eval.t_r:
        if t_r > model_cfg.t_max:
            report["fixed_time"].append({"t_r": t_r, "value": None,
                                         "reason": "horizon beyond model t_max"})
            continue
        window = filter_fixed_time_cohort(test, t_r)
        labels = fixed_time_labels(window, t_r)
        idx = {p.id: i for i, p in enumerate(patients)}
        risks = np.array([fixed_time_risk(curves[idx[p.id]], t_r) for p in window])
        entry: dict = {"t_r": t_r, "n": len(window)}
        if labels.size and 0 < labels.sum() < labels.size:
            entry["auc"] = auc_roc(risks, labels)
            # reuse the resampling harness: scores ride in predicted_time,
            # binary labels in the event flag
            auc_preds = PredictionSet(predicted_time=risks,
                                      duration=np.zeros(labels.size),
                                      event=labels)
            boot = bootstrap_metric(
                lambda ps: auc_roc(ps.predicted_time, ps.event),
                auc_preds, n_resamples=cfg.eval.n_resamples, seed=cfg.seed)
            entry["auc_ci"] = [boot.ci_low, boot.ci_high]
            entry["n_resamples"] = boot.n_resamples
            ppv = decile_ppv(risks, labels)
            entry["top_decile_lift"] = ppv.top_decile_lift
            _write_ppv_csv(ppv, out_dir / f"decile_ppv_t{t_r}.csv")
            groups = np.array([p.sex for p in window])
            entry["auc_by_sex"] = stratified_auc(risks, labels, groups)
        else:
            entry["auc"] = None
            entry["reason"] = "single-class window"
        report["fixed_time"].append(entry)

    try:
        rows = decile_progression(preds)
        with open(out_dir / "decile_progression.csv", "w", encoding="utf-8") as fh:
            fh.write("decile,size,q1,median,q3\n")
            for r in rows:
                fh.write(f"{r.decile},{r.size},{r.q1:.10g},{r.median:.10g},{r.q3:.10g}\n")
    except ParameterError:
        pass

    with open(out_dir / "metrics.json", "w", encoding="utf-8") as fh:
        json.dump(report, fh, sort_keys=True, indent=2)
    print(json.dumps(report["metrics"], sort_keys=True))
    return EXIT_OK


def _write_ppv_csv(table, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("decile,size,event_rate\n")
        for r in table.rows:
            fh.write(f"{r.decile},{r.size},{r.event_rate:.10g}\n")
        fh.write(f"# cohort_rate,{table.cohort_rate:.10g},lift,"
                 f"{table.top_decile_lift:.10g}\n")


def cmd_explain(cfg: RunConfig, patient_id: str, remove_visits: list[int],
                threshold: float) -> int:
    _require_file(cfg.paths.cohort, "cohort file")
    _require_file(cfg.paths.embeddings, "embeddings checkpoint")
    _require_file(cfg.paths.model, "model checkpoint")
    cohort = load_cohort(cfg.paths.cohort, max_duration=cfg.model.t_max)
    emb = load_embeddings(cfg.paths.embeddings)
    params, model_cfg, _ = load_model(cfg.paths.model)
    patient = cohort.by_id(patient_id)

    attn = extract_attention(patient, emb, params, model_cfg)
    out_dir = Path(cfg.paths.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    export_heatmap_csv(attn, out_dir / f"attention_{patient_id}.csv")
    export_graph_json(visit_graph(attn, patient, model_cfg, threshold),
                      out_dir / f"graph_{patient_id}.json")
    cf = counterfactual_remove_visits(patient, remove_visits, emb, params, model_cfg)
    export_curves_csv(cf, out_dir / f"curves_{patient_id}.csv")
    print(f"patient {patient_id}: removed {list(cf.removed)}, "
          f"delta_mu {cf.delta_mu:.6f}")
    return EXIT_OK


# -- argument handling ------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="strafe",
        description="Discrete-time survival transformer pipeline")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("simulate", "embed", "train", "evaluate", "explain"):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="TOML run configuration")
        p.add_argument("--seed", type=int, default=None, help="override the global seed")
        p.add_argument("--variant", default=None,
                       help="override the model variant")
        if name == "explain":
            p.add_argument("--patient", required=True, help="patient id to explain")
            p.add_argument("--remove-visits", default="",
                           help="comma-separated visit indices to delete")
            p.add_argument("--threshold", type=float, default=0.0,
                           help="minimum interaction weight for graph edges")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_run_config(args.config)
        if args.seed is not None:
            cfg.seed = args.seed
            cfg.cohort.seed = args.seed
            cfg.model.seed = args.seed
        if args.variant is not None:
            cfg.model.variant = args.variant
            cfg.model.validate()
        if args.command == "simulate":
            return cmd_simulate(cfg)
        if args.command == "embed":
            return cmd_embed(cfg)
        if args.command == "train":
            return cmd_train(cfg)
        if args.command == "evaluate":
            return cmd_evaluate(cfg)
        if args.command == "explain":
            remove = [int(x) for x in args.remove_visits.split(",") if x.strip()]
            return cmd_explain(cfg, args.patient, remove, args.threshold)
        raise ConfigError(f"unknown command {args.command!r}")
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISSING_INPUT
    except UnsupportedVariantError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_UNSUPPORTED
    except DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except (ConfigError, ParameterError, ValidationError, CohortParseError,
            CheckpointError, KeyError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except StrafeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    raise SystemExit(main())
