"""``pqrlka`` command line: one subcommand per pipeline stage, plus ``ablate``.

All artifacts live in ``--out`` under fixed file names (see ``FILES``), so the
stages chain without further arguments::

    pqrlka synth --out run/
    pqrlka ingest --out run/
    pqrlka infer-kg --out run/ --method kappa_adj
    pqrlka refine-q --out run/
    pqrlka walks --out run/
    pqrlka embed --out run/
    pqrlka difficulty --out run/
    pqrlka train --out run/
    pqrlka eval --out run/
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np
import torch

from . import dataio, graphembed, ktmodel, prereq, qrefine, qrepr, synth
from ._io import DataFormatError, atomic_write
from .config import PipelineConfig, load_config, parse_value, save_config

log = logging.getLogger("pqrlka")

FILES = {
    "interactions": "interactions.csv",
    "qmatrix": "qmatrix.csv",
    "true_kg": "true_kg.csv",
    "train": "train.csv",
    "test": "test.csv",
    "kg": "kg.csv",
    "sweep": "kg_sweep.csv",
    "dot": "kg.dot",
    "refined": "qmatrix_refined.csv",
    "walks": "walks.txt",
    "embeddings": "embeddings.txt",
    "difficulty": "difficulty.csv",
    "model": "model.pqrl",
    "metrics": "metrics.csv",
    "eval": "eval_metrics.csv",
    "ablation": "ablation.csv",
    "config": "config.ini",
}

ARMS = ("original",) + tuple(m.value for m in prereq.KGMethod)


class MissingArtifact(Exception):
    pass


class Context:
    def __init__(self, cfg: PipelineConfig, out: Path):
        self.cfg = cfg
        self.out = out

    def path(self, key: str) -> Path:
        return self.out / FILES[key]

    def need(self, key: str) -> Path:
        p = self.path(key)
        if not p.is_file():
            raise MissingArtifact(f"missing input file: {p}")
        return p

    def qmatrix(self, key: str = "qmatrix") -> dataio.QMatrix:
        return dataio.load_qmatrix(self.need(key))

    def split(self, key: str, q: dataio.QMatrix) -> dataio.InteractionDataset:
        return dataio.load_interactions(self.need(key), self.cfg.log_columns(), q)


# ---------------------------------------------------------------- stages


def cmd_synth(ctx: Context, args) -> None:
    scfg = synth.SynthConfig(
        n_skills=args.n_skills,
        n_questions=args.n_questions,
        n_learners=args.n_learners,
        seq_len_range=(args.seq_len, args.seq_len),
        dag_kind=args.dag,
        seed=ctx.cfg.seed,
    )
    ds, q, kg = synth.generate_synthetic(scfg)
    dataio.save_interactions(ds, ctx.path("interactions"), ctx.cfg.log_columns())
    dataio.save_qmatrix(q, ctx.path("qmatrix"))
    prereq.save_kg_pairs(kg, ctx.path("true_kg"), q.skill_ids)
    print(f"synth: {ds.n_learners} learners, {ds.n_interactions} interactions, {q.n_questions} questions, {q.n_skills} skills")


def cmd_ingest(ctx: Context, args) -> None:
    cfg = ctx.cfg
    q_src = Path(args.qmatrix) if args.qmatrix else ctx.path("qmatrix")
    log_src = Path(args.interactions) if args.interactions else ctx.path("interactions")
    for p in (q_src, log_src):
        if not p.is_file():
            raise MissingArtifact(f"missing input file: {p}")
    q = dataio.load_qmatrix(q_src)
    ds = dataio.load_interactions(log_src, cfg.log_columns(), q)
    ds = dataio.filter_dataset(ds, q, cfg.min_interactions)
    train, test = dataio.split_sequences(ds, cfg.test_fraction, cfg.seed)
    if q_src.resolve() != ctx.path("qmatrix").resolve():
        dataio.save_qmatrix(q, ctx.path("qmatrix"))
    dataio.save_interactions(train, ctx.path("train"), cfg.log_columns())
    dataio.save_interactions(test, ctx.path("test"), cfg.log_columns())
    print(f"ingest: {train.n_learners} train / {test.n_learners} test learners, {ds.n_interactions} interactions")


def _infer(ctx: Context, train, q, method: str):
    return prereq.infer_kg(train, q, method, ctx.cfg.threshold_for(method), ctx.cfg.min_support)


def cmd_infer_kg(ctx: Context, args) -> None:
    q = ctx.qmatrix()
    train = ctx.split("train", q)
    method = prereq.KGMethod.parse(ctx.cfg.kg_method).value
    if args.sweep:
        values = prereq.directionalize(prereq.relation_matrix(train, q, method, ctx.cfg.min_support))
        grid = np.round(np.arange(0.0, 1.0001, 0.05), 2)
        rows = prereq.threshold_sweep(values, grid)
        with atomic_write(ctx.path("sweep"), encoding="utf-8") as fh:
            fh.write("threshold,n_edges\n")
            fh.writelines(f"{t:.2f},{n}\n" for t, n in rows)
        for t, n in rows:
            print(f"{method} threshold={t:.2f} edges={n}")
        return
    kg = _infer(ctx, train, q, method)
    prereq.save_kg_pairs(kg, ctx.path("kg"), q.skill_ids)
    print(f"infer-kg: {method} threshold={kg.threshold:g} -> {kg.n_edges} edges")


def cmd_export_dot(ctx: Context, args) -> None:
    q = ctx.qmatrix()
    kg = prereq.load_kg_pairs(ctx.need("kg"), q.skill_ids)
    prereq.export_dot(kg, ctx.path("dot"), q.skill_ids)
    print(f"export-dot: wrote {ctx.path('dot')}")


def cmd_refine_q(ctx: Context, args) -> None:
    q = ctx.qmatrix()
    if args.original:
        refined = q
    else:
        kg = prereq.load_kg_pairs(ctx.need("kg"), q.skill_ids)
        refined = qrefine.refine_qmatrix(q, kg, ctx.cfg.refine_iterations)
    dataio.save_qmatrix(refined, ctx.path("refined"))
    print(f"refine-q: nnz {q.nnz} -> {refined.nnz}")


def cmd_walks(ctx: Context, args) -> None:
    g = qrefine.build_relation_graph(ctx.qmatrix("refined"))
    walks = graphembed.generate_metapaths(g, ctx.cfg.path_length, ctx.cfg.walks_per_node, ctx.cfg.seed)
    graphembed.save_walks(walks, g, ctx.path("walks"))
    print(f"walks: {len(walks)} walks of length <= {ctx.cfg.path_length}")


def cmd_embed(ctx: Context, args) -> None:
    q = ctx.qmatrix("refined")
    walks, n_q, n_s = graphembed.load_walks(ctx.need("walks"))
    if (n_q, n_s) != (q.n_questions, q.n_skills):
        raise DataFormatError("walk file does not match the refined Q-matrix")
    emb = graphembed.train_skipgram(walks, n_q, n_s, ctx.cfg.skipgram(), q.question_ids, q.skill_ids)
    graphembed.save_embeddings(emb, ctx.path("embeddings"))
    print(f"embed: loss {emb.loss_history[0]:.4f} -> {emb.loss_history[-1]:.4f}")


def cmd_difficulty(ctx: Context, args) -> None:
    q = ctx.qmatrix("refined")
    train = ctx.split("train", q)
    diff = qrepr.compute_difficulty(train, q, ctx.cfg.difficulty_levels, ctx.cfg.min_attempts)
    qrepr.save_difficulty(diff, ctx.path("difficulty"), q.question_ids)
    print(f"difficulty: {int((diff.question_level == diff.c).sum())} questions without enough attempts")


def _load_embeddings(ctx: Context, q: dataio.QMatrix) -> graphembed.EmbeddingTable:
    emb = graphembed.load_embeddings(ctx.need("embeddings"))
    if emb.question_ids != q.question_ids or emb.skill_ids != q.skill_ids:
        raise DataFormatError("embedding node ids do not match the refined Q-matrix")
    return emb


def cmd_train(ctx: Context, args) -> None:
    cfg = ctx.cfg
    q = ctx.qmatrix("refined")
    train = ctx.split("train", q)
    emb = _load_embeddings(ctx, q)
    diff = qrepr.load_difficulty(ctx.need("difficulty"))
    result = ktmodel.train(train, emb, q, diff, cfg.model(), cfg.training())
    ktmodel.save_checkpoint(result.model, ctx.path("model"))
    with atomic_write(ctx.path("metrics"), encoding="utf-8") as fh:
        fh.write(ktmodel.format_metrics(result.history))
    _, split, loss, auc = result.history[-1]
    print(f"train: final {split} loss={loss:.4f} auc={auc:.4f}")


def cmd_eval(ctx: Context, args) -> None:
    cfg = ctx.cfg
    q = ctx.qmatrix("refined")
    test = ctx.split("test", q)
    model = ktmodel.model_from_checkpoint(ktmodel.load_checkpoint(ctx.need("model")), cfg.model(), cfg.dtype)
    loss, auc = ktmodel.evaluate(model, test, cfg.batch_size, cfg.seq_len)
    with atomic_write(ctx.path("eval"), encoding="utf-8") as fh:
        fh.write(f"split,loss,auc\ntest,{loss:.10f},{auc:.10f}\n")
    print(f"eval: test loss={loss:.4f} auc={auc:.4f}")


def run_arm(ctx: Context, arm: str, train, test, q) -> tuple[float, int, int]:
    """One ablation arm end to end; returns (test AUC, KG edges, nnz of Q)."""
    cfg = ctx.cfg
    arm_dir = ctx.out / "ablate" / arm
    arm_dir.mkdir(parents=True, exist_ok=True)
    if arm == "original":
        refined, n_edges = q, 0
    else:
        kg = _infer(ctx, train, q, arm)
        prereq.save_kg_pairs(kg, arm_dir / FILES["kg"], q.skill_ids)
        refined, n_edges = qrefine.refine_qmatrix(q, kg, cfg.refine_iterations), kg.n_edges
    dataio.save_qmatrix(refined, arm_dir / FILES["refined"])
    g = qrefine.build_relation_graph(refined)
    walks = graphembed.generate_metapaths(g, cfg.path_length, cfg.walks_per_node, cfg.seed)
    emb = graphembed.train_skipgram(walks, g.n_questions, g.n_skills, cfg.skipgram(), q.question_ids, q.skill_ids)
    diff = qrepr.compute_difficulty(train, refined, cfg.difficulty_levels, cfg.min_attempts)
    result = ktmodel.train(train, emb, refined, diff, cfg.model(), cfg.training())
    with atomic_write(arm_dir / FILES["metrics"], encoding="utf-8") as fh:
        fh.write(ktmodel.format_metrics(result.history))
    _, auc = ktmodel.evaluate(result.model, test, cfg.batch_size, cfg.seq_len)
    return auc, n_edges, refined.nnz


def cmd_ablate(ctx: Context, args) -> None:
    q = ctx.qmatrix()
    train = ctx.split("train", q)
    test = ctx.split("test", q)
    arms = args.arms.split(",") if args.arms else list(ARMS)
    for arm in arms:
        if arm != "original":
            prereq.KGMethod.parse(arm)
    rows = []
    for arm in arms:
        auc, n_edges, nnz = run_arm(ctx, arm, train, test, q)
        rows.append((arm, auc, n_edges, nnz))
        print(f"ablate: {arm:<10} auc={auc:.4f} edges={n_edges} nnz={nnz}")
    with atomic_write(ctx.path("ablation"), encoding="utf-8") as fh:
        fh.write("method,auc,n_kg_edges,nnz_qmatrix\n")
        fh.writelines(f"{m},{a:.6f},{e},{n}\n" for m, a, e, n in rows)


COMMANDS = {
    "synth": (cmd_synth, "generate a synthetic log with a planted prerequisite DAG"),
    "ingest": (cmd_ingest, "load, filter and split an interaction log"),
    "infer-kg": (cmd_infer_kg, "infer the prerequisite graph from the training split"),
    "export-dot": (cmd_export_dot, "write the inferred graph as DOT"),
    "refine-q": (cmd_refine_q, "expand the Q-matrix with prerequisite skills"),
    "walks": (cmd_walks, "sample question-skill-question metapaths"),
    "embed": (cmd_embed, "train skip-gram node embeddings"),
    "difficulty": (cmd_difficulty, "bucket question and skill error rates"),
    "train": (cmd_train, "train the knowledge tracing model"),
    "eval": (cmd_eval, "evaluate the trained model on the test split"),
    "ablate": (cmd_ablate, "original Q-matrix vs. every KG method"),
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value config file")
    common.add_argument("--out", default=".", help="artifact directory (default: current)")
    common.add_argument("--seed", type=int)
    common.add_argument("--method", choices=[m.value for m in prereq.KGMethod])
    common.add_argument("--threshold", type=float, help="KG threshold for every method")
    common.add_argument("--refine-iterations", type=int)
    common.add_argument("--deterministic", action="store_true", default=None)
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override any config key")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="pqrlka", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")
    subs = {name: sub.add_parser(name, parents=[common], help=text) for name, (_, text) in COMMANDS.items()}
    s = subs["synth"]
    s.add_argument("--n-skills", type=int, default=8)
    s.add_argument("--n-questions", type=int, default=100)
    s.add_argument("--n-learners", type=int, default=500)
    s.add_argument("--seq-len", type=int, default=50)
    s.add_argument("--dag", choices=["chain", "tree", "random-dag"], default="chain")
    subs["ingest"].add_argument("--interactions", help="raw log (default: OUT/interactions.csv)")
    subs["ingest"].add_argument("--qmatrix", help="Q-matrix (default: OUT/qmatrix.csv)")
    subs["infer-kg"].add_argument("--sweep", action="store_true", help="report edge counts per threshold")
    subs["refine-q"].add_argument("--original", action="store_true", help="copy the Q-matrix unrefined")
    subs["ablate"].add_argument("--arms", help="comma-separated subset of: " + ",".join(ARMS))
    return parser


def effective_config(args) -> PipelineConfig:
    cfg = load_config(args.config) if args.config else PipelineConfig()
    changes = {}
    for item in args.set:
        key, sep, raw = item.partition("=")
        if not sep:
            raise DataFormatError(f"--set expects KEY=VALUE, got {item!r}")
        changes[key.strip()] = parse_value(key.strip(), raw)
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.method is not None:
        changes["kg_method"] = args.method
    if args.threshold is not None:
        changes["kg_threshold"] = args.threshold
        changes["method_thresholds"] = {}
    if args.refine_iterations is not None:
        changes["refine_iterations"] = args.refine_iterations
    if args.deterministic:
        changes["deterministic"] = True
    return cfg.replace(**changes)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = effective_config(args)
        if cfg.deterministic:
            torch.set_num_threads(1)
            torch.use_deterministic_algorithms(True)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        save_config(cfg, out / FILES["config"])
        COMMANDS[args.command][0](Context(cfg, out), args)
    except MissingArtifact as exc:
        print(f"pqrlka {args.command}: error: {exc}", file=sys.stderr)
        return 1
    except (DataFormatError, ValueError, OSError) as exc:
        print(f"pqrlka {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
