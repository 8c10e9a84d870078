"""Command line entry point: ``csgparse {gen-data,train,eval,entropy-demo,variance-study}``.

Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure.
Log verbosity comes from ``CSGPARSE_LOG`` (e.g. ``DEBUG``, ``INFO``; default ``WARNING``).
"""
from __future__ import annotations

import argparse
import dataclasses
import logging
import os
import sys

import numpy as np

from . import data, evaluate, nn, studies
from .grammar import Vocabulary
from .policy import Policy, PolicyConfig
from .render import read_pbm
from .reward import RewardConfig
from .train import ConfigError, RunConfig, load_policy, read_config_file, train

log = logging.getLogger("csgparse")


class UsageError(Exception):
    pass


class RuntimeFailure(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _ints(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _vocab_for(ds: data.Dataset | None) -> Vocabulary:
    shapes = data.dataset_shapes(ds) if ds is not None else None
    return Vocabulary(shapes if shapes is not None else data.build_vocab())


# commands -------------------------------------------------------------------

def cmd_gen_data(a) -> int:
    vcfg = data.ShapeVocabularyConfig()
    if a.kinds or a.positions or a.sizes:
        vcfg = data.ShapeVocabularyConfig.from_text(
            a.kinds or "c,s,t", a.positions or "16:16,32:32,48:48", a.sizes or "8,12,16", None)
    shapes = data.build_vocab(vcfg)
    filt = data.FilterConfig(a.empty_below, a.duplicate_within, a.max_attempts)
    ds = data.generate(a.length, a.count, a.seed, shapes, filt, triangle=a.triangle)
    data.save(ds, a.out)
    print(f"wrote {len(ds)} images to {a.out}")
    if len(ds) < a.count:
        raise RuntimeFailure(f"candidate space exhausted: {len(ds)} of {a.count} targets accepted")
    return 0


def _run_config(a) -> dict:
    values = read_config_file(a.config) if a.config else {}
    for f in dataclasses.fields(RunConfig):
        v = getattr(a, f.name, None)
        if v is not None:
            values[f.name] = v
    if a.no_entropy:
        values["alpha"] = 0.0
    if a.with_replacement:
        values["sampling"] = "iid"
    if a.no_grammar_mask:
        values["grammar_mask"] = False
    return values


def cmd_train(a) -> int:
    values = _run_config(a)
    ds = data.load(a.data)
    if a.limit:
        ds = data.Dataset(ds.images[: a.limit], ds.programs[: a.limit], ds.meta)
    if "max_shapes" not in values and "length" in ds.meta:
        values["max_shapes"] = (int(ds.meta["length"]) + 1) // 2
    cfg = RunConfig.from_mapping(values)
    vocab = _vocab_for(ds)

    def progress(row):
        log.info("iter %d reward %.4f entropy %.4f", row["iteration"], row["mean_reward"], row["entropy"])

    train(cfg, ds, vocab, a.out, resume=a.resume, progress=progress)
    print(f"trained {cfg.iterations} iterations; outputs in {a.out}")
    return 0


def cmd_eval(a) -> int:
    ds = data.load(a.data)
    if a.limit:
        ds = data.Dataset(ds.images[: a.limit], ds.programs[: a.limit], ds.meta)
    policy, meta = load_policy(a.checkpoint, _vocab_for(ds))
    run = meta.get("config", {})
    rcfg = RewardConfig(gamma=float(run.get("gamma", 20.0)), delta=float(run.get("delta", 0.3)))
    results = evaluate.evaluate(policy, ds, a.ks, rcfg, run.get("reward_mode", "full"))
    if a.out:
        evaluate.write_outputs(results, a.out)
    for k in sorted(results):
        s = results[k].summary()
        print(f"k={k} chamfer_reward={s['chamfer_reward']:.4f} iou={s['iou']:.4f} "
              f"chamfer={s['chamfer']:.3f}px invalid={s['invalid']}")
    return 0


def cmd_entropy_demo(a) -> int:
    cfg = studies.EntropyDemoConfig(m=a.m, iterations=a.iterations, swor_k=a.swor_k, swr_k=a.swr_k,
                                    lr=a.lr, spikes=a.spikes, spike_logit=a.spike_logit, seed=a.seed,
                                    swr_gradient=a.swr_gradient)
    res = studies.entropy_demo(cfg)
    studies.write_entropy_demo(res, a.out)
    print(f"final entropy (mean of last 50): swor={studies.tail_mean(res['swor']['entropy']):.4f} "
          f"swr={studies.tail_mean(res['swr']['entropy']):.4f} max={np.log(cfg.m):.4f}")
    return 0


def cmd_variance_study(a) -> int:
    if a.model == "toy":
        factory, _ = studies.toy_factory(seed=a.seed)
        steps = 3
    else:
        if a.checkpoint:
            policy, _ = load_policy(a.checkpoint)
        else:
            policy = Policy(Vocabulary(data.build_vocab()), PolicyConfig(), seed=a.seed)
        if not a.target:
            raise UsageError("--target PBM is required with --model policy")
        target = read_pbm(a.target, expect_size=policy.cfg.image_size)
        factory = lambda: policy.rollout(target, grad=False)  # noqa: E731
        steps = policy.cfg.max_steps
    rows = studies.variance_study(factory, steps, a.counts, a.repeats, a.seed)
    studies.write_variance(rows, a.out)
    print(f"wrote {len(rows)} rows to {a.out}")
    return 0


# parser ---------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="csgparse", description="Program synthesis for CSG images.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen-data", help="generate a synthetic dataset")
    g.add_argument("--length", type=int, default=5)
    g.add_argument("--count", type=int, required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.add_argument("--empty-below", type=int, default=120)
    g.add_argument("--duplicate-within", type=int, default=120)
    g.add_argument("--max-attempts", type=int, default=None)
    g.add_argument("--triangle", choices=("inscribed", "side"), default="inscribed")
    g.add_argument("--kinds", help="e.g. c,s,t")
    g.add_argument("--positions", help="e.g. 16:16,32:32,48:48")
    g.add_argument("--sizes", help="e.g. 8,12,16")
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train a policy")
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--config", help="flat key = value file; flags override it")
    t.add_argument("--resume", action="store_true")
    t.add_argument("--limit", type=int, help="use only the first N images")
    t.add_argument("--no-entropy", action="store_true", help="alpha = 0")
    t.add_argument("--with-replacement", action="store_true", help="i.i.d. sampling")
    t.add_argument("--no-grammar-mask", action="store_true")
    for f in dataclasses.fields(RunConfig):
        t.add_argument("--" + f.name.replace("_", "-"), dest=f.name, default=None, metavar="V",
                       help=f"default {f.default}")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="beam-search decode and score a dataset")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--ks", type=_ints, default=[1, 3, 5])
    e.add_argument("--out")
    e.add_argument("--limit", type=int)
    e.set_defaults(func=cmd_eval)

    d = sub.add_parser("entropy-demo", help="entropy ascent on a categorical, SWOR vs SWR")
    d.add_argument("--m", type=int, default=100)
    d.add_argument("--iterations", type=int, default=700)
    d.add_argument("--swor-k", type=int, default=20)
    d.add_argument("--swr-k", type=int, default=40)
    d.add_argument("--lr", type=float, default=0.1)
    d.add_argument("--spikes", type=int, default=3)
    d.add_argument("--spike-logit", type=float, default=6.0)
    d.add_argument("--swr-gradient", choices=("estimator", "score"), default="estimator")
    d.add_argument("--seed", type=int, default=0)
    d.add_argument("--out", required=True)
    d.set_defaults(func=cmd_entropy_demo)

    v = sub.add_parser("variance-study", help="entropy estimator spread vs sample count")
    v.add_argument("--model", choices=("toy", "policy"), default="toy")
    v.add_argument("--checkpoint")
    v.add_argument("--target", help="PBM target image (policy model)")
    v.add_argument("--counts", type=_ints, default=[2, 5, 10, 20, 40, 80])
    v.add_argument("--repeats", type=int, default=100)
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--out", required=True)
    v.set_defaults(func=cmd_variance_study)
    return p


def main(argv=None) -> int:
    level = os.environ.get("CSGPARSE_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        a = build_parser().parse_args(argv)
        return a.func(a)
    except (UsageError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (RuntimeFailure, data.DatasetError, nn.CheckpointError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
