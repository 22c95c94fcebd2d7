"""Command-line surface: simulate, train, decode, score, gradcheck, dump-embeddings.

Every command resolves its settings from (defaults < config file < flags),
rejects unknown keys, and writes the resolved config next to its outputs so
any run is reproducible from that file plus the seed. `SURT_SEED` in the
environment overrides the configured seed. Exit codes: 0 ok, 1 usage,
2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import lattice
from .decoding import decode_session, encode_features, greedy_joint_decode
from .errors import DataError, NumericalError, SurtError, UsageError
from .metrics import cpwer, cpwer_bruteforce, orc_wer, orc_wer_bruteforce
from .mixsim import (
    CorpusSpec,
    SessionConfig,
    dataset_stats,
    make_corpus,
    make_session,
    read_manifest,
    write_manifest,
)
from .model import ModelConfig, SurtModel
from .scoring import groups_from_transcript, read_transcript, score_sessions, write_transcript
from .tensorio import write_tensors, write_text_atomic
from .trainer import K_PROBS_DEFAULT, PrefixSampler, build_train_items, train_model


# ---------------------------------------------------------------------------
# config plumbing
# ---------------------------------------------------------------------------

def _bool(v: str) -> bool:
    if v.lower() in ("1", "true", "yes", "on"):
        return True
    if v.lower() in ("0", "false", "no", "off"):
        return False
    raise UsageError(f"expected a boolean, got {v!r}")


_SPECS: dict[str, dict[str, tuple]] = {
    # key: (type, default, help)
    "simulate": {
        "out": (str, None, "output directory"),
        "force": (_bool, False, "overwrite a non-empty output directory"),
        "seed": (int, 0, "session-sampling RNG seed"),
        "corpus_seed": (int, 0, "token-prototype/speaker-offset RNG seed; keep "
                                "identical across splits of one corpus"),
        "sessions": (int, 4, "number of sessions"),
        "session_prefix": (str, "s", "session id prefix"),
        **{f.name: (type(f.default), f.default, "corpus setting")
           for f in fields(CorpusSpec) if f.name != "seed"},
        **{f.name: (type(f.default), f.default, "session setting")
           for f in fields(SessionConfig)},
    },
    "train": {
        "data": (str, None, "training manifest.jsonl"),
        "out": (str, None, "output directory for checkpoints/logs"),
        "strategy": (str, "sequential",
                     "sequential | joint | asr_only | speaker_only"),
        "asr_loss": (str, "hat", "hat | rnnt"),
        "epochs": (int, 10, "epochs per training stage"),
        "batch_size": (int, 16, "groups per step"),
        "lr": (float, 3e-3, "peak learning rate"),
        "warmup_steps": (int, 50, "linear warmup steps"),
        "decay": (float, 0.999, "per-step exponential lr decay"),
        "input_noise": (float, 0.0, "train-time Gaussian jitter on mixtures"),
        "mask_shuffle": (_bool, False,
                         "train masks on feature-dim-shuffled batch copies"),
        "seed": (int, 0, "training RNG seed"),
        "init": (str, "", "checkpoint to initialize from (resume)"),
        "prefix": (_bool, False, "sample speaker prefixes in the speaker stage"),
        "k_probs": (str, ",".join(str(p) for p in K_PROBS_DEFAULT),
                    "comma-separated prefix-count probabilities for K_m=0..N"),
        **{f.name: (type(f.default), f.default, "model setting")
           for f in fields(ModelConfig)},
    },
    "decode": {
        "checkpoint": (str, None, "model checkpoint"),
        "data": (str, None, "manifest.jsonl to decode"),
        "out": (str, None, "output directory"),
        "mode": (str, "none", "none | prefix | enrollment"),
        "max_symbols": (int, 4, "cap on emissions per encoder frame"),
    },
    "score": {
        "ref": (str, None, "reference manifest.jsonl"),
        "hyp": (str, None, "hypothesis transcript.jsonl"),
        "out": (str, "", "optional directory for report.txt"),
        "bruteforce": (_bool, False, "cross-check ORC/cp metrics by enumeration"),
    },
    "gradcheck": {
        "seed": (int, 0, "RNG seed"),
        "instances": (int, 5, "random problems per loss"),
        "threshold": (float, 1e-4, "max allowed relative gradient error"),
    },
    "dump-embeddings": {
        "checkpoint": (str, None, "model checkpoint"),
        "data": (str, None, "manifest.jsonl"),
        "out": (str, None, "output directory"),
    },
}


def resolve_config(command: str, config_path: str | None,
                   flag_pairs: list[str]) -> dict:
    spec = _SPECS[command]
    cfg = {k: d for k, (_, d, _) in spec.items()}

    def apply(key: str, raw: str, where: str) -> None:
        if key not in spec:
            raise UsageError(f"unknown config key {key!r} in {where}")
        typ = spec[key][0]
        try:
            cfg[key] = typ(raw)
        except (TypeError, ValueError) as e:
            raise UsageError(f"bad value for {key} in {where}: {e}") from e

    if config_path:
        path = Path(config_path)
        if not path.exists():
            raise UsageError(f"config file not found: {path}")
        for lineno, line in enumerate(path.read_text().splitlines(), start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{lineno}: expected key=value")
            key, _, raw = line.partition("=")
            apply(key.strip(), raw.strip(), f"{path}:{lineno}")
    for pair in flag_pairs:
        if "=" not in pair:
            raise UsageError(f"--set expects key=value, got {pair!r}")
        key, _, raw = pair.partition("=")
        apply(key.strip(), raw.strip(), "command line")

    if "seed" in cfg and os.environ.get("SURT_SEED"):
        cfg["seed"] = int(os.environ["SURT_SEED"])
    missing = [k for k, v in cfg.items() if v is None]
    if missing:
        raise UsageError(f"missing required settings: {', '.join(missing)}")
    return cfg


def _write_resolved(cfg: dict, out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    lines = "".join(f"{k}={cfg[k]}\n" for k in sorted(cfg))
    write_text_atomic(out_dir / "resolved_config.txt", lines)


def _prepare_out_dir(cfg: dict) -> Path:
    out = Path(cfg["out"])
    if out.exists() and any(out.iterdir()) and not cfg.get("force", False):
        raise UsageError(f"output directory {out} is not empty (use force=true)")
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_simulate(cfg: dict) -> int:
    out = _prepare_out_dir(cfg)
    corpus_kwargs = {f.name: cfg[f.name] for f in fields(CorpusSpec) if f.name != "seed"}
    corpus = make_corpus(CorpusSpec(seed=cfg["corpus_seed"], **corpus_kwargs))
    sess_cfg = SessionConfig(**{f.name: cfg[f.name] for f in fields(SessionConfig)})
    rng = np.random.default_rng(cfg["seed"] + 1)
    sessions = [
        make_session(corpus, sess_cfg, f"{cfg['session_prefix']}{i:04d}", rng)
        for i in range(cfg["sessions"])
    ]
    write_manifest(sessions, out)
    _write_resolved(cfg, out)
    stats = dataset_stats(sessions)
    print(f"sessions={stats['num_sessions']} groups={stats['num_groups']} "
          f"frames={stats['total_frames']}")
    print(f"overlap_pct={stats['overlap_pct']:.1f} "
          f"silence_pct={stats['silence_pct']:.1f}")
    return 0


def _load_or_init_model(cfg: dict) -> tuple[SurtModel, int]:
    start_step = 0
    if cfg["init"]:
        model = SurtModel.load(cfg["init"])
        state = Path(cfg["init"]).with_suffix(".state.json")
        if state.exists():
            start_step = json.loads(state.read_text()).get("steps", 0)
    else:
        mc = ModelConfig(**{f.name: cfg[f.name] for f in fields(ModelConfig)})
        model = SurtModel(mc)
    return model, start_step


def cmd_train(cfg: dict) -> int:
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    sessions = read_manifest(cfg["data"])
    items = build_train_items(sessions)
    model, start_step = _load_or_init_model(cfg)
    print(f"params={model.param_count()}")

    k_probs = tuple(float(p) for p in cfg["k_probs"].split(","))
    sampler = PrefixSampler(tau=model.config.tau, k_probs=k_probs) \
        if cfg["prefix"] else None
    ckpt = out / "model.ckpt"
    log_path = out / "train.log"
    log_lines: list[str] = []

    def log(line: str) -> None:
        print(line)
        log_lines.append(line)

    strategy = cfg["strategy"]
    if strategy == "sequential":
        stages = [("asr_only", None), ("speaker_only", sampler)]
    elif strategy == "joint":
        stages = [("joint", None)]
    elif strategy in ("asr_only", "speaker_only"):
        stages = [(strategy, sampler if strategy == "speaker_only" else None)]
    else:
        raise UsageError(f"unknown training strategy {strategy!r}")

    steps = start_step
    for mode, stage_sampler in stages:
        curve = train_model(
            model, items, mode, epochs=cfg["epochs"],
            batch_size=cfg["batch_size"], lr=cfg["lr"],
            warmup_steps=cfg["warmup_steps"], decay=cfg["decay"],
            seed=cfg["seed"], prefix_sampler=stage_sampler,
            asr_loss=cfg["asr_loss"], input_noise=cfg["input_noise"], log=log,
            checkpoint_path=ckpt, start_step=steps)
        steps += len(curve)
        model.save(ckpt)

    write_text_atomic(ckpt.with_suffix(".state.json"),
                      json.dumps({"steps": steps}) + "\n")
    write_text_atomic(log_path, "".join(line + "\n" for line in log_lines))
    _write_resolved(cfg, out)
    print(f"checkpoint={ckpt} steps={steps}")
    return 0


def cmd_decode(cfg: dict) -> int:
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    if cfg["mode"] not in ("none", "prefix", "enrollment"):
        raise UsageError(f"unknown decode mode {cfg['mode']!r}")
    model = SurtModel.load(cfg["checkpoint"])
    sessions = read_manifest(cfg["data"])
    transcripts = []
    failed = 0
    for sess in sessions:
        try:
            transcripts.append(decode_session(
                model, sess, mode=cfg["mode"], max_symbols=cfg["max_symbols"]))
        except DataError as e:
            failed += 1
            print(f"session {sess.session_id}: {e}", file=sys.stderr)
    write_transcript(transcripts, out / "transcript.jsonl")
    _write_resolved(cfg, out)
    clamped = sum(t.clamped for t in transcripts)
    print(f"decoded_sessions={len(transcripts)} failed={failed} "
          f"clamped_labels={clamped}")
    return 2 if failed else 0


def cmd_score(cfg: dict) -> int:
    sessions = read_manifest(cfg["ref"])
    hyp_groups = read_transcript(cfg["hyp"])
    report, per_session = score_sessions(sessions, hyp_groups)
    lines = report.summary_lines()
    for sid in sorted(per_session):
        d = per_session[sid]
        lines.append(f"session {sid} orc_wer={d['orc_wer']:.4f} "
                     f"cpwer={d['cpwer']:.4f} wder={d['wder']:.4f}")
    if cfg["bruteforce"]:
        lines.append(f"bruteforce_checked_groups={_bruteforce_check(sessions, hyp_groups)}")
    text = "\n".join(lines)
    print(text)
    if cfg["out"]:
        out = Path(cfg["out"])
        out.mkdir(parents=True, exist_ok=True)
        write_text_atomic(out / "report.txt", text + "\n")
        _write_resolved(cfg, out)
    return 0


def _bruteforce_check(sessions, hyp_groups) -> int:
    checked = 0
    for sess in sessions:
        for group, gh in zip(sess.groups, hyp_groups[sess.session_id]):
            utts = sorted(group.utterances, key=lambda u: u.start_frame)
            if len(utts) > 8:
                continue
            refs = [list(u.tokens) for u in utts]
            w, _, _ = orc_wer(refs, gh.tokens)
            wb = orc_wer_bruteforce(refs, gh.tokens)
            if abs(w - wb) > 1e-12:
                raise NumericalError(
                    f"ORC-WER mismatch vs enumeration in {sess.session_id}")
            checked += 1
        ref_by_spk: dict[int, list[int]] = {}
        for group in sess.groups:
            for u in sorted(group.utterances, key=lambda u: u.start_frame):
                ref_by_spk.setdefault(u.speaker, []).extend(u.tokens)
        hyp_by_spk: dict[int, list[int]] = {}
        for gh in hyp_groups[sess.session_id]:
            for ch in (0, 1):
                for tok, gid in zip(gh.tokens[ch], gh.globals[ch]):
                    hyp_by_spk.setdefault(gid, []).append(tok)
        if max(len(ref_by_spk), len(hyp_by_spk)) <= 6:
            w, _ = cpwer(ref_by_spk, hyp_by_spk)
            wb = cpwer_bruteforce(ref_by_spk, hyp_by_spk)
            if abs(w - wb) > 1e-12:
                raise NumericalError(
                    f"cpWER mismatch vs enumeration in {sess.session_id}")
    return checked


def _fd_max_rel_err(loss_fn, logits, eps: float = 1e-5) -> float:
    res = loss_fn(logits)
    worst = 0.0
    it = np.nditer(logits, flags=["multi_index"])
    while not it.finished:
        idx = it.multi_index
        lp = logits.copy(); lp[idx] += eps
        lm = logits.copy(); lm[idx] -= eps
        fd = (loss_fn(lp).loss - loss_fn(lm).loss) / (2 * eps)
        a = res.grad[idx]
        worst = max(worst, abs(a - fd) / (abs(a) + abs(fd) + 1e-12))
        it.iternext()
    return worst


def cmd_gradcheck(cfg: dict) -> int:
    rng = np.random.default_rng(cfg["seed"])
    worst_overall = 0.0
    for name in ("rnnt", "hat", "aux", "ctc"):
        worst = 0.0
        for _ in range(cfg["instances"]):
            t, u, v = 3, 2, 4
            labels = list(rng.integers(1, v + 1, size=u).astype(int))
            if name == "ctc":
                logits = rng.normal(size=(t + 2, v + 1))
                lp = logits - np.log(np.exp(logits).sum(axis=-1, keepdims=True))
                worst = max(worst, _fd_max_rel_err(
                    lambda z, lab=labels: lattice.ctc_loss(z, lab, check=False), lp))
            else:
                logits = rng.normal(size=(t, u + 1, v + 1))
                fn = {"rnnt": lattice.rnnt_loss, "hat": lattice.hat_loss,
                      "aux": lattice.aux_hat_loss}[name]
                worst = max(worst, _fd_max_rel_err(
                    lambda z, lab=labels, f=fn: f(z, lab), logits))
        print(f"loss={name} max_rel_err={worst:.3e}")
        worst_overall = max(worst_overall, worst)
    if worst_overall > cfg["threshold"]:
        raise NumericalError(
            f"gradient check failed: {worst_overall:.3e} > {cfg['threshold']:.1e}")
    print("gradcheck ok")
    return 0


def cmd_dump_embeddings(cfg: dict) -> int:
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    model = SurtModel.load(cfg["checkpoint"])
    sessions = read_manifest(cfg["data"])
    vectors: dict[str, np.ndarray] = {}
    for sess in sessions:
        for gi, group in enumerate(sess.groups):
            _, f_aux = encode_features(model, group.mixture)
            h1, h2 = greedy_joint_decode(model, group.mixture)
            per_spk: dict[int, list[np.ndarray]] = {}
            for ch, hyp in enumerate((h1, h2)):
                for e in hyp.emissions:
                    per_spk.setdefault(e.rel_speaker, []).append(f_aux[ch, e.frame])
            for k, vecs in sorted(per_spk.items()):
                name = f"{sess.session_id}.g{gi}.k{k}"
                vectors[name] = np.mean(vecs, axis=0)
    write_tensors(out / "embeddings.bin", vectors)
    _write_resolved(cfg, out)
    print(f"embeddings={len(vectors)}")
    return 0


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

_HANDLERS = {
    "simulate": cmd_simulate,
    "train": cmd_train,
    "decode": cmd_decode,
    "score": cmd_score,
    "gradcheck": cmd_gradcheck,
    "dump-embeddings": cmd_dump_embeddings,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="surtkit",
        description="Streaming multi-talker speech recognition toolkit "
                    "(simulation, training, decoding, scoring).")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, spec in _SPECS.items():
        p = sub.add_parser(name, help=f"{name} command")
        p.add_argument("--config", default=None,
                       help="key=value settings file (flags take precedence)")
        p.add_argument("--set", dest="pairs", action="append", default=[],
                       metavar="KEY=VALUE", help="override one setting")
        for key, (_, default, help_) in spec.items():
            p.add_argument(f"--{key.replace('_', '-')}",
                           dest=f"kv_{key}", default=None, metavar="V",
                           help=f"{help_} (default: {default})")
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return 0 if e.code == 0 else 1
    pairs = list(args.pairs)
    for key in _SPECS[args.command]:
        raw = getattr(args, f"kv_{key}", None)
        if raw is not None:
            pairs.append(f"{key}={raw}")
    try:
        cfg = resolve_config(args.command, args.config, pairs)
        return _HANDLERS[args.command](cfg)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except DataError as e:
        print(f"data error: {e}", file=sys.stderr)
        return 2
    except NumericalError as e:
        print(f"numerical error: {e}", file=sys.stderr)
        return 3
    except SurtError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
