from __future__ import annotations

import argparse
import logging
import sys
import time
from dataclasses import replace
from typing import List, Optional

from .baseline_hashes import baseline_hash
from .challenge_protocol import AuditLog, ChallengeProtocol
from .config import (
    BaselineConfig,
    ChallengeConfig,
    CliConfig,
    EvalConfig,
    SchemeConfig,
    _get_key,
    _get_store_path,
)
from .embedding_io import load_dataset, load_embedding, write_dataset
from .errors import CharvocError, StoreError, UnknownUserError
from .evaluation import baseline_params_from, bench_template_generation, generate_synthetic
from .hashgray_xor import protect
from .models import KeyPolicy, ProtectedRecord, SchemeName, SchemeParams, SecretKey
from .pipeline import expand_schemes, format_report, run_evaluation
from .session_table import SessionTable
from .template_store import TemplateStore

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_REJECTED = 1
EXIT_USAGE = 2
EXIT_STORE = 3
EXIT_UNKNOWN_USER = 4


def _configure_logging(verbose: bool) -> None:
    # force=True rebinds to the current stderr on every invocation
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
        force=True,
    )


def _resolve_key(flag_value: Optional[str]) -> SecretKey:
    text = _get_key() or (flag_value or "")
    if not text:
        raise ValueError("no secret key: set CHARVOC_KEY or pass --key")
    return SecretKey.from_text(text)


def _cli_config(args: argparse.Namespace) -> CliConfig:
    return CliConfig(store_path=args.store or _get_store_path(), seed=getattr(args, "seed", 7))


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_enroll(args: argparse.Namespace) -> int:
    cfg = _cli_config(args)
    scheme = SchemeName.parse(args.scheme)
    k = _resolve_key(args.key)
    e = load_embedding(args.embedding, args.index)

    if scheme is SchemeName.CHARVOC:
        sc = SchemeConfig(args.precision, args.bits, args.dim, args.hash, args.threshold)
        params = sc.params()
        template = protect(k, e, params)
    else:
        bc = BaselineConfig(args.m_codes, args.window_k, args.proj_q, args.roe_dim)
        params = baseline_params_from(bc, scheme)
        template = baseline_hash(e, params.with_key(k))

    record = ProtectedRecord(
        user_id=args.user,
        scheme=scheme,
        params=params,
        template=template,
        threshold=args.threshold,
        created_at=int(time.time()),
    )
    generation = TemplateStore(cfg.store_path).enroll(args.user, record)
    print(f"generation={generation}")
    return EXIT_OK


def cmd_revoke(args: argparse.Namespace) -> int:
    cfg = _cli_config(args)
    if not TemplateStore(cfg.store_path).revoke(args.user):
        raise UnknownUserError(f"user {args.user!r} has no active record")
    print("revoked")
    return EXIT_OK


def cmd_challenge(args: argparse.Namespace) -> int:
    cfg = _cli_config(args)
    cfg.challenge = ChallengeConfig(length=args.length, ttl_seconds=args.ttl)
    store = TemplateStore(cfg.store_path)
    sessions = SessionTable(cfg.session_path)

    if args.insecure_deterministic:
        # offset by the issued count so repeated scripted calls stay distinct
        cfg.challenge = replace(cfg.challenge, insecure_seed=args.seed + sessions.issued_total)

    protocol = ChallengeProtocol(store, cfg.challenge, sessions, AuditLog(cfg.audit_path))
    c = protocol.issue_challenge(args.user)
    print(f"session={c.session_id}")
    print(f"digits={c.digits}")
    return EXIT_OK


def cmd_authenticate(args: argparse.Namespace) -> int:
    cfg = _cli_config(args)
    k = _resolve_key(args.key)
    probe = load_embedding(args.embedding, args.index)
    cfg.challenge = ChallengeConfig(uniform_rejection=args.uniform_rejection)

    protocol = ChallengeProtocol(
        TemplateStore(cfg.store_path),
        cfg.challenge,
        SessionTable(cfg.session_path),
        AuditLog(cfg.audit_path),
    )
    decision = protocol.authenticate(args.user, args.session, args.transcript, k, probe)

    if decision.match is not None:
        print(f"{decision.public_outcome} sim={decision.match.similarity:.3f}")
    else:
        print(decision.public_outcome)
    return EXIT_OK if decision.accepted else EXIT_REJECTED


def _eval_config(args: argparse.Namespace) -> EvalConfig:
    return EvalConfig(
        speakers=args.speakers,
        utterances=args.utterances,
        dim=args.dim,
        sigma_within=args.sigma_within,
        sigma_between=args.sigma_between,
        seed=args.seed,
        precision_p=getattr(args, "precision", 2),
        bits_l=getattr(args, "bits", 7),
        hash_id=getattr(args, "hash", "sha256"),
        impostor_cap=getattr(args, "impostor_cap", 10),
        unlinkability_bins=getattr(args, "bins", 100),
    )


def cmd_synth(args: argparse.Namespace) -> int:
    cfg = _eval_config(args)
    ds = generate_synthetic(
        cfg.speakers, cfg.utterances, cfg.dim, cfg.sigma_within, cfg.sigma_between, cfg.seed
    )
    path = write_dataset(ds, args.out)
    n = sum(len(v) for v in ds.embeddings.values())
    print(f"wrote {n} embeddings ({len(ds.speakers)} speakers, dim {ds.dim}) to {path}")
    return EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    cfg = _eval_config(args)
    if args.data:
        ds = load_dataset(args.data)
        cfg.dim = ds.dim
    else:
        ds = generate_synthetic(
            cfg.speakers, cfg.utterances, cfg.dim, cfg.sigma_within, cfg.sigma_between, cfg.seed
        )

    report = run_evaluation(
        ds,
        schemes=args.scheme,
        key_policy=KeyPolicy(args.key_policy),
        cfg=cfg,
        out_dir=args.out,
        include_reference=not args.no_reference,
        with_unlinkability=not args.no_unlinkability,
    )
    sys.stdout.write(format_report(report))
    if args.calibrate:
        for name, m in report["metrics"].items():
            print(f"calibrated_threshold[{name}]={m.threshold_at_eer:.6f}")
    return EXIT_OK


def cmd_bench(args: argparse.Namespace) -> int:
    for scheme in expand_schemes(args.scheme):
        if scheme is SchemeName.CHARVOC:
            params = SchemeParams(args.precision, args.bits, args.dim, args.hash)
        else:
            params = baseline_params_from(BaselineConfig(), scheme)
        res = bench_template_generation(scheme, params, trials=args.trials, seed=args.seed, dim=args.dim)
        print(f"{res.scheme} d={res.dim} trials={res.trials} median={res.median_s:.6f}s p95={res.p95_s:.6f}s")
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def _add_store(p: argparse.ArgumentParser) -> None:
    p.add_argument("--store", default=None, help="record log path (default: $CHARVOC_STORE or data/charvoc/records.log)")


def _add_synth_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--speakers", type=int, default=50)
    p.add_argument("--utterances", type=int, default=10)
    p.add_argument("--dim", type=int, default=192)
    p.add_argument("--sigma-within", type=float, default=0.3)
    p.add_argument("--sigma-between", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=7)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="charvoc", description="Cancelable voice templates with challenge-response liveness.")
    p.add_argument("--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("enroll", help="protect an embedding and store it")
    s.add_argument("--user", required=True)
    s.add_argument("--key", default=None, help="secret key (prefer $CHARVOC_KEY)")
    s.add_argument("--embedding", required=True)
    s.add_argument("--index", type=int, default=0, help="which vector of the file to use")
    s.add_argument("--scheme", default=SchemeName.CHARVOC.value)
    s.add_argument("--precision", type=int, default=4)
    s.add_argument("--bits", type=int, default=15)
    s.add_argument("--dim", type=int, default=1024)
    s.add_argument("--hash", default="sha256")
    s.add_argument("--threshold", type=float, default=0.6)
    s.add_argument("--m-codes", type=int, default=300)
    s.add_argument("--window-k", type=int, default=16)
    s.add_argument("--proj-q", type=int, default=16)
    s.add_argument("--roe-dim", type=int, default=64)
    _add_store(s)
    s.set_defaults(func=cmd_enroll)

    s = sub.add_parser("revoke", help="revoke every active record of a user")
    s.add_argument("--user", required=True)
    _add_store(s)
    s.set_defaults(func=cmd_revoke)

    s = sub.add_parser("challenge", help="issue a spoken-digit challenge")
    s.add_argument("--user", required=True)
    s.add_argument("--length", type=int, default=6)
    s.add_argument("--ttl", type=float, default=60.0)
    s.add_argument("--insecure-deterministic", action="store_true", help="seeded challenges, scripted tests only")
    s.add_argument("--seed", type=int, default=7)
    _add_store(s)
    s.set_defaults(func=cmd_challenge)

    s = sub.add_parser("authenticate", help="answer a challenge")
    s.add_argument("--user", required=True)
    s.add_argument("--session", required=True)
    s.add_argument("--transcript", required=True)
    s.add_argument("--key", default=None, help="secret key (prefer $CHARVOC_KEY)")
    s.add_argument("--embedding", required=True)
    s.add_argument("--index", type=int, default=0)
    s.add_argument("--uniform-rejection", action="store_true")
    _add_store(s)
    s.set_defaults(func=cmd_authenticate)

    s = sub.add_parser("synth", help="write a synthetic speaker dataset")
    _add_synth_flags(s)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("eval", help="score schemes and report EER/AUC/unlinkability")
    _add_synth_flags(s)
    s.add_argument("--data", default=None, help="speaker-prefixed embedding file (default: synthesize)")
    s.add_argument("--scheme", default="all", help="all, or a comma list of ChaRVoC/WTA/IoM/RoE/cosine")
    s.add_argument("--key-policy", default=KeyPolicy.PER_USER_KEY.value, choices=[k.value for k in KeyPolicy])
    s.add_argument("--precision", type=int, default=2)
    s.add_argument("--bits", type=int, default=7)
    s.add_argument("--hash", default="sha256")
    s.add_argument("--impostor-cap", type=int, default=10)
    s.add_argument("--bins", type=int, default=100)
    s.add_argument("--no-reference", action="store_true")
    s.add_argument("--no-unlinkability", action="store_true")
    s.add_argument("--calibrate", action="store_true")
    s.add_argument("--out", default=None)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("bench", help="time template generation")
    s.add_argument("--scheme", default=SchemeName.CHARVOC.value)
    s.add_argument("--trials", type=int, default=100)
    s.add_argument("--dim", type=int, default=1024)
    s.add_argument("--precision", type=int, default=4)
    s.add_argument("--bits", type=int, default=15)
    s.add_argument("--hash", default="sha256")
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_bench)

    return p


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)

    _configure_logging(args.verbose)
    try:
        return args.func(args)
    except UnknownUserError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_UNKNOWN_USER
    except StoreError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_STORE
    except (CharvocError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
