"""
Command-line surface for the biometric-attested supply-chain ledger.

All results are JSON on stdout; diagnostics go to stderr.
Exit codes: 0 ok, 1 domain failure, 2 usage, 3 IO or unreadable file format.
"""

import argparse
import logging
import os
import sys
from typing import Any, List, Optional, Tuple

from utils.biometrics import ActorRegistry, ActorRole, derive_key
from utils.chain_store import (
    decode_chain,
    dumps,
    export_chain,
    load_key,
    load_registry,
    load_template,
    save_key,
    save_registry,
    tamper_bytes,
    write_chain,
    write_json,
)
from utils.config import settings
from utils.errors import BBCError, ChainFormatError, TruncatedChainError
from utils.ledger import Chain, ChainFailure, FailureKind, Stage, ValidationFailure, validate_chain
from utils.logging_setup import configure_logging
from utils.provenance import audit_labels, build_index, responsible_actor, to_json_list, trace_item
from utils.scenario import load_scenario, run_scenario

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2
EXIT_IO = 3


def emit(data: Any) -> None:
    print(dumps(data))


def _read_bytes(path: str) -> bytes:
    with open(path, 'rb') as f:
        return f.read()


def _registry_and_threshold(args: argparse.Namespace) -> Tuple[ActorRegistry, int]:
    """--threshold beats the scenario's threshold, which beats the environment."""
    if args.scenario:
        scenario = load_scenario(args.scenario)
        registry, threshold = scenario.registry, scenario.threshold
    else:
        registry, threshold = load_registry(args.registry), settings.threshold
    if args.threshold is not None:
        threshold = args.threshold
    return registry, threshold


# Commands

def cmd_keygen(args: argparse.Namespace) -> int:
    key = derive_key(args.seed, args.key_id)
    save_key(args.out, key)
    emit({'success': True, 'key_id': key.key_id, 'path': args.out})
    return EXIT_OK


def cmd_enroll(args: argparse.Namespace) -> int:
    registry = load_registry(args.registry) if os.path.exists(args.registry) else ActorRegistry()
    record = registry.enroll(args.actor_id, ActorRole.parse(args.role),
                             load_template(args.template), load_key(args.key))
    save_registry(args.registry, registry)
    emit({'success': True, 'actor_id': record.actor_id, 'role': record.role.name, 'actors': len(registry)})
    return EXIT_OK


def cmd_run_sim(args: argparse.Namespace) -> int:
    scenario = load_scenario(args.scenario)
    result = run_scenario(scenario, record_trace=bool(args.trace))
    write_chain(args.out, result.chain)
    if args.trace:
        result.network.write_trace(args.trace)
    if args.registry_out:
        save_registry(args.registry_out, scenario.registry)

    summary = result.summary()
    emit(summary)
    if result.budget_exceeded:
        print(f"❌ Tick budget exceeded at tick {result.final_tick}", file=sys.stderr)
        return EXIT_FAILURE
    return EXIT_OK


def _verify_chain(path: str, registry: ActorRegistry, threshold: int,
                  expected_head: Optional[bytes]) -> Tuple[Optional[Chain], Optional[ChainFailure]]:
    try:
        chain = decode_chain(_read_bytes(path))
    except ChainFormatError as e:
        if e.block_index is None or isinstance(e, TruncatedChainError):
            raise
        return None, ChainFailure(e.block_index, ValidationFailure(FailureKind.MALFORMED_BLOCK, detail=e.message))
    return chain, validate_chain(chain, registry, threshold, expected_head)


def cmd_verify(args: argparse.Namespace) -> int:
    registry, threshold = _registry_and_threshold(args)
    chain, failure = _verify_chain(args.chain, registry, threshold, args.expected_head)
    if failure is not None:
        emit({'valid': False, **failure.to_dict()})
        print(f"❌ Chain fails at height {failure.height}: {failure.failure.kind.value}", file=sys.stderr)
        return EXIT_FAILURE
    emit({'valid': True, 'blocks': len(chain.blocks), 'height': chain.height,
          'committed_txs': chain.tx_count(), 'head_hash': chain.tip.hash.hex()})
    return EXIT_OK


def _indexed(args: argparse.Namespace):
    registry, threshold = _registry_and_threshold(args)
    chain = decode_chain(_read_bytes(args.chain))
    return build_index(chain, registry, threshold), chain


def cmd_trace(args: argparse.Namespace) -> int:
    index, chain = _indexed(args)
    emit(to_json_list(trace_item(index, chain, args.item)))
    return EXIT_OK


def cmd_audit(args: argparse.Namespace) -> int:
    index, chain = _indexed(args)
    if args.item not in index:
        emit([])
        return EXIT_OK
    emit(to_json_list(audit_labels(index, chain, args.item)))
    return EXIT_OK


def cmd_responsible(args: argparse.Namespace) -> int:
    index, chain = _indexed(args)
    stage = Stage.parse(args.stage)
    emit({'item_id': args.item, 'stage': stage.name,
          'actor_id': responsible_actor(index, chain, args.item, stage)})
    return EXIT_OK


def cmd_tamper(args: argparse.Namespace) -> int:
    data = _read_bytes(args.chain)
    mutated = tamper_bytes(data, args.block, args.offset, args.xor)
    out = args.out or args.chain
    with open(out, 'wb') as f:
        f.write(mutated)
    emit({'success': True, 'block': args.block, 'offset': args.offset, 'xor': args.xor, 'path': out})
    return EXIT_OK


def cmd_export(args: argparse.Namespace) -> int:
    view = export_chain(decode_chain(_read_bytes(args.chain)))
    if args.out:
        write_json(args.out, view)
        emit({'success': True, 'path': args.out, 'blocks': len(view['blocks'])})
    else:
        emit(view)
    return EXIT_OK


# Parser

def _hex_hash(value: str) -> bytes:
    try:
        digest = bytes.fromhex(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a hex string: {value!r}")
    if len(digest) != 32:
        raise argparse.ArgumentTypeError("expected a 32-byte hash (64 hex digits)")
    return digest


def _add_registry_source(parser: argparse.ArgumentParser) -> None:
    source = parser.add_mutually_exclusive_group(required=True)
    source.add_argument('--registry', help="registry JSON written by 'enroll' or 'run-sim --registry-out'")
    source.add_argument('--scenario', help="scenario JSON whose actors form the registry")
    parser.add_argument('--threshold', type=int, help="override the match threshold")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog='bbc', description="Biometric-attested food supply ledger")
    sub = parser.add_subparsers(dest='command', required=True)

    p = sub.add_parser('keygen', help="derive a scrambling key file")
    p.add_argument('--seed', type=int, required=True)
    p.add_argument('--key-id', type=int, required=True)
    p.add_argument('--out', required=True)
    p.set_defaults(func=cmd_keygen)

    p = sub.add_parser('enroll', help="enroll an actor into a registry file")
    p.add_argument('--registry', required=True)
    p.add_argument('--actor-id', type=int, required=True)
    p.add_argument('--role', required=True, choices=[r.name for r in ActorRole] + [r.name.lower() for r in ActorRole])
    p.add_argument('--template', required=True)
    p.add_argument('--key', required=True)
    p.set_defaults(func=cmd_enroll)

    p = sub.add_parser('run-sim', help="run a scenario and write node 0's chain")
    p.add_argument('scenario')
    p.add_argument('--out', required=True)
    p.add_argument('--trace', help="write the message trace as JSON lines")
    p.add_argument('--registry-out', help="write the scenario's registry JSON")
    p.set_defaults(func=cmd_run_sim)

    p = sub.add_parser('verify', help="validate a chain file")
    p.add_argument('chain')
    _add_registry_source(p)
    p.add_argument('--expected-head', type=_hex_hash, help="trusted hex hash of the last block")
    p.set_defaults(func=cmd_verify)

    for name, func, text in (('trace', cmd_trace, "custody trace of an item"),
                             ('audit', cmd_audit, "ingredient-label audit of an item")):
        p = sub.add_parser(name, help=text)
        p.add_argument('chain')
        p.add_argument('--item', required=True)
        _add_registry_source(p)
        p.set_defaults(func=func)

    p = sub.add_parser('responsible', help="actor who attested an item's stage")
    p.add_argument('chain')
    p.add_argument('--item', required=True)
    p.add_argument('--stage', required=True, choices=[s.name for s in Stage] + [s.name.lower() for s in Stage])
    _add_registry_source(p)
    p.set_defaults(func=cmd_responsible)

    p = sub.add_parser('tamper', help="flip one byte of a block in a chain file")
    p.add_argument('chain')
    p.add_argument('--block', type=int, required=True)
    p.add_argument('--offset', type=int, required=True)
    p.add_argument('--xor', type=int, default=0xFF)
    p.add_argument('--out')
    p.set_defaults(func=cmd_tamper)

    p = sub.add_parser('export', help="lossless JSON view of a chain file")
    p.add_argument('chain')
    p.add_argument('--out')
    p.set_defaults(func=cmd_export)

    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging(settings.log_level, settings.log_format)
    try:
        return args.func(args)
    except ChainFormatError as e:
        emit(e.to_dict())
        print(f"❌ {e.message}", file=sys.stderr)
        return EXIT_IO
    except BBCError as e:
        emit(e.to_dict())
        print(f"❌ {e.code}: {e.message}", file=sys.stderr)
        return EXIT_FAILURE
    except OSError as e:
        emit({'success': False, 'code': 'IO_ERROR', 'error': str(e)})
        print(f"❌ {e}", file=sys.stderr)
        return EXIT_IO


if __name__ == '__main__':
    sys.exit(main())
