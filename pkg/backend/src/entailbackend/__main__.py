"""Service entry point.

Stub mode serves a transcript world; real mode loads model weights.  One
process serves one role's identity via /v1/info (pass --role) but may mount
both routes.
"""

from __future__ import annotations

import argparse
import json
from pathlib import Path

import uvicorn

from .config import BackendConfig
from .service import create_app
from .stub import load_transcript


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="entail-backend")
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--port", type=int, default=8100)
    parser.add_argument("--role", choices=["generator", "entailer"], default="entailer",
                        help="whose identity /v1/info reports")
    parser.add_argument("--stub", help="serve this transcript file instead of real models")
    parser.add_argument("--generator-model", help="HF id or path of the generator")
    parser.add_argument("--entailer-model", help="HF id or path of the entailment scorer")
    parser.add_argument("--device", default="cpu")
    parser.add_argument("--info-json", help="declared /v1/info payloads, JSON file with "
                                            "'generator' and/or 'entailer' objects")
    parser.add_argument("--max-input-tokens", type=int, default=2048)
    parser.add_argument("--no-truncate", action="store_true")
    parser.add_argument("--renormalize-class-tokens", action="store_true")
    return parser


def main(argv=None) -> None:
    args = build_parser().parse_args(argv)
    if args.stub:
        transcript = load_transcript(args.stub)
        app = create_app(
            generator=transcript.generator,
            entailer=transcript.entailer,
            info_role=args.role,
        )
    else:
        from .real import RealEntailBackend, RealGeneratorBackend

        if not args.info_json:
            raise SystemExit("real mode needs --info-json with declared shapes")
        declared = json.loads(Path(args.info_json).read_text(encoding="utf-8"))
        config = BackendConfig(
            generator_model=args.generator_model,
            entailer_model=args.entailer_model,
            device=args.device,
            truncate_inputs=not args.no_truncate,
            max_input_tokens=args.max_input_tokens,
            renormalize_over_class_tokens=args.renormalize_class_tokens,
        )
        generator = (
            RealGeneratorBackend(config, declared["generator"]) if args.generator_model else None
        )
        entailer = (
            RealEntailBackend(config, declared["entailer"]) if args.entailer_model else None
        )
        app = create_app(generator=generator, entailer=entailer, info_role=args.role)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")


if __name__ == "__main__":
    main()
