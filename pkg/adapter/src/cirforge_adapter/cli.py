"""cirforge-export: push real encoder embeddings into CIREMB01 stores."""

from __future__ import annotations

import argparse
import logging
import sys

from .backends import DEFAULT_CLIP_MODEL, DEFAULT_SENTENCE_MODEL
from .export import ExportJob, export_caption_embeddings, export_global_image_text_features
from .store_format import AdapterError


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cirforge-export",
        description="Export caption (and optionally image) embeddings for the retrieval engine.",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
    )
    parser.add_argument("--captions", required=True, help="corpus JSON-lines file")
    parser.add_argument("--out", required=True, help="output caption store path")
    parser.add_argument("--model", default=None,
                        help=f"model identifier (default {DEFAULT_SENTENCE_MODEL}, "
                             f"or {DEFAULT_CLIP_MODEL} with --images)")
    parser.add_argument("--images", default=None,
                        help="directory of <id>.jpg|jpeg|png files; switches to paired export")
    parser.add_argument("--image-out", default=None,
                        help="output image store path (required with --images)")
    parser.add_argument("--batch-size", type=int, default=32)
    parser.add_argument("--dim", type=int, default=None,
                        help="fail unless the model produces exactly this dimension")
    parser.add_argument("--device", default=None, help="backend device hint, e.g. cpu")
    parser.add_argument("--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        if args.images:
            if not args.image_out:
                raise AdapterError("--images requires --image-out")
            job = ExportJob(
                captions_path=args.captions, out_path=args.out,
                model=args.model or DEFAULT_CLIP_MODEL,
                batch_size=args.batch_size, device=args.device, dim=args.dim,
                images_dir=args.images, image_out_path=args.image_out,
            )
            images, captions = export_global_image_text_features(job)
            print(f"exported {captions} caption and {images} image vectors")
        else:
            job = ExportJob(
                captions_path=args.captions, out_path=args.out,
                model=args.model or DEFAULT_SENTENCE_MODEL,
                batch_size=args.batch_size, device=args.device, dim=args.dim,
            )
            count = export_caption_embeddings(job)
            print(f"exported {count} caption vectors")
        return 0
    except AdapterError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
