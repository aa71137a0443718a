"""
Command-line front end.

    seamweld stitch a.png b.png --homography h.txt -o out.png
    seamweld seam a.png b.png -o overlay.png --labels labels.png
    seamweld maps a.png b.png --out-dir dumps/
    seamweld oracle instance.txt

Exit status: 0 on success, 1 on a usage error, 2 when the input data is
unusable (unreadable image, no overlap, oversized oracle instance, ...).
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import blend as blend_mod
from .energy import read_instance, write_instance
from .errors import SeamweldError
from .imgcore import save_gray8, save_image
from .mincut import ALGORITHMS, BRUTE_FORCE_LIMIT, DEFAULT_ALGORITHM, brute_force_min
from .pipeline import StitchConfig, StitchReport, downscale_pair, dump_maps, find_seam, load_pair, stitch

log = logging.getLogger("seamweld")

EXIT_USAGE = 1
EXIT_DATA = 2

# gray levels of the labeling file
LABEL_LEVELS = {0: 0, 1: 255, blend_mod.UNCOVERED: 128}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _positive_float(text: str) -> float:
    value = float(text)
    if not value > 0:
        raise argparse.ArgumentTypeError(f"expected a positive number, got {text}")
    return value


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return value


def _add_pair_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("image0", help="reference image (PNG or PPM)")
    p.add_argument("image1", help="second image, warped into the reference frame if --homography is given")
    p.add_argument("--homography", metavar="FILE", help="3x3 matrix mapping image1 pixels into image0 coordinates")
    p.add_argument("--mask0", metavar="PNG", help="validity mask for image0 (nonzero = inside)")
    p.add_argument("--mask1", metavar="PNG", help="validity mask for image1")


def _add_seam_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--epsilon", type=_positive_float, default=0.06, help="histogram bin width (default 0.06)")
    p.add_argument("--passes", type=_positive_int, default=3, help="saliency raster-scan passes (default 3)")
    p.add_argument("--metric", choices=("euclidean", "sigmoid"), default="sigmoid")
    p.add_argument("--no-saliency", dest="use_saliency", action="store_false", help="use unit edge weights")
    p.add_argument("--maxflow", choices=ALGORITHMS, default=DEFAULT_ALGORITHM, help="max-flow algorithm")
    p.add_argument("--max-dim", type=_positive_int, metavar="N",
                   help="preview only: area-downscale so the canvas fits in N pixels; output stays at reduced size")
    p.add_argument("--no-timings", dest="timings", action="store_false", help="omit time_* lines from the report")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="seamweld", description="Graph-cut seam finding and compositing for two aligned images.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    st = sub.add_parser("stitch", help="full pipeline: seam, then composite")
    _add_pair_args(st)
    _add_seam_args(st)
    st.add_argument("-o", "--output", required=True, help="composite image path (.png or .ppm)")
    st.add_argument("--blend", choices=("none", "poisson"), default="poisson")
    st.add_argument("--tol", type=_positive_float, default=1e-4, help="Poisson max-residual tolerance")
    st.add_argument("--max-iter", type=_positive_int, help="Poisson iteration cap")
    st.add_argument("--preconditioner", choices=("amg", "jacobi"), default="amg")
    st.add_argument("--dump-dir", metavar="DIR", help="also write difference, saliency and seam maps here")

    se = sub.add_parser("seam", help="compute the seam only; write an overlay and a labeling file")
    _add_pair_args(se)
    _add_seam_args(se)
    se.add_argument("-o", "--output", required=True, help="seam overlay image path")
    se.add_argument("--labels", metavar="PNG",
                    help="labeling raster: 0 = image0, 255 = image1, 128 = uncovered (default: <output>_labels.png)")
    se.add_argument("--instance", metavar="FILE", help="also write the energy instance in text form")

    mp = sub.add_parser("maps", help="write the difference, sigmoid and saliency maps")
    _add_pair_args(mp)
    _add_seam_args(mp)
    mp.add_argument("--out-dir", required=True, metavar="DIR")

    orc = sub.add_parser("oracle", help="exhaustively minimize a serialized instance")
    orc.add_argument("instance", help="instance text file written by 'seam --instance'")
    orc.add_argument("--limit", type=_positive_int, default=BRUTE_FORCE_LIMIT,
                     help=f"refuse instances with more pixels (default {BRUTE_FORCE_LIMIT})")
    return parser


def _config(args, **extra) -> StitchConfig:
    try:
        return StitchConfig(
            epsilon=args.epsilon,
            passes=args.passes,
            metric=args.metric,
            use_saliency=args.use_saliency,
            max_dim=args.max_dim,
            maxflow=args.maxflow,
            **extra,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def _masks(args):
    if (args.mask0 is None) != (args.mask1 is None):
        raise UsageError("--mask0 and --mask1 must be given together")
    return None if args.mask0 is None else (args.mask0, args.mask1)


def _seam(args, config: StitchConfig):
    report = StitchReport()
    pair = load_pair(args.image0, args.image1, args.homography, _masks(args))
    if config.max_dim is not None:
        pair = downscale_pair(pair, config.max_dim)
    return find_seam(pair, config, report)


def _labels_path(args) -> Path:
    if args.labels:
        return Path(args.labels)
    out = Path(args.output)
    return out.with_name(out.stem + "_labels.png")


def cmd_stitch(args) -> int:
    config = _config(args, blend=args.blend, tol=args.tol, max_iter=args.max_iter,
                     preconditioner=args.preconditioner, dump_dir=args.dump_dir)
    out, report = stitch(config, args.image0, args.image1, args.homography, _masks(args))
    save_image(out, args.output)
    sys.stdout.write(report.to_text(args.timings))
    return 0


def cmd_seam(args) -> int:
    seam = _seam(args, _config(args))
    overlays = blend_mod.render_overlays(seam.pair, seam.plan)
    save_image(overlays["seam"], args.output)
    levels = np.zeros(seam.plan.source.shape, dtype=np.uint8)
    for label, level in LABEL_LEVELS.items():
        levels[seam.plan.source == label] = level
    save_gray8(levels, _labels_path(args))
    if args.instance:
        write_instance(seam.model, args.instance)
    sys.stdout.write(seam.report.to_text(args.timings))
    return 0


def cmd_maps(args) -> int:
    seam = _seam(args, _config(args))
    for path in dump_maps(seam, args.out_dir):
        print(path)
    return 0


def cmd_oracle(args) -> int:
    model = read_instance(args.instance)
    res = brute_force_min(model, args.limit)
    print(f"pixels={model.size}")
    print(f"energy={res.energy!r}")
    print("labels=" + "".join(str(int(b)) for b in res.labels))
    return 0


COMMANDS = {"stitch": cmd_stitch, "seam": cmd_seam, "maps": cmd_maps, "oracle": cmd_oracle}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"seamweld: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (SeamweldError, OSError, ValueError) as exc:
        print(f"seamweld: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
