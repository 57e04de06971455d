"""``fmc`` command-line interface.

Exit codes: 0 success, 1 failed self-test, 2 malformed input, 3 infeasible plan.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys

from .codec import EncodedStream, compress_featuremap, decompress_featuremap, reconstruction_error
from .core_types import FeatureMap, FixedPointFormat
from .errors import ConfigError, InfeasiblePlanError, MalformedStreamError
from .formats import read_tensor, write_tensor

EXIT_OK, EXIT_FAIL, EXIT_MALFORMED, EXIT_INFEASIBLE = 0, 1, 2, 3


def _load_fm(path) -> FeatureMap:
    data, frac = read_tensor(path)
    fmt = FixedPointFormat(16, frac) if frac is not None else FixedPointFormat()
    return FeatureMap(data, fmt)


def _cmd_compress(args) -> int:
    fm = _load_fm(args.input)
    s = compress_featuremap(fm, level=args.level, m=args.m,
                            per_block_scale=not args.per_channel)
    with open(args.output, "wb") as fh:
        fh.write(s.to_bytes())
    print(f"{args.output}: {s.total_bits // 8} bytes, "
          f"ratio {s.total_bits / fm.origin_bits:.4%}")
    return EXIT_OK


def _cmd_decompress(args) -> int:
    with open(args.input, "rb") as fh:
        s = EncodedStream.from_bytes(fh.read())
    fm = decompress_featuremap(s)
    write_tensor(args.output, fm.data, args.frac)
    print(f"{args.output}: {fm.channels}x{fm.height}x{fm.width}")
    return EXIT_OK


def _cmd_roundtrip(args) -> int:
    fm = _load_fm(args.input)
    s = compress_featuremap(fm, level=args.level, m=args.m,
                            per_block_scale=not args.per_channel)
    rec = decompress_featuremap(s, fmt=fm.fmt)
    max_err, psnr = reconstruction_error(fm, rec)
    print(f"ratio      {s.total_bits / fm.origin_bits:.4%}")
    print(f"max error  {max_err:.6g}")
    print(f"psnr       {psnr:.3f} dB")
    return EXIT_OK


def _cmd_run(args) -> int:
    from .pipeline import run_network

    result = run_network(args.config, args.input)
    for r in result.reports:
        print(f"{r.name:<16} ratio {r.ratio:8.4%}  max err {r.max_abs_error:10.4g}  "
              f"tiles {r.tiling.tiles}  cycles {r.cycles}")
    print(f"overall ratio {result.summary['overall_ratio']:.4%}")
    if args.report:
        with open(args.report, "w") as fh:
            json.dump(result.to_dict(), fh, indent=2)
    if args.output:
        write_tensor(args.output, result.output.data)
    return EXIT_OK


def _cmd_selftest(args) -> int:
    from . import selftest

    return EXIT_OK if selftest.run(seed=args.seed) else EXIT_FAIL


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fmc", description="Feature-map compression toolkit")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def codec_opts(sp):
        sp.add_argument("--level", type=int, default=1, choices=range(4))
        sp.add_argument("--m", type=int, default=8, choices=range(2, 16), metavar="M")
        sp.add_argument("--per-channel", action="store_true",
                        help="one GEMM scale per channel instead of per block")

    sp = sub.add_parser("compress", help="compress an FMAP tensor to an FMCZ stream")
    sp.add_argument("input")
    sp.add_argument("-o", "--output", required=True)
    codec_opts(sp)
    sp.set_defaults(func=_cmd_compress)

    sp = sub.add_parser("decompress", help="decompress an FMCZ stream to an FMAP tensor")
    sp.add_argument("input")
    sp.add_argument("-o", "--output", required=True)
    sp.add_argument("--frac", type=int, default=None,
                    help="write int16 fixed point with this many fractional bits")
    sp.set_defaults(func=_cmd_decompress)

    sp = sub.add_parser("roundtrip", help="report ratio, max error and PSNR")
    sp.add_argument("input")
    codec_opts(sp)
    sp.set_defaults(func=_cmd_roundtrip)

    sp = sub.add_parser("run", help="run a network config on an input tensor")
    sp.add_argument("config")
    sp.add_argument("input")
    sp.add_argument("--report", help="write per-layer JSON report here")
    sp.add_argument("-o", "--output", help="write the final feature map here")
    sp.set_defaults(func=_cmd_run)

    sp = sub.add_parser("selftest", help="run the built-in oracle checks")
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(func=_cmd_selftest)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING)
    try:
        return args.func(args)
    except InfeasiblePlanError as exc:
        print(f"fmc: infeasible plan: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (MalformedStreamError, ConfigError) as exc:
        print(f"fmc: malformed input: {exc}", file=sys.stderr)
        return EXIT_MALFORMED
    except FileNotFoundError as exc:
        print(f"fmc: {exc}", file=sys.stderr)
        return EXIT_MALFORMED
    except ValueError as exc:
        print(f"fmc: invalid input: {exc}", file=sys.stderr)
        return EXIT_MALFORMED


if __name__ == "__main__":
    sys.exit(main())
