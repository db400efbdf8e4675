"""Command-line front end: ``snoc encode | decode | verify | stats``.

Exit codes: 0 success, 2 bad arguments, 3 unreadable input (PLY or
bitstream), 4 a frame failed verification.
"""

from __future__ import annotations

import argparse
import csv
import glob
import io
import json
import logging
import os
import sys
from pathlib import Path

from . import cnn
from .codec import (
    BitstreamError,
    CodecConfig,
    RECORD_HEADER_BYTES,
    CorruptStreamError,
    bitrate_report,
    decode_sequence,
    decode_sequence_frame,
    encode_frame,
    encode_sequence,
    read_frame_record,
    read_header,
    training_frame_indices,
)
from .coder import TruncatedStreamError
from .context import collect_training_set, to_sweep_frame
from .core import PlyError, VoxelPointCloud, load_voxelized_cloud, save_voxelized_cloud

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_FORMAT = 3
EXIT_VERIFY = 4

THREADS_ENV = "SNOC_THREADS"

logger = logging.getLogger(__name__)


class UsageError(Exception):
    pass


def _default_threads() -> int:
    raw = os.environ.get(THREADS_ENV, "1")
    try:
        n = int(raw)
    except ValueError:
        raise UsageError(f"{THREADS_ENV} must be an integer, got {raw!r}") from None
    if n < 1:
        raise UsageError(f"{THREADS_ENV} must be >= 1")
    return n


def frame_paths(spec: str) -> list[Path]:
    """PLY files of a directory, or matches of a glob, in lexicographic order."""
    p = Path(spec)
    if p.is_dir():
        paths = sorted(q for q in p.iterdir() if q.suffix.lower() == ".ply")
    else:
        paths = sorted(Path(q) for q in glob.glob(spec))
    if not paths:
        raise UsageError(f"no .ply frames found for {spec!r}")
    return paths


def load_frames(spec: str, resolution: int | None = None) -> list[VoxelPointCloud]:
    return [load_voxelized_cloud(p, resolution) for p in frame_paths(spec)]


def _config(args) -> CodecConfig:
    try:
        training = cnn.TrainingConfig(
            batch_size=args.batch_size,
            learning_rate=args.lr,
            patience=args.patience,
            max_epochs=args.max_epochs or None,
        )
        return CodecConfig(
            train_frames=args.train_frames,
            n_phases=args.phases,
            preset=args.preset,
            training=training,
            seed=args.seed,
            threads=args.threads,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _print(out, text=""):
    print(text, file=out)


def cmd_encode(args, out=sys.stdout) -> int:
    frames = load_frames(args.input, args.resolution)
    enc = encode_sequence(frames, _config(args))
    Path(args.output).write_bytes(enc.data)
    nonempty = all(len(f) for f in frames)
    _print(out, f"frames: {len(frames)}  file: {args.output}  bytes: {len(enc.data)}")
    _print(out, f"training frames: {enc.training_frames}  contexts: {enc.store_size}")
    _print(out, f"training time: {enc.train_seconds:.2f} s")
    _print(out, f"encode time: {enc.encode_seconds:.2f} s ({enc.encode_seconds / len(frames):.3f} s/frame)")
    if nonempty:
        rep = bitrate_report(enc.data, frames)
        for i, b in enumerate(rep.bpp):
            _print(out, f"frame {i}: {b:.4f} bpp")
        _print(out, f"average: {rep.average_bpp:.4f} bpp")
    return EXIT_OK


def cmd_decode(args, out=sys.stdout) -> int:
    data = Path(args.input).read_bytes()
    header = read_header(data)
    outdir = Path(args.output)
    outdir.mkdir(parents=True, exist_ok=True)
    width = max(4, len(str(header.frame_count)))
    if args.frame is not None:
        if not 0 <= args.frame < header.frame_count:
            raise UsageError(f"--frame {args.frame} out of range for {header.frame_count} frames")
        items = [(args.frame, decode_sequence_frame(data, args.frame))]
    else:
        items = list(enumerate(decode_sequence(data, args.threads)))
    for i, cloud in items:
        path = outdir / f"frame_{i:0{width}d}.ply"
        save_voxelized_cloud(cloud, path)
        _print(out, f"frame {i}: {len(cloud)} points -> {path}")
    return EXIT_OK


def _corrupt(data: bytes, index: int) -> bytes:
    """Flip one byte in the middle of a frame's coded stream (test hook)."""
    header = read_header(data)
    rec = read_frame_record(data, header, index)
    if rec.empty or len(rec.payload) <= 8:
        raise UsageError(f"frame {index} has no coded stream to corrupt")
    pos = header.offsets[index] + RECORD_HEADER_BYTES + 8 + (len(rec.payload) - 8) // 2
    buf = bytearray(data)
    buf[pos] ^= 0x5A
    return bytes(buf)


def cmd_verify(args, out=sys.stdout) -> int:
    frames = load_frames(args.input, args.resolution)
    enc = encode_sequence(frames, _config(args))
    data = enc.data
    if args.corrupt_frame is not None:
        data = _corrupt(data, args.corrupt_frame)
    header = read_header(data)
    failed = 0
    for i, original in enumerate(frames):
        try:
            got = decode_sequence_frame(data, i)
            ok = got == original
            why = "" if ok else f" ({len(got)} vs {len(original)} points)"
        except (CorruptStreamError, TruncatedStreamError, BitstreamError, ValueError) as exc:
            ok, why = False, f" ({exc})"
        failed += not ok
        _print(out, f"frame {i}: {'PASS' if ok else 'FAIL'}{why}")
    _print(out, f"{header.frame_count - failed}/{header.frame_count} frames lossless")
    return EXIT_OK if failed == 0 else EXIT_VERIFY


def stats_rows(data: bytes, train_frames: int = 5) -> tuple[dict, list[dict]]:
    """Summary and per-frame rows for a bitstream.

    Frames are decoded (the coding is lossless, so they equal the encoder's
    input), which lets the context store and per-resolution codelengths be
    recomputed without the original files.
    """
    header = read_header(data)
    frames = decode_sequence(data)
    swept = [to_sweep_frame(f, header.sweep_axis) for f in frames]
    idx = training_frame_indices(header.frame_count, train_frames)
    store = collect_training_set([swept[i] for i in idx], header.n_phases)
    arch = header.architecture
    rows = []
    rep = bitrate_report(data, frames) if all(len(f) for f in frames) else None
    for i, f in enumerate(swept):
        rec = read_frame_record(data, header, i)
        level_bits: dict = {}
        if len(f):
            encode_frame(f, header.model, header.n_phases, level_bits=level_bits)
        row = {
            "frame": i,
            "points": len(f),
            "resolution_bits": rec.resolution_bits,
            "payload_bits": 8 * len(rec.payload),
            "bpp": rep.bpp[i] if rep else None,
        }
        for r in range(3, rec.resolution_bits + 1):
            row[f"ideal_bits_r{r}"] = round(level_bits.get(r, 0.0), 3)
        rows.append(row)
    summary = {
        "frames": header.frame_count,
        "phases": header.n_phases,
        "sweep_axis": header.sweep_axis,
        "architecture": [[s.kernel, s.stride, s.out_channels] for s in arch.stages],
        "parameters": arch.parameter_count,
        "model_bits": 32 * arch.parameter_count,
        "framing_bits": rep.framing_bits if rep else None,
        "file_bits": 8 * len(data),
        "average_bpp": rep.average_bpp if rep else None,
        "training_frames": idx,
        "context_store_size": len(store),
    }
    return summary, rows


def _csv(rows: list[dict]) -> str:
    keys: list[str] = []
    for r in rows:
        keys += [k for k in r if k not in keys]
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=keys, lineterminator="\n")
    w.writeheader()
    w.writerows(rows)
    return buf.getvalue()


def cmd_stats(args, out=sys.stdout) -> int:
    data = Path(args.input).read_bytes()
    summary, rows = stats_rows(data, args.train_frames)
    if args.format == "json":
        text = json.dumps({"summary": summary, "frames": rows}, indent=2) + "\n"
    elif args.format == "csv":
        text = _csv(rows)
    else:
        lines = [f"{k}: {v}" for k, v in summary.items()]
        for r in rows:
            levels = " ".join(f"r{k[len('ideal_bits_r'):]}={v:.0f}" for k, v in r.items() if k.startswith("ideal_bits_r"))
            bpp = "n/a" if r["bpp"] is None else f"{r['bpp']:.4f}"
            lines.append(f"frame {r['frame']}: {r['points']} points, {r['payload_bits']} bits, {bpp} bpp | {levels}")
        text = "\n".join(lines) + "\n"
    if args.report:
        Path(args.report).write_text(text)
    else:
        out.write(text)
    return EXIT_OK


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _coding_flags(p, threads_default):
    p.add_argument("--input", required=True, help="directory of .ply frames or a glob")
    p.add_argument("--resolution", type=int, default=None, help="bits per axis (default: from file)")
    p.add_argument("--train-frames", type=int, default=5, metavar="K")
    p.add_argument("--phases", type=int, choices=(4, 1), default=4)
    p.add_argument("--preset", choices=sorted(cnn.PRESETS), default="baseline")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--batch-size", type=int, default=10_000)
    p.add_argument("--patience", type=int, default=20)
    p.add_argument("--max-epochs", type=int, default=1000, help="0 trains until the second plateau")
    p.add_argument("--threads", type=int, default=threads_default)


def build_parser(threads_default: int = 1) -> argparse.ArgumentParser:
    ap = _Parser(prog="snoc", description="Lossless point-cloud sequence codec with a per-sequence CNN.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("encode", help="train on the sequence and write a bitstream")
    _coding_flags(p, threads_default)
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("decode", help="decode a bitstream to .ply frames")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True, help="output directory")
    p.add_argument("--frame", type=int, default=None, help="decode only this frame")
    p.add_argument("--threads", type=int, default=threads_default)
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("verify", help="encode, decode in-process and compare")
    _coding_flags(p, threads_default)
    p.add_argument("--corrupt-frame", type=int, default=None, help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("stats", help="bitrate and model report for a bitstream")
    p.add_argument("--input", required=True)
    p.add_argument("--train-frames", type=int, default=5, metavar="K")
    p.add_argument("--format", choices=("text", "csv", "json"), default="text")
    p.add_argument("--report", default=None, help="write the report here instead of stdout")
    p.set_defaults(func=cmd_stats)
    return ap


def main(argv=None, out=None) -> int:
    out = out or sys.stdout
    try:
        args = build_parser(_default_threads()).parse_args(argv)
        if getattr(args, "threads", 1) < 1:
            raise UsageError("--threads must be >= 1")
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
        return args.func(args, out)
    except UsageError as exc:
        print(f"snoc: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (PlyError, BitstreamError, CorruptStreamError, TruncatedStreamError) as exc:
        print(f"snoc: invalid input: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    except (OSError, ValueError) as exc:
        print(f"snoc: error: {exc}", file=sys.stderr)
        return EXIT_FORMAT


if __name__ == "__main__":
    sys.exit(main())
