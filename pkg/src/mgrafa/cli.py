"""Command-line entry point: ``mgrafa {gen,train,eval,flops,gradcheck,attn}``.

Failures exit nonzero with one line ``error: <Kind>: <message>`` on stderr,
and any files the failed command created are removed.
"""

from __future__ import annotations

import argparse
import csv
import logging
import os
import shutil
import sys

from .config import RunConfig, load_config
from .errors import ConfigurationError, ContractError, DataError, FormatError

CONFIG_NAME = "config.ini"
LOSS_NAME = "loss.csv"
METRICS_NAME = "metrics.csv"

log = logging.getLogger("mgrafa")


class CommandFailed(Exception):
    """A command ran but its result is a failure (e.g. a gradient check)."""


class OutputGuard:
    """Removes whatever a failed command wrote under ``path``."""

    def __init__(self, path):
        self.path = path
        self.existed = path is not None and os.path.exists(path)
        self.before = set()
        if self.existed and os.path.isdir(path):
            for dirpath, dirs, files in os.walk(path):
                self.before.update(os.path.join(dirpath, n) for n in dirs + files)

    def rollback(self) -> None:
        if self.path is None or not os.path.exists(self.path):
            return
        if not self.existed:
            if os.path.isdir(self.path):
                shutil.rmtree(self.path)
            else:
                os.remove(self.path)
            return
        for dirpath, dirs, files in os.walk(self.path, topdown=False):
            for n in files:
                p = os.path.join(dirpath, n)
                if p not in self.before:
                    os.remove(p)
            for n in dirs:
                p = os.path.join(dirpath, n)
                if p not in self.before:
                    shutil.rmtree(p, ignore_errors=True)


def _require(args, *names):
    for n in names:
        if getattr(args, n) is None:
            raise ConfigurationError(f"{args.command} needs --{n}")


def _resolve_config(args, fallback_dir=None) -> RunConfig:
    if args.config is not None:
        cfg = load_config(args.config)
    elif fallback_dir is not None and os.path.exists(os.path.join(fallback_dir, CONFIG_NAME)):
        cfg = load_config(os.path.join(fallback_dir, CONFIG_NAME))
    else:
        cfg = load_config()
    if args.seed is not None:
        cfg.set_seed(args.seed)
    return cfg


def _load_model(cfg: RunConfig, ckpt_dir):
    from .model import ReidModel
    from .vft import load_checkpoint

    state = load_checkpoint(ckpt_dir)
    if "heads.0.weight" not in state:
        raise FormatError(f"{ckpt_dir}: checkpoint has no classifier heads")
    model = ReidModel(cfg.model, num_ids=state["heads.0.weight"].shape[0], seed=0)
    model.load_state_dict(state)
    model.eval()
    return model


def cmd_gen(args) -> None:
    from .data import generate_dataset

    _require(args, "out")
    cfg = _resolve_config(args)
    records = generate_dataset(cfg.dataset, args.out)
    cfg.write(os.path.join(args.out, CONFIG_NAME))
    print(f"wrote {len(records)} tracklets to {args.out}")


def cmd_train(args) -> None:
    from .data import Dataset
    from .model import ReidModel
    from .train import train
    from .vft import save_checkpoint

    _require(args, "data", "out")
    cfg = _resolve_config(args)
    dataset = Dataset(args.data)
    records, _ = dataset.split()
    num_ids = len({r.identity for r in records})
    model = ReidModel(cfg.model, num_ids=num_ids, seed=cfg.train.seed)
    rows = train(model, dataset, records, cfg.train)
    save_checkpoint(args.out, model.state_dict())
    cfg.write(os.path.join(args.out, CONFIG_NAME))
    with open(os.path.join(args.out, LOSS_NAME), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "total", "id_global", "triplet_global", "id_parts", "triplet_parts"])
        for r in rows:
            w.writerow([r.step, *(f"{x:.8g}" for x in (r.total, r.id_global, r.tri_global, r.id_parts, r.tri_parts))])
    print(f"trained {cfg.model.variant} for {cfg.train.steps} steps; final loss {rows[-1].total:.4f}")


def cmd_eval(args) -> None:
    from .data import Dataset
    from .retrieval import evaluate, write_metrics_csv

    _require(args, "data", "ckpt", "out")
    cfg = _resolve_config(args, fallback_dir=args.ckpt)
    dataset = Dataset(args.data)
    _, records = dataset.split()
    model = _load_model(cfg, args.ckpt)
    result = evaluate(model, dataset, records, cfg.model.T, cfg.eval.seed)
    os.makedirs(args.out, exist_ok=True)
    write_metrics_csv(os.path.join(args.out, METRICS_NAME), result)
    cfg.write(os.path.join(args.out, CONFIG_NAME))
    print(f"mAP {result.mAP:.4f} CMC@1 {result.rank(1):.4f} (excluded queries: {result.num_excluded})")


def cmd_flops(args) -> None:
    from .flops import preset_csv

    text = preset_csv(args.preset or "table2")
    if args.out is None:
        sys.stdout.write(text)
        return
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, f"flops_{args.preset or 'table2'}.csv")
    with open(path, "w") as fh:
        fh.write(text)
    print(f"wrote {path}")


def cmd_gradcheck(args) -> None:
    from .gradsuite import run_suite

    base = args.seed or 0
    results = run_suite(seeds=range(base, base + 5))
    lines = [r.line() for r in results]
    if args.out is not None:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, "gradcheck.txt"), "w") as fh:
            fh.write("\n".join(lines) + "\n")
    print("\n".join(lines))
    failed = [r for r in results if not r.passed]
    if failed:
        raise CommandFailed(f"{len(failed)} of {len(results)} gradient checks failed")


def cmd_attn(args) -> None:
    from .data import Dataset
    from .heatmap import attention_maps, export_heatmaps, tracklet_clip

    _require(args, "data", "ckpt", "out", "tracklet")
    cfg = _resolve_config(args, fallback_dir=args.ckpt)
    if cfg.model.variant == "baseline":
        raise ConfigurationError("attn: the baseline variant has no attention to export")
    dataset = Dataset(args.data)
    if args.tracklet not in {r.tracklet_id for r in dataset.records}:
        raise DataError(f"attn: no tracklet {args.tracklet} in {args.data}")
    model = _load_model(cfg, args.ckpt)
    frames, _ = tracklet_clip(dataset, args.tracklet, cfg.model.T, cfg.eval.seed)
    maps = attention_maps(model, frames)
    paths = export_heatmaps(maps, args.out, frames.shape[1], frames.shape[2])
    cfg.write(os.path.join(args.out, CONFIG_NAME))
    print(f"wrote {len(paths)} heatmaps to {args.out}")


COMMANDS = {
    "gen": cmd_gen,
    "train": cmd_train,
    "eval": cmd_eval,
    "flops": cmd_flops,
    "gradcheck": cmd_gradcheck,
    "attn": cmd_attn,
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigurationError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="mgrafa", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", help="INI run configuration")
    p.add_argument("--out", help="output directory")
    p.add_argument("--seed", type=int, help="seed applied to data, training and evaluation")
    p.add_argument("--preset", choices=["table2", "table3"], help="flops preset")
    p.add_argument("--ckpt", help="checkpoint directory written by train")
    p.add_argument("--data", help="dataset directory written by gen")
    p.add_argument("--tracklet", type=int, help="tracklet id for attn")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def _threads() -> int:
    raw = os.environ.get("RAFA_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise ConfigurationError(f"RAFA_THREADS must be an integer, got {raw!r}") from None
    if n < 1:
        raise ConfigurationError(f"RAFA_THREADS must be >= 1, got {n}")
    return n


def _error_line(exc: BaseException) -> str:
    msg = " ".join(str(exc).split()) or type(exc).__name__
    return f"error: {type(exc).__name__}: {msg}"


def main(argv=None) -> int:
    guard = None
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
        guard = OutputGuard(args.out)
        from threadpoolctl import threadpool_limits

        with threadpool_limits(limits=_threads()):
            COMMANDS[args.command](args)
        return 0
    except (ConfigurationError, ContractError) as exc:
        code = 2
        err = exc
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    except CommandFailed as exc:
        code = 1
        err = exc
    except Exception as exc:  # noqa: BLE001 - every failure must end in one diagnostic line
        code = 1
        err = exc
    if guard is not None:
        guard.rollback()
    print(_error_line(err), file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
