"""Command-line entry points. Each subcommand maps 1:1 onto a core
operation; exit codes: 0 success, 1 domain error, 2 usage error.

A --config JSON file can hold any training/edit fields plus the guidance
provider registry; explicit flags win over config values.
"""

import argparse
import json
import os
import sys

import numpy as np

from .dataset import (SceneSpec, load_dataset, make_dataset, named_scene,
                      write_dataset)
from .errors import RaypaintError
from .field import load_checkpoint, save_checkpoint
from .guidance import ToyDeltaDenoiser, build_guidance
from .imaging import feature_pca_rgb, load_png, save_float_bin, save_png
from .masks import PatchSelection, extract_mask_set, load_mask_set, save_mask_set
from .pipeline import (BasePretrainer, Repainter, Stage1Trainer, eval_iou,
                       eval_psnr)
from .renderer import render_view


def _load_config(path):
    if not path:
        return {}
    with open(path, encoding="utf-8") as f:
        return json.load(f)


def _cfg_get(cfg, args, name, default):
    """Flag > config > default (argparse default is None for overridables)."""
    val = getattr(args, name, None)
    if val is not None:
        return val
    return cfg.get(name, default)


def _scene_from_args(args):
    if args.scene_file:
        with open(args.scene_file, encoding="utf-8") as f:
            scene = SceneSpec.from_json(json.load(f))
    else:
        scene = named_scene(args.scene)
    if getattr(args, "seed", None) is not None:
        scene = SceneSpec(primitives=scene.primitives,
                          background_color=scene.background_color,
                          ground_plane=scene.ground_plane, rng_seed=args.seed)
    return scene


def cmd_synth(args):
    scene = _scene_from_args(args)
    ds = make_dataset(scene, n_views=args.views, resolution=args.res,
                      orbit_radius=args.radius, elevation_deg=args.elevation,
                      feature_dim=args.fdim)
    write_dataset(ds, args.out)
    print(f"wrote {len(ds)} views to {args.out}")
    return 0


def cmd_train(args):
    cfg = _load_config(args.config)
    ds = load_dataset(args.data)
    if args.mode == "stage1":
        trainer = Stage1Trainer(
            steps=int(_cfg_get(cfg, args, "steps", 2000)),
            lr=float(_cfg_get(cfg, args, "lr", 1e-2)),
            ray_batch=int(_cfg_get(cfg, args, "ray_batch", 4096)),
            lambda_feature=float(_cfg_get(cfg, args, "lambda_feature", 1.0)),
            lambda_depth=float(_cfg_get(cfg, args, "lambda_depth", 0.1)),
            depth_supervision=not args.no_depth,
            seed=int(_cfg_get(cfg, args, "seed", 0)),
            n_samples=int(_cfg_get(cfg, args, "n_samples", 64)),
            log_path=args.log,
        )
        trainer.fit(ds, progress=_progress)
    else:
        trainer = BasePretrainer(
            steps=int(_cfg_get(cfg, args, "steps", 3000)),
            lr_start=float(_cfg_get(cfg, args, "lr_start", 1e-3)),
            lr_end=float(_cfg_get(cfg, args, "lr_end", 1e-4)),
            seed=int(_cfg_get(cfg, args, "seed", 0)),
            n_samples=int(_cfg_get(cfg, args, "n_samples", 64)),
            log_path=args.log,
        )
        trainer.fit(ds, progress=_progress)
    save_checkpoint(args.out, trainer.field_, adam_state=trainer.adam_state_)
    print(f"saved checkpoint to {args.out}")
    return 0


def _progress(step, loss):
    print(f"  step {step:6d}  loss {loss:.4f}", flush=True)


def cmd_mask(args):
    ds = load_dataset(args.data)
    field = load_checkpoint(args.ckpt)
    rect = tuple(int(v) for v in args.rect.split(","))
    sel = PatchSelection(view_index=args.view, rect=rect, alpha=args.alpha)
    ms = extract_mask_set(field, ds.cameras, sel, n_samples=args.samples,
                          postprocess=args.postprocess,
                          checkpoint_id=os.path.basename(args.ckpt))
    save_mask_set(ms, args.out)
    covered = sum(int(m.sum()) for m in ms.masks)
    print(f"wrote {len(ms)} masks ({covered} px total) to {args.out}")
    return 0


def cmd_edit(args):
    cfg = _load_config(args.config)
    ds = load_dataset(args.data)
    base = load_checkpoint(args.base)
    ms = load_mask_set(args.masks)
    schedule, denoiser_proto, embedder = build_guidance(cfg.get("guidance", cfg), [])
    den = ToyDeltaDenoiser(
        schedule, denoiser_proto.registry,
        [(v.rgb.astype(np.float64), m.astype(np.float64))
         for v, m in zip(ds.views, ms.masks)],
    )
    os.makedirs(os.path.join(args.out, "previews"), exist_ok=True)

    def status_cb(status, preview):
        if preview is not None:
            save_png(os.path.join(args.out, "previews",
                                  f"step_{status.step:06d}.png"), preview)
            print(f"  step {status.step:6d}  {status.losses}", flush=True)

    rp = Repainter(
        prompt=args.prompt, bgt=args.bgt,
        lambda_unmask=float(_cfg_get(cfg, args, "lambda_unmask", 100.0)),
        lambda_clip=float(_cfg_get(cfg, args, "lambda_clip", 1.0)),
        repaint_steps=int(_cfg_get(cfg, args, "steps", 10000)),
        seed=int(_cfg_get(cfg, args, "seed", 0)),
        n_samples=int(_cfg_get(cfg, args, "n_samples", 64)),
        sds=not args.no_sds, bgt_in_prompt=not args.no_bgt_in_prompt,
        clip=not args.no_clip,
        log_path=os.path.join(args.out, "losses.csv"),
        status_cb=status_cb, preview_every=args.preview_every,
    )
    rp.fit(base, ms, ds, den, embedder, schedule)
    out_ckpt = os.path.join(args.out, "edited.rpck")
    save_checkpoint(out_ckpt, rp.field_)
    print(f"saved edited checkpoint to {out_ckpt}")
    return 0


def cmd_render(args):
    ds = load_dataset(args.data)
    field = load_checkpoint(args.ckpt)
    cam = ds.cameras[args.view]
    heads = {"rgb": "color", "feature_pca": "feature", "depth": "depth",
             "opacity": "opacity"}
    if args.kind not in heads:
        raise RaypaintError(f"unknown render kind {args.kind!r}")
    planes = render_view(field, cam, heads=(heads[args.kind],),
                         n_samples=args.samples)
    plane = planes[heads[args.kind]]
    if args.bin:
        save_float_bin(args.bin, plane.astype(np.float32))
    if args.kind == "feature_pca":
        plane = feature_pca_rgb(plane)
    save_png(args.out, plane)
    print(f"wrote {args.out}")
    return 0


def cmd_eval(args):
    a = load_png(args.a)
    b = load_png(args.b)
    if args.metric == "psnr":
        region = None
        if args.region:
            region = load_png(args.region)
            if region.ndim == 3:
                region = region[..., 0]
            region = region >= 0.5
        val = eval_psnr(a, b, region)
        print(f"{val:.4f}")
    else:
        val = eval_iou(a[..., 0] >= 0.5 if a.ndim == 3 else a >= 0.5,
                       b[..., 0] >= 0.5 if b.ndim == 3 else b >= 0.5)
        print(f"{val:.6f}")
    return 0


def cmd_serve(args):
    from .serve import ServeConfig, http_serve
    cfg = _load_config(args.config)
    config = ServeConfig(data_dir=args.data, stage1_ckpt=args.ckpt,
                         base_ckpt=args.base, work_dir=args.work,
                         guidance=cfg.get("guidance", cfg),
                         n_samples=args.samples)
    http_serve(config, host=args.host, port=args.port)
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="raypaint",
                                description="desk-scale radiance-field repainting")
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("synth", help="generate a synthetic dataset")
    sp.add_argument("--scene", default="two_spheres")
    sp.add_argument("--scene-file")
    sp.add_argument("--views", type=int, default=20)
    sp.add_argument("--res", type=int, default=64)
    sp.add_argument("--radius", type=float, default=2.0)
    sp.add_argument("--elevation", type=float, default=30.0)
    sp.add_argument("--fdim", type=int, default=8)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_synth)

    tp = sub.add_parser("train", help="train stage-1 or the base model")
    tp.add_argument("--data", required=True)
    tp.add_argument("--mode", choices=("stage1", "base"), default="stage1")
    tp.add_argument("--steps", type=int)
    tp.add_argument("--lr", type=float)
    tp.add_argument("--lr-start", dest="lr_start", type=float)
    tp.add_argument("--lr-end", dest="lr_end", type=float)
    tp.add_argument("--ray-batch", dest="ray_batch", type=int)
    tp.add_argument("--lambda-feature", dest="lambda_feature", type=float)
    tp.add_argument("--lambda-depth", dest="lambda_depth", type=float)
    tp.add_argument("--no-depth", action="store_true")
    tp.add_argument("--seed", type=int)
    tp.add_argument("--n-samples", dest="n_samples", type=int)
    tp.add_argument("--log")
    tp.add_argument("--config")
    tp.add_argument("--out", required=True)
    tp.set_defaults(func=cmd_train)

    mp = sub.add_parser("mask", help="extract a mask set from a patch selection")
    mp.add_argument("--data", required=True)
    mp.add_argument("--ckpt", required=True)
    mp.add_argument("--view", type=int, required=True)
    mp.add_argument("--rect", required=True, help="row0,col0,row1,col1")
    mp.add_argument("--alpha", type=float, default=0.85)
    mp.add_argument("--samples", type=int, default=64)
    mp.add_argument("--postprocess", action="store_true")
    mp.add_argument("--out", required=True)
    mp.set_defaults(func=cmd_mask)

    ep = sub.add_parser("edit", help="run the repaint optimization")
    ep.add_argument("--data", required=True)
    ep.add_argument("--base", required=True)
    ep.add_argument("--masks", required=True)
    ep.add_argument("--prompt", required=True)
    ep.add_argument("--bgt", default="leaves")
    ep.add_argument("--steps", type=int)
    ep.add_argument("--lambda-unmask", dest="lambda_unmask", type=float)
    ep.add_argument("--lambda-clip", dest="lambda_clip", type=float)
    ep.add_argument("--seed", type=int)
    ep.add_argument("--n-samples", dest="n_samples", type=int)
    ep.add_argument("--no-sds", action="store_true")
    ep.add_argument("--no-clip", action="store_true")
    ep.add_argument("--no-bgt-in-prompt", action="store_true")
    ep.add_argument("--preview-every", type=int, default=50)
    ep.add_argument("--config")
    ep.add_argument("--out", required=True)
    ep.set_defaults(func=cmd_edit)

    rp = sub.add_parser("render", help="render a view from a checkpoint")
    rp.add_argument("--data", required=True)
    rp.add_argument("--ckpt", required=True)
    rp.add_argument("--view", type=int, default=0)
    rp.add_argument("--kind", default="rgb",
                    choices=("rgb", "feature_pca", "depth", "opacity"))
    rp.add_argument("--samples", type=int, default=64)
    rp.add_argument("--bin", help="also dump the raw float plane")
    rp.add_argument("--out", required=True)
    rp.set_defaults(func=cmd_render)

    vp = sub.add_parser("eval", help="psnr / iou between two images")
    vp.add_argument("--metric", choices=("psnr", "iou"), default="psnr")
    vp.add_argument("--a", required=True)
    vp.add_argument("--b", required=True)
    vp.add_argument("--region")
    vp.set_defaults(func=cmd_eval)

    svp = sub.add_parser("serve", help="run the http service")
    svp.add_argument("--data", required=True)
    svp.add_argument("--ckpt", required=True, help="stage-1 checkpoint")
    svp.add_argument("--base", help="base checkpoint for edits")
    svp.add_argument("--work", required=True)
    svp.add_argument("--samples", type=int, default=64)
    svp.add_argument("--host", default="127.0.0.1")
    svp.add_argument("--port", type=int, default=8710)
    svp.add_argument("--config")
    svp.set_defaults(func=cmd_serve)

    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except RaypaintError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
