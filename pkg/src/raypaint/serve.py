"""HTTP service around the core operations: view browsing, interactive mask
preview/commit, and the edit-job lifecycle.

All math happens in the same functions the CLI calls, so CLI and HTTP
outputs are byte-equal for equal inputs. Feature maps are rendered once per
checkpoint and cached on disk to keep the alpha-tuning preview loop fast.
One background worker runs at most one edit job; submitting while busy is a
conflict. Status reads never block on the running job.
"""

import base64
import hashlib
import io
import json
import os
import threading
from dataclasses import dataclass, field as dc_field

import numpy as np
from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse, Response
from pydantic import BaseModel

from .dataset import load_dataset
from .errors import (ConfigurationError, ConflictError, ContractViolation,
                     DegenerateFieldError, FormatError, MissingFileError,
                     NumericFault, RaypaintError)
from .field import load_checkpoint, save_checkpoint
from .guidance import build_guidance
from .imaging import feature_pca_rgb, load_float_bin, save_float_bin, save_png
from .masks import PatchSelection, extract_mask_set, load_mask_set, \
    patch_mean, save_mask_set, similarity_map, threshold_mask
from .pipeline import Repainter
from .validation import check_rect


@dataclass
class ServeConfig:
    data_dir: str
    stage1_ckpt: str
    work_dir: str
    base_ckpt: str = None
    guidance: dict = dc_field(default_factory=dict)
    n_samples: int = 64


def _file_id(path):
    h = hashlib.sha1()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()[:12]


def _png_bytes(img):
    from PIL import Image
    arr = np.asarray(img)
    if arr.dtype != np.uint8:
        arr = np.clip(np.round(arr * 255.0), 0, 255).astype(np.uint8)
    buf = io.BytesIO()
    Image.fromarray(arr).save(buf, format="PNG")
    return buf.getvalue()


class FeaturePlaneCache:
    """Per-checkpoint rendered feature planes, persisted under the work dir."""

    def __init__(self, work_dir, n_samples):
        self.root = os.path.join(work_dir, "cache")
        self.n_samples = n_samples

    def planes(self, field, ckpt_id, cameras):
        from .renderer import render_view
        cdir = os.path.join(self.root, ckpt_id)
        os.makedirs(cdir, exist_ok=True)
        planes = []
        for i, cam in enumerate(cameras):
            path = os.path.join(cdir, f"feat_{i:03d}.bin")
            if os.path.exists(path):
                planes.append(load_float_bin(path))
                continue
            plane = render_view(field, cam, heads=("feature",),
                                n_samples=self.n_samples)["feature"]
            save_float_bin(path, plane.astype(np.float32))
            planes.append(load_float_bin(path))  # read back: cache is the truth
        return planes


class JobStore:
    """Append-only job records with lock-protected snapshot reads."""

    def __init__(self):
        self._lock = threading.Lock()
        self._jobs = {}
        self._busy = False

    def try_acquire(self):
        with self._lock:
            if self._busy:
                return False
            self._busy = True
            return True

    def release(self):
        with self._lock:
            self._busy = False

    def put(self, job_id, status_dict, preview_png=None):
        with self._lock:
            rec = self._jobs.setdefault(job_id, {"status": None, "preview": None})
            rec["status"] = status_dict
            if preview_png is not None:
                rec["preview"] = preview_png

    def get(self, job_id):
        with self._lock:
            rec = self._jobs.get(job_id)
            if rec is None:
                return None
            return dict(rec)


class MaskPreviewRequest(BaseModel):
    view: int
    rect: list
    alpha: float


class EditRequest(BaseModel):
    maskset_id: str
    prompt: str
    bgt: str = "leaves"
    lambda_unmask: float = 100.0
    lambda_clip: float = 1.0
    steps: int = 2000
    seed: int = 0
    sds: bool = True
    bgt_in_prompt: bool = True
    clip: bool = True
    base_ckpt: str = None


class _NotFound(RaypaintError):
    pass


_ERROR_MAP = [
    (_NotFound, 404, "not_found"),
    (MissingFileError, 404, "not_found"),
    (NumericFault, 500, "numeric_fault"),
    (ConfigurationError, 400, "config"),
    (ConflictError, 409, "conflict"),
    (DegenerateFieldError, 409, "conflict"),
    (FormatError, 400, "bad_request"),
    (ContractViolation, 400, "bad_request"),
    (RaypaintError, 400, "bad_request"),
]


def create_app(config):
    app = FastAPI(title="raypaint")
    state = _AppState(config)
    app.state.raypaint = state

    @app.exception_handler(RaypaintError)
    async def _domain_error(request: Request, exc: RaypaintError):
        for cls, http, code in _ERROR_MAP:
            if isinstance(exc, cls):
                return JSONResponse(status_code=http, content={
                    "code": code, "message": str(exc),
                    "detail": {"type": type(exc).__name__},
                })
        raise exc

    from fastapi.exceptions import RequestValidationError

    @app.exception_handler(RequestValidationError)
    async def _validation_error(request: Request, exc: RequestValidationError):
        return JSONResponse(status_code=400, content={
            "code": "bad_request", "message": "invalid request body",
            "detail": {"errors": exc.errors()},
        })

    @app.get("/views")
    def views(i: int, kind: str = "rgb", maskset: str = None):
        return Response(content=state.view_png(i, kind, maskset),
                        media_type="image/png")

    @app.post("/mask/preview")
    def mask_preview(req: MaskPreviewRequest):
        return state.mask_preview(req.view, req.rect, req.alpha)

    @app.post("/mask/commit")
    def mask_commit(req: MaskPreviewRequest):
        return {"maskset_id": state.mask_commit(req.view, req.rect, req.alpha)}

    @app.get("/masksets")
    def masksets():
        return {"masksets": state.list_masksets()}

    @app.get("/prompts")
    def prompts():
        return state.prompt_registry()

    @app.post("/edit")
    def edit(req: EditRequest):
        return {"job_id": state.submit_edit(req)}

    @app.get("/job/{job_id}")
    def job_status(job_id: str):
        rec = state.jobs.get(job_id)
        if rec is None:
            raise _NotFound(f"unknown job {job_id!r}")
        return rec["status"]

    @app.get("/job/{job_id}/preview")
    def job_preview(job_id: str):
        rec = state.jobs.get(job_id)
        if rec is None:
            raise _NotFound(f"unknown job {job_id!r}")
        if rec["preview"] is None:
            raise _NotFound(f"job {job_id!r} has no preview yet")
        return Response(content=rec["preview"], media_type="image/png")

    return app


class _AppState:
    def __init__(self, config):
        self.config = config
        self.dataset = load_dataset(config.data_dir)
        self.stage1_field = load_checkpoint(config.stage1_ckpt)
        self.stage1_id = _file_id(config.stage1_ckpt)
        base_path = config.base_ckpt or config.stage1_ckpt
        self.base_field = load_checkpoint(base_path)
        self.base_path = base_path
        self.cache = FeaturePlaneCache(config.work_dir, config.n_samples)
        self.jobs = JobStore()
        os.makedirs(os.path.join(config.work_dir, "masksets"), exist_ok=True)
        os.makedirs(os.path.join(config.work_dir, "jobs"), exist_ok=True)
        views = [(v.rgb.astype(np.float64), np.zeros(v.rgb.shape[:2]))
                 for v in self.dataset.views]
        self.schedule, self.denoiser_proto, self.embedder = build_guidance(
            config.guidance, views)
        self._planes = None
        self._planes_lock = threading.Lock()

    # ---- feature planes / previews ----

    def feature_planes(self):
        with self._planes_lock:
            if self._planes is None:
                self._planes = self.cache.planes(self.stage1_field, self.stage1_id,
                                                 self.dataset.cameras)
            return self._planes

    def _check_view(self, i):
        if not 0 <= i < len(self.dataset.views):
            raise _NotFound(f"view {i} outside [0, {len(self.dataset.views)})")

    def view_png(self, i, kind, maskset=None):
        self._check_view(i)
        v = self.dataset.views[i]
        if kind == "rgb":
            return _png_bytes(v.rgb)
        if kind == "depth":
            return _png_bytes(v.depth)
        if kind == "feature_pca":
            return _png_bytes(feature_pca_rgb(self.feature_planes()[i]))
        if kind == "mask":
            ids = self.list_masksets()
            if maskset is None:
                if not ids:
                    raise _NotFound("no committed masksets")
                maskset = ids[-1]["id"]
            ms = self._load_maskset(maskset)
            return _png_bytes(ms.masks[i] * 255)
        raise ContractViolation(
            f"unknown kind {kind!r}; expected rgb|feature_pca|depth|mask")

    def mask_preview(self, view, rect, alpha):
        self._check_view(view)
        planes = self.feature_planes()
        h, w = planes[view].shape[:2]
        rect = check_rect(rect, h, w)
        sel = PatchSelection(view_index=view, rect=tuple(rect), alpha=alpha)
        patch = patch_mean(planes[view], sel.rect)
        sim = similarity_map(patch, planes[view])
        mask = threshold_mask(sim, sel.alpha)
        hist, _ = np.histogram(sim, bins=32, range=(-1.0, 1.0))
        return {
            "mask_png_b64": base64.b64encode(_png_bytes(mask * 255)).decode("ascii"),
            "pixel_count": int(mask.sum()),
            "sim_histogram": hist.tolist(),
            "view": view, "rect": list(rect), "alpha": alpha,
        }

    def mask_commit(self, view, rect, alpha):
        self._check_view(view)
        planes = self.feature_planes()
        h, w = planes[view].shape[:2]
        rect = check_rect(rect, h, w)
        sel = PatchSelection(view_index=view, rect=tuple(rect), alpha=alpha)
        ms = extract_mask_set(self.stage1_field, self.dataset.cameras, sel,
                              n_samples=self.config.n_samples,
                              checkpoint_id=self.stage1_id,
                              feature_planes=planes)
        key = f"{self.stage1_id}-{view}-{'_'.join(map(str, rect))}-{alpha:g}"
        ms_id = hashlib.sha1(key.encode()).hexdigest()[:10]
        save_mask_set(ms, os.path.join(self.config.work_dir, "masksets", ms_id))
        return ms_id

    def list_masksets(self):
        root = os.path.join(self.config.work_dir, "masksets")
        out = []
        for name in sorted(os.listdir(root)):
            meta = os.path.join(root, name, "maskset.json")
            if os.path.exists(meta):
                with open(meta, encoding="utf-8") as f:
                    rec = json.load(f)
                out.append({"id": name, "view": rec["view"], "rect": rec["rect"],
                            "alpha": rec["alpha"]})
        return out

    def _load_maskset(self, ms_id):
        path = os.path.join(self.config.work_dir, "masksets", ms_id)
        if not os.path.isdir(path):
            raise _NotFound(f"unknown maskset {ms_id!r}")
        return load_mask_set(path)

    def prompt_registry(self):
        return {"prompts": self.denoiser_proto.known_prompts(),
                "palettes": sorted(self.embedder.palettes)}

    # ---- edit jobs ----

    def submit_edit(self, req):
        ms = self._load_maskset(req.maskset_id)
        # resolve everything that can fail before occupying the worker
        self.denoiser_proto.resolve(req.prompt)
        if req.clip:
            self.embedder.embed_text(req.bgt)
        base_field = (load_checkpoint(req.base_ckpt) if req.base_ckpt
                      else self.base_field)
        if not self.jobs.try_acquire():
            raise ConflictError("an edit job is already running")
        job_id = hashlib.sha1(
            f"{req.maskset_id}-{req.prompt}-{req.seed}-{os.urandom(4).hex()}".encode()
        ).hexdigest()[:10]
        job_dir = os.path.join(self.config.work_dir, "jobs", job_id)
        os.makedirs(os.path.join(job_dir, "previews"), exist_ok=True)
        self.jobs.put(job_id, {"job_id": job_id, "phase": "repaint", "step": 0,
                               "losses": {}, "preview_view": 0, "error": ""})

        from .guidance import ToyDeltaDenoiser
        den = ToyDeltaDenoiser(
            self.schedule, self.denoiser_proto.registry,
            [(v.rgb.astype(np.float64), m.astype(np.float64))
             for v, m in zip(self.dataset.views, ms.masks)],
        )

        def status_cb(status, preview):
            png = None
            if preview is not None:
                png = _png_bytes(preview)
                save_png(os.path.join(job_dir, "previews",
                                      f"step_{status.step:06d}.png"), preview)
            self.jobs.put(job_id, status.to_json(), png)

        def run():
            try:
                rp = Repainter(
                    prompt=req.prompt, bgt=req.bgt,
                    lambda_unmask=req.lambda_unmask, lambda_clip=req.lambda_clip,
                    repaint_steps=req.steps, seed=req.seed, sds=req.sds,
                    bgt_in_prompt=req.bgt_in_prompt, clip=req.clip,
                    n_samples=self.config.n_samples, job_id=job_id,
                    log_path=os.path.join(job_dir, "losses.csv"),
                    status_cb=status_cb,
                )
                rp.fit(base_field, ms, self.dataset, den, self.embedder,
                       self.schedule)
                save_checkpoint(os.path.join(job_dir, "edited.rpck"), rp.field_)
            except Exception as e:  # job failures land in the status record
                rec = self.jobs.get(job_id)
                status = rec["status"] if rec else {"job_id": job_id, "step": 0}
                status.update({"phase": "failed", "error": str(e)})
                self.jobs.put(job_id, status)
            finally:
                self.jobs.release()

        threading.Thread(target=run, daemon=True).start()
        return job_id


def http_serve(config, host="127.0.0.1", port=8710):
    import uvicorn
    app = create_app(config)
    uvicorn.run(app, host=host, port=port, log_level="warning")
