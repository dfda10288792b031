"""HTTP modulation service: upload an image, sweep task vectors, get
restored PNGs plus live FLOPs accounting with task-agnostic feature reuse."""

from __future__ import annotations

import io
import threading
import uuid
from collections import OrderedDict

import numpy as np
from fastapi import FastAPI, Request, Response
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse
from fastapi.staticfiles import StaticFiles
from PIL import Image, UnidentifiedImageError

from . import cost as costmod
from .extract import Extractor


class Session:
    """One uploaded image plus its cached shared feature and cost tally."""

    def __init__(self, image: np.ndarray):
        self.image = image  # [1,3,H,W] float32 in [0,1]
        self.prefix_state = None
        self.restores = 0
        self.prefix_flops = 0.0
        self.tail_flops = []  # per-restore tail cost
        self.lock = threading.Lock()


def create_app(extractor: Extractor | None, max_dim: int = 4096,
               cache_sessions: int = 16, ui_dir: str | None = None) -> FastAPI:
    app = FastAPI(title="cirnas modulation service")
    app.add_middleware(CORSMiddleware, allow_origins=["*"],
                       allow_methods=["*"], allow_headers=["*"])
    sessions: OrderedDict[str, Session] = OrderedDict()
    sessions_lock = threading.Lock()

    def get_session(sid):
        with sessions_lock:
            s = sessions.get(sid)
            if s is not None:
                sessions.move_to_end(sid)
            return s

    @app.post("/v1/session")
    async def create_session(request: Request):
        body = await request.body()
        try:
            img = Image.open(io.BytesIO(body))
            img.load()
        except (UnidentifiedImageError, OSError):
            return JSONResponse({"error": "not a decodable image"}, status_code=400)
        w, h = img.size
        if w > max_dim or h > max_dim:
            return JSONResponse({"error": f"image exceeds max dimension {max_dim}"},
                                status_code=413)
        if w % 2 or h % 2:
            return JSONResponse({"error": "image dimensions must be even"},
                                status_code=400)
        arr = np.asarray(img.convert("RGB"), dtype=np.float32)
        x = arr.transpose(2, 0, 1)[None] / 255.0
        sid = uuid.uuid4().hex
        with sessions_lock:
            sessions[sid] = Session(x)
            while len(sessions) > cache_sessions:
                sessions.popitem(last=False)  # LRU eviction
        return {"session_id": sid, "width": w, "height": h}

    @app.post("/v1/session/{sid}/restore")
    async def restore(sid: str, request: Request):
        if extractor is None:
            return JSONResponse({"error": "no model loaded"}, status_code=503)
        session = get_session(sid)
        if session is None:
            return JSONResponse({"error": "unknown session"}, status_code=404)
        payload = await request.json()
        task = payload.get("task")
        if (not isinstance(task, (list, tuple)) or len(task) != 3
                or not all(isinstance(v, (int, float)) for v in task)
                or any(v < 0 or v > 1 for v in task)):
            return JSONResponse({"error": "task must be 3 floats in [0,1]"},
                                status_code=422)
        with session.lock:
            cfg = extractor.model.config
            resolution = session.image.shape[2:]
            eps = float(extractor.controller.flops())
            spec = extractor.spec_for_task(task)
            reused = session.prefix_state is not None
            if not reused:
                session.prefix_state = extractor.run_prefix(spec, session.image)
                session.prefix_flops, _ = costmod.supernet_flops_split(
                    cfg, resolution, spec.masks, spec.shared_prefix_len)
            out = extractor.run_tail(spec, session.prefix_state, task)
            _, tail = costmod.supernet_flops_split(
                cfg, resolution, spec.masks, spec.shared_prefix_len)
            session.tail_flops.append(tail)
            session.restores += 1
            this_effect = tail + eps + (0.0 if reused else session.prefix_flops)
            amortized = costmod.amortized_cost(
                session.prefix_flops, session.tail_flops, eps, session.restores)
        img8 = np.clip(np.rint(out[0].transpose(1, 2, 0) * 255.0),
                       0, 255).astype(np.uint8)
        buf = io.BytesIO()
        Image.fromarray(img8).save(buf, format="PNG")
        return Response(buf.getvalue(), media_type="image/png", headers={
            "X-Flops-This-Effect": f"{this_effect:.0f}",
            "X-Flops-Amortized": f"{amortized:.0f}",
            "X-Prefix-Reused": "true" if reused else "false",
        })

    @app.get("/v1/model/info")
    def model_info():
        if extractor is None:
            return JSONResponse({"error": "no model loaded"}, status_code=503)
        cfg = extractor.model.config
        prefix_len = extractor.consensus.prefix_len()
        eps = float(extractor.controller.flops())
        table = {}
        for h, w in ((64, 64), (128, 128), (256, 256), (720, 1280)):
            report = costmod.cost_report(cfg, (h, w), None, prefix_len, eps)
            table[f"{w}x{h}"] = report.to_dict()
        return {
            "supernet": cfg.to_dict(),
            "prefix_length": prefix_len,
            "num_sites": cfg.num_sites,
            "channels": cfg.channels,
            "epsilon_flops": eps,
            "flops": table,
        }

    if ui_dir:
        app.mount("/ui", StaticFiles(directory=ui_dir, html=True), name="ui")

    return app
