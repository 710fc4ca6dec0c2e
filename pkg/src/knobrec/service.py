"""Read-only HTTP inference service: trained-model recommendations with live
knob manipulation. Stateless unless a session id is supplied; parameters are
loaded once and shared read-only."""

from __future__ import annotations

import hashlib
import json
import uuid

import numpy as np
from fastapi import FastAPI, HTTPException
from fastapi.middleware.cors import CORSMiddleware
from pydantic import BaseModel, Field

from .control import KnobMapping, KnobSetting, infer_representation, manipulate, recommend
from .data import InteractionDataset
from .model import Checkpoint, load_checkpoint

MAX_N = 1000


class RecommendationRequest(BaseModel):
    items: list[int] = Field(default_factory=list)
    knobs: dict[str, float] = Field(default_factory=dict)
    n: int = 100
    session_id: str | None = None


class SessionRequest(BaseModel):
    items: list[int]


def _config_digest(ckpt: Checkpoint) -> str:
    blob = json.dumps({"loss": ckpt.loss_config.__dict__, "seed": ckpt.seed},
                      sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def create_app(checkpoint_path, dataset: InteractionDataset) -> FastAPI:
    ckpt = load_checkpoint(checkpoint_path)
    params = ckpt.params
    if dataset.n_items != params.n_items:
        raise ValueError(f"dataset has {dataset.n_items} items, model expects {params.n_items}")
    mapping = KnobMapping(dims=np.array(ckpt.knob_mapping, dtype=np.int64))
    factor_names = ckpt.factor_names
    factor_index = {name: j for j, name in enumerate(factor_names)}
    titles = dataset.item_titles or [str(i) for i in range(dataset.n_items)]
    prevalence = [len(dataset.items_with_factor(j)) / dataset.n_items
                  for j in range(len(factor_names))]
    sessions: dict = {}

    app = FastAPI(title="knobrec")
    app.add_middleware(CORSMiddleware, allow_origins=["*"], allow_methods=["*"],
                       allow_headers=["*"])

    @app.get("/model/info")
    def model_info():
        return {
            "n_items": params.n_items,
            "d_latent": params.d_latent,
            "n_supervised": params.n_supervised,
            "factors": factor_names,
            "supervision_frac": ckpt.loss_config.supervision_frac,
            "variant": ckpt.loss_config.variant,
            "config_digest": _config_digest(ckpt),
        }

    @app.get("/factors")
    def factors():
        return [{"index": j, "name": name, "prevalence": prevalence[j]}
                for j, name in enumerate(factor_names)]

    @app.post("/sessions")
    def create_session(req: SessionRequest):
        _validate_items(req.items)
        session_id = str(uuid.uuid4())
        sessions[session_id] = list(req.items)
        return {"session_id": session_id}

    def _validate_items(items):
        if not items:
            raise HTTPException(status_code=422, detail="items must be non-empty")
        bad = [i for i in items if not 0 <= i < params.n_items]
        if bad:
            raise HTTPException(status_code=400, detail=f"unknown items {bad[:5]}")

    def _resolve_factor(key: str) -> int:
        if key in factor_index:
            return factor_index[key]
        try:
            j = int(key)
        except ValueError:
            raise HTTPException(status_code=400, detail=f"unknown factor {key!r}")
        if not 0 <= j < len(factor_names):
            raise HTTPException(status_code=400, detail=f"unknown factor index {j}")
        return j

    @app.post("/recommendations")
    def recommendations(req: RecommendationRequest):
        if req.session_id is not None:
            if req.session_id not in sessions:
                raise HTTPException(status_code=400, detail="unknown session id")
            items = sessions[req.session_id]
        else:
            items = req.items
        _validate_items(items)
        if not 1 <= req.n <= MAX_N:
            raise HTTPException(status_code=400, detail=f"n must be in [1, {MAX_N}]")

        knob_settings = []
        for key, v in req.knobs.items():
            j = _resolve_factor(key)
            if not 0.0 <= v <= 1.0:
                raise HTTPException(status_code=400, detail=f"knob {key!r}={v} outside [0, 1]")
            knob_settings.append(KnobSetting(factor=j, value=v))

        z = infer_representation(params, np.array(sorted(set(items)), dtype=np.int64))
        for setting in knob_settings:
            z = manipulate(z, setting, mapping)
        ranked = recommend(params, z, exclude=set(items), n=req.n)

        counts = {name: 0 for name in factor_names}
        out_items = []
        for item, score in zip(ranked.items.tolist(), ranked.scores.tolist()):
            tags = [factor_names[f] for f in dataset.item_factors[item].tolist()]
            for t in tags:
                counts[t] += 1
            out_items.append({"id": item, "title": titles[item], "score": score,
                              "factors": tags})
        digest = hashlib.sha256(",".join(str(i) for i in ranked.items.tolist())
                                .encode()).hexdigest()[:16]
        return {"items": out_items, "counts": counts, "digest": digest}

    return app
