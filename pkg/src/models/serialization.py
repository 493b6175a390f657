"""Self-describing JSON text format for trained models.

Floats are written with Python's shortest round-trip repr, so a loaded model
predicts bit-for-bit what the saved one did.
"""

import json
from pathlib import Path

from src.models.ensembles import BoostModel, ForestModel
from src.models.plsr import PlsrModel
from src.models.tree import RegressionTree, TrainConfig
from src.utils.errors import ValidationError

FORMAT = "bss-forecast-model"
VERSION = 1


def model_to_dict(model):
    if isinstance(model, ForestModel):
        body = {
            "kind": "forest",
            "config": model.config.to_dict(),
            "mtry": model.mtry,
            "seed": model.seed,
            "bootstrap": model.bootstrap,
            "trees": [tree.to_dict() for tree in model.trees],
        }
    elif isinstance(model, BoostModel):
        body = {
            "kind": "lsboost",
            "config": model.config.to_dict(),
            "initial_prediction": model.initial_prediction,
            "shrinkage": model.shrinkage,
            "n_features": model.n_features,
            "betas": model.betas,
            "trees": [tree.to_dict() for tree, _ in model.stages],
            "train_mse": model.train_mse,
        }
    elif isinstance(model, PlsrModel):
        body = {"kind": "plsr", **model.to_dict()}
    else:
        raise ValidationError(f"cannot serialise {type(model).__name__}")
    return {"format": FORMAT, "version": VERSION, **body}


def model_from_dict(data):
    if data.get("format") != FORMAT:
        raise ValidationError("not a serialised forecasting model")
    if data.get("version") != VERSION:
        raise ValidationError(f"unsupported model format version {data.get('version')}")
    kind = data.get("kind")
    if kind == "forest":
        return ForestModel(
            [RegressionTree.from_dict(t) for t in data["trees"]],
            data["mtry"], data["seed"], data["bootstrap"], TrainConfig(**data["config"]),
        )
    if kind == "lsboost":
        stages = [(RegressionTree.from_dict(t), beta) for t, beta in zip(data["trees"], data["betas"])]
        return BoostModel(data["initial_prediction"], stages, data["shrinkage"], data["n_features"],
                          TrainConfig(**data["config"]), list(data["train_mse"]))
    if kind == "plsr":
        return PlsrModel.from_dict(data)
    raise ValidationError(f"unknown model kind {kind!r}")


def dumps(model) -> str:
    return json.dumps(model_to_dict(model))


def loads(text):
    return model_from_dict(json.loads(text))


def save_model(model, filename):
    path = Path(filename)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps(model))
    return path


def load_model(filename):
    return loads(Path(filename).read_text())
