import json

import numpy as np
import pytest

import parameta

SCHEMA = {
    "tasks": [
        {"name": "gender", "classes": ["female", "male"]},
        {"name": "emotion", "classes": ["neutral", "happy", "sad"]},
    ]
}

SMALL = {"batch_size": 8, "dim_meta": 8, "dim_task": 4, "hidden": 8, "dim_text": 6, "learning_rate": 0.01}


@pytest.fixture(scope="module")
def schema():
    return parameta.TaskSchema.from_json(json.dumps(SCHEMA))


@pytest.fixture(scope="module")
def data(schema):
    return parameta.generate_synthetic(schema, 200, seed=3, bins=8, frames=3)


@pytest.fixture(scope="module")
def model(data):
    return parameta.train(data, SMALL, steps=40)


def test_schema(schema):
    assert schema.task_count == 2
    assert schema.task_names() == ["gender", "emotion"]
    assert schema.classes("emotion") == ["neutral", "happy", "sad"]
    with pytest.raises(parameta.ValidationError):
        parameta.TaskSchema.from_json('{"tasks": [{"name": "a", "classes": ["x"]}]}')


def test_synthetic_is_seeded(schema, data, tmp_path):
    again = parameta.generate_synthetic(schema, 200, seed=3, bins=8, frames=3)
    assert len(data) == 200
    assert data.frames(0).shape == (8, 3)
    np.testing.assert_array_equal(data.frames(5), again.frames(5))
    path = str(tmp_path / "d.jsonl")
    parameta.write_jsonl(data, path)
    back = parameta.load_jsonl(path, schema)
    assert back.ids() == data.ids()
    assert back.labels(7) == data.labels(7)


def test_split_keeps_subjects_apart(data):
    train, test = parameta.split_subject_independent(data, 0.25, 1)
    assert len(train) + len(test) == len(data)
    assert not set(train.subjects()) & set(test.subjects())


def test_training_is_deterministic(data):
    a, b = [], []
    parameta.train(data, SMALL, steps=5, on_step=lambda s, t: a.append(t))
    parameta.train(data, SMALL, steps=5, on_step=lambda s, t: b.append(t))
    assert len(a) == 5 and a == b


def test_model_surface(model, data, tmp_path):
    emb = model.embed(data)
    assert emb["meta"].shape == (200, 8)
    assert emb["emotion"].shape == (200, 4)
    preds = model.classify(data)
    assert set(preds[0]) == {"gender", "emotion"}
    assert preds[0]["emotion"]["class"] in SCHEMA["tasks"][1]["classes"]

    cap = model.classify_caption("a sad voice")
    assert cap["gender"] is None
    assert cap["emotion"]["class"] in SCHEMA["tasks"][1]["classes"]

    r = model.manipulate(data, 0, "emotion", "sad", 1.0)
    assert r["manip_sim"] == 1.0
    assert r["reclass_hit"]

    report = parameta.evaluate(model, data)
    assert 0.0 <= report["gender"]["balanced_accuracy"] <= 1.0

    path = str(tmp_path / "m.json")
    model.save(path)
    loaded = parameta.load_model(path)
    np.testing.assert_array_equal(loaded.prototypes("gender"), model.prototypes("gender"))


def test_metrics():
    assert parameta.balanced_accuracy([[8, 2], [4, 6]]) == 0.7
    assert parameta.macro_f1([[3, 0], [0, 5]]) == 1.0
    assert parameta.weighted_f1([[3, 0], [0, 5]]) == 1.0
    with pytest.raises(parameta.ValidationError):
        parameta.balanced_accuracy([[0, 0], [0, 0]])


def test_gradient_check():
    results = dict(parameta.gradient_check(2))
    assert set(results) == {"meta", "scl_as_written", "scl_standard", "pal_speech", "pal_text", "total"}
    assert max(results.values()) < 1e-4


def test_cli_exit_codes(tmp_path):
    code, _, err = parameta.cli(["stats", "--checkpoint", str(tmp_path / "missing.json")])
    assert code == 1 and err
    code, _, _ = parameta.cli(["nonsense"])
    assert code == 1
