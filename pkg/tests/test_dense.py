from __future__ import annotations

import numpy as np
import pytest
import torch

from primflow.dense import DenseFlowModel, DenseTrainer, dense_predict
from primflow.errors import DivergenceError, ShapeError
from primflow.trainer import TINY

CONDITIONAL = TINY.evolve(obs=4, epochs=1, batch_size=2)


def _data(n: int = 4) -> np.ndarray:
    gen = np.random.default_rng(0)
    return np.cumsum(gen.normal(0, 0.2, size=(n, TINY.C, TINY.L)), axis=-1)


def test_channel_tokens_span_the_window() -> None:
    model = DenseFlowModel(CONDITIONAL)
    assert model.widths().tolist() == [float(TINY.L)] * TINY.C
    assert model.dtype == torch.float64


def test_loss_is_a_finite_scalar() -> None:
    model = DenseFlowModel(CONDITIONAL)
    x = torch.as_tensor(_data(3))
    loss = model.loss(x, torch.Generator().manual_seed(0))
    assert loss.shape == ()
    assert bool(torch.isfinite(loss))
    loss.backward()
    assert model.net.out_proj.weight.grad is not None


def test_trainer_steps_and_rejects_bad_data() -> None:
    trainer = DenseTrainer(CONDITIONAL, _data())
    model = trainer.run()
    assert trainer.step == 2
    assert isinstance(model, DenseFlowModel)
    with pytest.raises(ShapeError):
        DenseTrainer(CONDITIONAL, _data()[:, :1])


def test_trainer_divergence() -> None:
    trainer = DenseTrainer(CONDITIONAL.evolve(divergence_limit=1e-12), _data())
    with pytest.raises(DivergenceError) as excinfo:
        trainer.run()
    assert excinfo.value.term == "fm_residual"


def test_dense_predict() -> None:
    model = DenseTrainer(CONDITIONAL, _data()).run()
    prefixes = _data(3)[..., :4]
    first = dense_predict(model, prefixes, steps=3, seed=1)
    second = dense_predict(model, prefixes, steps=3, seed=1)
    assert len(first) == 3
    assert all(f.shape == (TINY.C, TINY.L - 4) for f in first)
    for a, b in zip(first, second):
        assert np.array_equal(a, b)
