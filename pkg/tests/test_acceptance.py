from __future__ import annotations

import numpy as np
import pytest

from primflow.ablation import SamplingOptions, median_ade, run_ablation
from primflow.flowgen import sample_trajectories
from primflow.metrics import jsd, recovery_report
from primflow.trainer import Trainer, reconstruct
from primflow.trajdata import (
    denormalize_array,
    normalize,
    split,
    stack_windows,
    synth_generate,
    window,
)
from primflow.types import SynthSpec, TrainConfig

# Full-size training runs on the default synthetic dataset, minutes each.
pytestmark = pytest.mark.slow

SPEC = SynthSpec(M_true=4, C=2, L=32, K=10, noise_std=0.01, n_trajectories=2000, seed=0)
BASE = TrainConfig(M=4, K=10, L=32, C=2, batch_size=64, epochs=40, lr_dict=3e-3, lr_net=1e-3)


@pytest.fixture(scope="module")
def synthetic():
    return synth_generate(SPEC)


@pytest.fixture(scope="module")
def unconditional(synthetic):
    dataset, _ = synthetic
    normalized, stats = normalize(dataset)
    samples = window(normalized, SPEC.L, 1, SPEC.L)
    trainer = Trainer(BASE, stack_windows(samples), stats=stats)
    trainer.run()
    return trainer, samples, stats


@pytest.fixture(scope="module")
def ablation(synthetic):
    dataset, _ = synthetic
    train, test = split(dataset, 0.1, seed=0)
    normalized, stats = normalize(train)
    train_samples = window(normalized, SPEC.L, 8, SPEC.L)
    test_samples = window(normalize(test, stats)[0], SPEC.L, 8, SPEC.L)
    return run_ablation(
        train_samples,
        test_samples,
        BASE.evolve(obs=8),
        ["base", "no_mask", "no_primitives", "Mx3"],
        seeds=(0, 1, 2),
        stats=stats,
        sampling=SamplingOptions(steps=50, guidance=1.5),
    )


def test_synthetic_dictionary_is_recovered(synthetic, unconditional) -> None:
    dataset, truth = synthetic
    trainer, samples, stats = unconditional
    model = trainer.model
    index = {traj.id: i for i, traj in enumerate(dataset)}
    events = [truth.events[index[sample.source_id]] for sample in samples]
    x_hat, R = reconstruct(model, model.logit_table())
    report = recovery_report(
        denormalize_array(stack_windows(samples), stats),
        denormalize_array(x_hat.double().numpy(), stats),
        R.numpy(),
        events,
        model.utilization(),
        tolerance=1,
    )
    assert report.rmse <= 0.03
    assert report.f1 >= 0.9


def test_prediction_error_grows_slowly_over_the_horizon(ablation) -> None:
    def mean_ratio(variant: str) -> float:
        ratios = [
            r.report.ratio
            for r in ablation
            if r.variant == variant and r.report is not None and r.report.ratio is not None
        ]
        assert ratios, variant
        return float(np.mean(ratios))

    assert mean_ratio("base") <= 1.3
    assert mean_ratio("base") < mean_ratio("no_primitives")


def test_ablations_degrade_in_the_expected_direction(ablation) -> None:
    assert not any(row.failed for row in ablation)
    base = median_ade(ablation, "base")
    assert median_ade(ablation, "no_mask") >= 1.1 * base
    assert median_ade(ablation, "no_primitives") >= 1.5 * base
    assert median_ade(ablation, "Mx3") <= base


def test_jsd_does_not_grow_with_the_generated_set(synthetic, unconditional) -> None:
    dataset, _ = synthetic
    trainer, _, stats = unconditional
    model = trainer.model
    real = [traj.points for traj in dataset]
    medians = []
    for scale in (0.05, 0.1, 0.2):
        n = int(round(scale * len(real)))
        values = [
            jsd(
                sample_trajectories(
                    model.net,
                    model.dictionary,
                    n,
                    50,
                    seed,
                    BASE.sigma,
                    model.encoder,
                    trainer.lengths,
                    stats,
                ),
                real,
            ).jsd_bits
            for seed in (0, 1, 2)
        ]
        medians.append(float(np.median(values)))
    for smaller, larger in zip(medians, medians[1:]):
        assert larger <= 1.1 * smaller
