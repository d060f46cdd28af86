from __future__ import annotations

import math

import pytest
import torch

from primflow.errors import ShapeError
from primflow.primdict import (
    Atom,
    Dictionary,
    column_at,
    compose,
    covering,
    effective_atom,
    gate_scores,
    length_mask,
    sample_placements,
    soft_width,
    synthesize,
    wta_gate,
)

from conftest import make_atoms

f64 = torch.float64


def test_soft_width() -> None:
    assert float(soft_width(torch.tensor(0.0, dtype=f64), 9)) == 5.0
    assert float(soft_width(torch.tensor(50.0, dtype=f64), 9)) == pytest.approx(9.0, abs=1e-9)
    assert float(soft_width(torch.tensor(-50.0, dtype=f64), 9)) == pytest.approx(1.0, abs=1e-9)
    with pytest.raises(ValueError):
        soft_width(0.0, 1)


def test_length_mask_values() -> None:
    mask = length_mask(torch.tensor(5.0, dtype=f64), 8, 10.0)
    assert float(mask[4]) == pytest.approx(0.993307, abs=1e-6)
    assert float(mask[5]) == pytest.approx(0.006693, abs=1e-6)
    assert bool(((mask >= 0) & (mask <= 1)).all())
    assert bool((mask[1:] <= mask[:-1]).all())
    assert float(mask[3]) > float(mask[4]) > float(mask[5]) > float(mask[6])
    # the transition sits half a step before the soft width
    assert float(length_mask(torch.tensor(4.5, dtype=f64), 8, 10.0)[4]) == 0.5


def test_length_mask_grows_with_width_param() -> None:
    phis = torch.linspace(-4.0, 4.0, 17, dtype=f64)
    masks = torch.stack([length_mask(soft_width(phi, 8), 8, 3.0) for phi in phis])
    assert bool((masks[1:] >= masks[:-1]).all())
    assert bool((masks[-1] > masks[0]).any())


def test_length_mask_sharp_limit() -> None:
    mask = length_mask(torch.tensor(3.2, dtype=f64), 6, 1e4)
    assert mask.round().tolist() == [1.0, 1.0, 1.0, 0.0, 0.0, 0.0]
    with pytest.raises(ValueError):
        length_mask(3.0, 6, 0.0)


def test_effective_atom_hard_mask() -> None:
    phi = torch.tensor(math.log(0.4 / 0.6), dtype=f64)
    atom = Atom(torch.ones(2, 6, dtype=f64), phi, torch.tensor(0.0, dtype=f64))
    eff = effective_atom(atom, 1e4)
    assert float(eff.soft_width) == pytest.approx(3.0)
    assert torch.allclose(eff.content[:, :3], torch.ones(2, 3, dtype=f64), atol=1e-9)
    assert torch.allclose(eff.content[:, 3:], torch.zeros(2, 3, dtype=f64), atol=1e-9)
    assert float(eff.width) == 3.0


def test_effective_atom_rounds_width() -> None:
    zero = torch.tensor(0.0, dtype=f64)
    eff = effective_atom(Atom(torch.zeros(1, 9, dtype=f64), zero, zero), 10.0)
    assert float(eff.width) == 5.0
    # 1 + 7 * sigmoid(0) = 4.5 rounds up
    eff = effective_atom(Atom(torch.zeros(1, 8, dtype=f64), zero, zero), 10.0)
    assert float(eff.soft_width) == 4.5
    assert float(eff.width) == 5.0


def test_unmasked_atom_spans_full_extent() -> None:
    atom = Atom(torch.ones(2, 5, dtype=f64), torch.tensor(-3.0, dtype=f64), torch.tensor(0.0))
    eff = effective_atom(atom, 10.0, masked=False)
    assert float(eff.width) == 5.0
    assert torch.equal(eff.content, atom.content)


def test_column_at_interpolates() -> None:
    content = torch.tensor([[0.0, 1.0, 4.0]], dtype=f64)
    assert float(column_at(content, torch.tensor(1.0, dtype=f64))[0]) == 1.0
    assert float(column_at(content, torch.tensor(1.5, dtype=f64))[0]) == 2.5
    assert float(column_at(content, torch.tensor(2.0, dtype=f64))[0]) == 4.0


def test_sample_placements_extremes() -> None:
    generator = torch.Generator().manual_seed(0)
    state = sample_placements(torch.full((3, 8), 50.0, dtype=f64), generator)
    assert bool((state.binary == 1).all())
    state = sample_placements(torch.full((3, 8), -50.0, dtype=f64), generator)
    assert bool((state.binary == 0).all())


@pytest.mark.parametrize("q", [0.1, 0.3, 0.7])
def test_sample_placements_mean(q: float) -> None:
    generator = torch.Generator().manual_seed(3)
    logits = torch.full((100, 1000), math.log(q / (1 - q)), dtype=f64)
    state = sample_placements(logits, generator)
    assert abs(float(state.binary.mean()) - q) <= 3 * math.sqrt(q * (1 - q) / 1e5)


def test_covering() -> None:
    cover = covering(torch.tensor([2]), 5)
    assert cover[0, 1].tolist() == [False, True, True, False, False]
    assert cover[0, 4].tolist() == [False, False, False, False, True]


def _gate(R: torch.Tensor, widths: list[int], scores: torch.Tensor | None = None) -> torch.Tensor:
    if scores is None:
        scores = gate_scores(R, torch.zeros(R.shape[0], dtype=f64))
    return wta_gate(R, torch.tensor(widths), scores)


def test_gate_single_event() -> None:
    R = torch.zeros(2, 8, dtype=f64)
    R[0, 2] = 1
    gate = _gate(R, [3, 2])
    assert gate[0].tolist() == [0, 0, 1, 1, 1, 0, 0, 0]
    assert gate[1].tolist() == [0] * 8


def test_gate_higher_score_wins() -> None:
    R = torch.zeros(2, 8, dtype=f64)
    R[0, 2] = 1
    R[1, 4] = 1
    scores = torch.zeros(2, 8, dtype=f64)
    scores[0, 2] = 0.9
    scores[1, 4] = 0.2
    gate = _gate(R, [3, 2], scores)
    assert gate[:, 4].tolist() == [1, 0]
    assert gate[:, 5].tolist() == [0, 1]
    scores[1, 4] = 1.5
    gate = _gate(R, [3, 2], scores)
    assert gate[:, 4].tolist() == [0, 1]


def test_gate_ties_go_to_lower_atom() -> None:
    R = torch.zeros(4, 6, dtype=f64)
    R[1, 1] = 1
    R[3, 1] = 1
    gate = _gate(R, [2, 3, 2, 3])
    assert gate[1].tolist() == [0, 1, 1, 1, 0, 0]
    assert gate[3].tolist() == [0] * 6


def test_gate_ties_go_to_earlier_onset() -> None:
    R = torch.zeros(1, 6, dtype=f64)
    R[0, 1] = 1
    R[0, 2] = 1
    gate = _gate(R, [3])
    assert gate[0].tolist() == [0, 1, 1, 1, 1, 0]


def test_gate_gradient_is_soft() -> None:
    R = torch.zeros(2, 6, dtype=f64)
    R[0, 0] = 1
    R[1, 1] = 1
    scores = torch.zeros(2, 6, dtype=f64, requires_grad=True)
    gate = wta_gate(R, torch.tensor([3, 3]), scores)
    (gate[1, 2]).backward()
    assert float(scores.grad[1, 1]) > 0
    assert float(scores.grad[0, 0]) < 0


def test_gate_shape_check() -> None:
    with pytest.raises(ShapeError):
        wta_gate(torch.zeros(2, 4), torch.tensor([1, 2, 3]), torch.zeros(2, 4))


def _line_atom() -> list:
    # columns (1,1), (2,2), (3,3)
    return [[[1.0, 2.0, 3.0], [1.0, 2.0, 3.0]]]


def test_synthesize_single_shift() -> None:
    atoms = make_atoms(_line_atom())
    R = torch.zeros(1, 8, dtype=f64)
    R[0, 2] = 1
    x_hat, _ = compose(R, atoms, torch.zeros(1, dtype=f64))
    expected = torch.zeros(2, 8, dtype=f64)
    expected[:, 2:5] = atoms.content[0]
    assert torch.equal(x_hat, expected)


def test_synthesize_disjoint_copies() -> None:
    atoms = make_atoms(_line_atom())
    R = torch.zeros(1, 8, dtype=f64)
    R[0, 0] = 1
    R[0, 5] = 1
    x_hat, _ = compose(R, atoms, torch.zeros(1, dtype=f64))
    assert torch.equal(x_hat[:, 0:3], atoms.content[0])
    assert torch.equal(x_hat[:, 5:8], atoms.content[0])
    assert torch.equal(x_hat[:, 3:5], torch.zeros(2, 2, dtype=f64))


def test_synthesize_clips_at_timeline_end() -> None:
    atoms = make_atoms(_line_atom())
    R = torch.zeros(1, 4, dtype=f64)
    R[0, 2] = 1
    x_hat, _ = compose(R, atoms, torch.zeros(1, dtype=f64))
    assert x_hat[0].tolist() == [0.0, 0.0, 1.0, 2.0]


def test_synthesize_overlap_follows_gate() -> None:
    atoms = make_atoms([[[1.0] * 3, [1.0] * 3], [[2.0] * 3, [2.0] * 3]])
    R = torch.zeros(2, 6, dtype=f64)
    R[0, 0] = 1
    R[1, 2] = 1
    x_hat, gate = compose(R, atoms, torch.tensor([1.0, 0.0], dtype=f64))
    assert gate[:, 2].tolist() == [1.0, 0.0]
    assert x_hat[0].tolist() == [1.0, 1.0, 1.0, 2.0, 2.0, 0.0]
    x_hat, _ = compose(R, atoms, torch.tensor([0.0, 1.0], dtype=f64))
    assert x_hat[0].tolist() == [1.0, 1.0, 2.0, 2.0, 2.0, 0.0]


def test_synthesize_batches() -> None:
    atoms = make_atoms(_line_atom())
    R = torch.zeros(3, 1, 8, dtype=f64)
    for b in range(3):
        R[b, 0, b] = 1
    x_hat, gate = compose(R, atoms, torch.zeros(1, dtype=f64))
    assert x_hat.shape == (3, 2, 8)
    for b in range(3):
        assert torch.equal(x_hat[b, :, b : b + 3], atoms.content[0])


def test_synthesize_shape_check() -> None:
    atoms = make_atoms(_line_atom())
    with pytest.raises(ShapeError):
        synthesize(torch.zeros(2, 8), atoms, torch.zeros(2, 8))


def test_dictionary_prune() -> None:
    dictionary = Dictionary(4, 2, 5, generator=torch.Generator().manual_seed(0))
    content = dictionary.content.detach().clone()
    dictionary.prune(torch.tensor([True, False, True, False]))
    assert dictionary.size == 2
    assert torch.equal(dictionary.content.detach(), content[[0, 2]])
    dictionary.prune(torch.zeros(2, dtype=torch.bool))
    assert dictionary.size == 2


def test_dictionary_forward_shapes() -> None:
    dictionary = Dictionary(3, 2, 6, generator=torch.Generator().manual_seed(1))
    atoms = dictionary()
    assert atoms.content.shape == (3, 2, 6)
    assert atoms.width.shape == (3,)
    assert bool(((atoms.hard_width >= 1) & (atoms.hard_width <= 6)).all())


def test_synthesize_is_linear_in_placements_for_a_fixed_gate() -> None:
    gen = torch.Generator().manual_seed(8)
    atoms = make_atoms(torch.randn(2, 2, 4, generator=gen, dtype=f64).numpy(), [3.0, 4.0])
    R1 = torch.rand(2, 9, generator=gen, dtype=f64)
    R2 = torch.rand(2, 9, generator=gen, dtype=f64)
    gate = torch.rand(2, 9, generator=gen, dtype=f64)
    combined = synthesize(2.0 * R1 - 0.5 * R2, atoms, gate)
    separate = 2.0 * synthesize(R1, atoms, gate) - 0.5 * synthesize(R2, atoms, gate)
    assert torch.allclose(combined, separate, atol=1e-12)
