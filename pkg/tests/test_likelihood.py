import numpy as np
import pytest
from scipy.integrate import dblquad, quad

from mixhmm.likelihood import (
    DegenerateConditioningError,
    SubjectRecord,
    dataset_loglik,
    death_matrix,
    restricted_path_closed_form,
    sampling_probability,
    subject_loglik,
    validate_record,
    visit_matrix,
)
from mixhmm.model import (
    ComponentSpec,
    EmissionMatrix,
    FreeParameterization,
    MixtureModelSpec,
    ParameterSet,
    nun_study_model,
)
from mixhmm.presets import sim_study_truth

from oracles import reference_subject_loglik


def two_state_model():
    comp = ComponentSpec(
        n_states=2,
        absorbing_states=(2,),
        transitions=((1, 2),),
        emission=EmissionMatrix.from_map(2, 2, {1: 1, 2: 2}),
        initial_support=(1,),
    )
    return MixtureModelSpec(components=(comp,), obs_states=2, obs_absorbing=(2,))


def two_state_params(rate=1.0):
    return ParameterSet(
        psi=np.array([1.0]), pi=(np.array([1.0, 0.0]),), rates=({(1, 2): rate},)
    )


def three_state_progressive():
    comp = ComponentSpec(
        n_states=3,
        absorbing_states=(3,),
        transitions=((1, 2), (2, 3)),
        emission=EmissionMatrix.from_map(3, 3, {1: 1, 2: 2, 3: 3}),
        initial_support=(1, 2),
    )
    return MixtureModelSpec(components=(comp,), obs_states=3, obs_absorbing=(3,))


def random_nun_params(rng, lo=0.3, hi=3.0, margin=0.05):
    """Valid dementia-model parameters with well-separated exit rates."""
    while True:
        r1 = {(1, 2): rng.uniform(lo, hi), (1, 3): rng.uniform(lo, hi), (2, 4): rng.uniform(lo, hi)}
        r2 = {
            (1, 2): rng.uniform(lo, hi),
            (1, 4): rng.uniform(lo, hi),
            (2, 3): rng.uniform(lo, hi),
            (2, 5): rng.uniform(lo, hi),
            (3, 6): rng.uniform(lo, hi),
        }
        alpha = r2[(1, 2)] + r2[(1, 4)]
        beta = r2[(2, 3)] + r2[(2, 5)]
        gamma = r2[(3, 6)]
        seps = [
            abs(r1[(1, 2)] + r1[(1, 3)] - r1[(2, 4)]),
            abs(alpha - beta),
            abs(beta - gamma),
            abs(alpha - gamma),
        ]
        if min(seps) < margin:
            continue
        p1 = rng.uniform(0.1, 0.9)
        w = rng.uniform(0.05, 1.0, 3)
        w /= w.sum()
        psi1 = rng.uniform(0.1, 0.9)
        return ParameterSet(
            psi=np.array([psi1, 1 - psi1]),
            pi=(np.array([p1, 1 - p1, 0.0, 0.0]), np.array([w[0], w[1], w[2], 0.0, 0.0, 0.0])),
            rates=(r1, r2),
        )


def random_restricted_times(rng, k_max=4):
    gaps = rng.uniform(0.1, 0.8, 4)
    a2 = gaps[0]
    a3 = a2 + gaps[1]
    a4 = a3 + gaps[2]
    a5 = a4 + gaps[3]
    return (0.0, float(a2), float(a3), float(a4), float(a5))


def restricted_record(times):
    a1, a2, a3, a4, a5 = times
    return SubjectRecord(
        entry_time=a1,
        visit_times=(a1, a2, a3, a4),
        visit_states=(1, 1, 2, 2),
        death_time=a5,
        death_state=3,
    )


# ---------------------------------------------------------------------------
# sampling probability
# ---------------------------------------------------------------------------


def test_sampling_probability_is_one_at_origin():
    model = nun_study_model()
    truth = sim_study_truth()
    for m in (1, 2):
        assert sampling_probability(model, truth, m, 0.0) == pytest.approx(1.0, abs=1e-14)


def test_sampling_probability_two_state_survival():
    model = two_state_model()
    params = two_state_params(1.0)
    g = sampling_probability(model, params, 1, 0.5)
    assert g == pytest.approx(np.exp(-0.5), abs=1e-10)
    # the alive vector annihilates all mass absorbed by a long horizon
    assert sampling_probability(model, params, 1, 60.0) == pytest.approx(0.0, abs=1e-20)


def test_alive_vector_zero_on_death_emitting_states():
    model = nun_study_model()
    assert np.array_equal(model.alive_vector(1), [1, 1, 0, 0])
    assert np.array_equal(model.alive_vector(2), [1, 1, 1, 0, 0, 0])


# ---------------------------------------------------------------------------
# visit and death factors
# ---------------------------------------------------------------------------


def test_visit_matrix_zero_horizon_masks_identity():
    model = nun_study_model()
    truth = sim_study_truth()
    q = visit_matrix(model, truth, 2, 0.5, 0.5, 1)
    expected = np.zeros((6, 6))
    expected[0, 0] = expected[1, 1] = 1.0
    assert np.array_equal(q, expected)


def test_visit_matrix_keeps_columns_matching_observation():
    model = nun_study_model()
    truth = sim_study_truth()
    q = visit_matrix(model, truth, 2, 0.0, 0.4, 1)
    assert np.all(q[:, 2:] == 0.0)
    assert q[0, 0] > 0 and q[0, 1] > 0
    with pytest.raises(ValueError):
        visit_matrix(model, truth, 2, 0.0, 0.4, 5)


def test_visit_matrix_against_path_integral_oracle():
    model = three_state_progressive()
    l12, l23 = 0.9, 0.6
    params = ParameterSet(
        psi=np.array([1.0]),
        pi=(np.array([1.0, 0.0, 0.0]),),
        rates=({(1, 2): l12, (2, 3): l23},),
    )
    dt = 0.5
    q = visit_matrix(model, params, 1, 0.0, dt, 2)
    # one-jump path 1 -> 2 integrated over the jump time
    oracle_12, _ = quad(lambda s: l12 * np.exp(-l12 * s) * np.exp(-l23 * (dt - s)), 0, dt)
    assert q[0, 1] == pytest.approx(oracle_12, abs=1e-9)
    # column sums for observation y=3 against the two-jump path integral
    q3 = visit_matrix(model, params, 1, 0.0, dt, 3)
    oracle_13, _ = dblquad(
        lambda u, s: l12 * np.exp(-l12 * s) * l23 * np.exp(-l23 * (u - s)),
        0,
        dt,
        lambda s: s,
        lambda s: dt,
    )
    assert q3[0, 2] == pytest.approx(oracle_13, abs=1e-8)


def test_death_matrix_two_state_density():
    model = two_state_model()
    params = two_state_params(1.0)
    q = death_matrix(model, params, 1, 0.0, 0.3, 2)
    assert q[0, 1] == pytest.approx(np.exp(-0.3), abs=1e-12)
    assert q[0, 0] == 0.0 and np.all(q[1] == 0.0)


def test_death_matrix_column_support():
    model = nun_study_model()
    truth = sim_study_truth()
    q = death_matrix(model, truth, 1, 0.5, 0.8, 3)
    assert np.all(q[:, :2] == 0.0)
    assert q[:2, 2:].max() > 0
    with pytest.raises(ValueError, match="absorbing"):
        death_matrix(model, truth, 1, 0.5, 0.8, 2)
    with pytest.raises(ValueError, match="exceed"):
        death_matrix(model, truth, 1, 0.8, 0.5, 3)


def test_death_density_normalizes():
    model = two_state_model()
    params = two_state_params(1.3)
    record = SubjectRecord(entry_time=0.0, visit_times=(0.0,), visit_states=(1,))

    def density(u):
        rec = SubjectRecord(
            entry_time=0.0, visit_times=(0.0,), visit_states=(1,), death_time=u, death_state=2
        )
        return np.exp(subject_loglik(model, params, rec))

    integral, _ = quad(density, 0, 40)
    survive = np.exp(subject_loglik(model, params, record)) * np.exp(-1.3 * 0.0)
    # at tau = 0 the "survival" factor is the single-visit likelihood, which is 1,
    # so death over (0, inf) must integrate to 1
    assert survive == pytest.approx(1.0)
    assert integral == pytest.approx(1.0, abs=1e-6)


# ---------------------------------------------------------------------------
# subject and dataset log likelihood
# ---------------------------------------------------------------------------


def test_single_visit_certain_state_gives_zero_loglik():
    model = two_state_model()
    params = two_state_params()
    rec = SubjectRecord(entry_time=0.0, visit_times=(0.0,), visit_states=(1,))
    assert subject_loglik(model, params, rec) == pytest.approx(0.0, abs=1e-14)


def test_matches_closed_form_on_restricted_path():
    truth = sim_study_truth()
    model = nun_study_model()
    times = (0.0, 0.25, 0.5, 0.75, 0.9)
    value = restricted_path_closed_form(truth, times)
    ll = subject_loglik(model, truth, restricted_record(times))
    assert np.exp(ll) == pytest.approx(value, rel=1e-10)


def test_extra_visits_inside_runs_do_not_change_value():
    # memorylessness collapses repeated observations within a constant-state run
    truth = sim_study_truth()
    model = nun_study_model()
    times = (0.0, 0.5, 0.75, 1.1, 1.4)
    base = subject_loglik(model, truth, restricted_record(times))
    rec = SubjectRecord(
        entry_time=0.0,
        visit_times=(0.0, 0.2, 0.35, 0.5, 0.75, 0.9, 1.1),
        visit_states=(1, 1, 1, 1, 2, 2, 2),
        death_time=1.4,
        death_state=3,
    )
    assert subject_loglik(model, truth, rec) == pytest.approx(base, rel=1e-12)


def test_full_aux_equals_no_aux():
    model = nun_study_model()
    truth = sim_study_truth()
    rec = restricted_record((0.0, 0.25, 0.5, 0.75, 0.9))
    full = SubjectRecord(
        entry_time=rec.entry_time,
        visit_times=rec.visit_times,
        visit_states=rec.visit_states,
        death_time=rec.death_time,
        death_state=rec.death_state,
        aux=((1, 2, 3, 4), (1, 2, 3, 4, 5, 6)),
    )
    assert subject_loglik(model, truth, full) == subject_loglik(model, truth, rec)


def test_against_reference_implementation():
    model = nun_study_model()
    rng = np.random.default_rng(17)
    layout = FreeParameterization(model)
    records = [
        restricted_record(random_restricted_times(rng)),
        SubjectRecord(0.0, (0.0, 0.25, 0.5), (1, 1, 1)),
        SubjectRecord(0.2, (0.2, 0.5, 0.75), (1, 2), None, None) ,
    ]
    records[2] = SubjectRecord(0.2, (0.2, 0.5), (1, 2), None, None, aux=((1, 2, 3, 4), ()))
    records.append(
        SubjectRecord(0.1, (0.1, 0.6), (1, 1), 0.9, 3, aux=((), (2, 3, 5, 6)))
    )
    for _ in range(10):
        params = layout.unpack(rng.uniform(-1.5, 1.5, layout.dim))
        for rec in records:
            expected = reference_subject_loglik(model, params, rec)
            got = subject_loglik(model, params, rec)
            assert got == pytest.approx(expected, abs=1e-10)


def test_empty_dataset_and_singleton():
    model = nun_study_model()
    truth = sim_study_truth()
    assert dataset_loglik(model, truth, []).value == 0.0
    rec = restricted_record((0.0, 0.3, 0.6, 0.9, 1.2))
    single = dataset_loglik(model, truth, [rec])
    assert single.value == subject_loglik(model, truth, rec)
    assert single.per_subject.shape == (1,)


def test_permutation_leaves_value_bit_identical():
    model = nun_study_model()
    truth = sim_study_truth()
    rng = np.random.default_rng(2)
    records = [restricted_record(random_restricted_times(rng)) for _ in range(40)]
    records += [SubjectRecord(0.0, (0.0, 0.25, 0.5), (1, 1, 2))]
    base = dataset_loglik(model, truth, records)
    for _ in range(5):
        perm = rng.permutation(len(records))
        shuffled = dataset_loglik(model, truth, [records[i] for i in perm])
        assert shuffled.value == base.value
        assert np.array_equal(shuffled.per_subject, base.per_subject[perm])
    assert base.value == pytest.approx(float(base.per_subject.sum()), rel=1e-12)


def test_record_validation_errors_carry_index():
    model = nun_study_model()
    truth = sim_study_truth()
    bad = SubjectRecord(0.0, (0.0, 0.5), (1, 3))
    with pytest.raises(ValueError, match="record 1"):
        dataset_loglik(model, truth, [restricted_record((0.0, 0.2, 0.4, 0.6, 0.8)), bad])


def test_annihilated_likelihood_is_minus_inf_not_error():
    # dementia observed, then dementia-free again: impossible under progression
    model = nun_study_model()
    truth = sim_study_truth()
    rec = SubjectRecord(0.0, (0.0, 0.25, 0.5), (2, 1, 1))
    assert subject_loglik(model, truth, rec) == -np.inf


def test_degenerate_conditioning_raises():
    comp = ComponentSpec(
        n_states=2,
        absorbing_states=(2,),
        transitions=((1, 2),),
        emission=EmissionMatrix.from_map(2, 2, {1: 1, 2: 2}),
        initial_support=(1,),
    )
    model = MixtureModelSpec(components=(comp,), obs_states=2, obs_absorbing=(2,))
    params = ParameterSet(psi=np.array([1.0]), pi=(np.array([1.0, 0.0]),), rates=({(1, 2): 4000.0},))
    rec = SubjectRecord(entry_time=0.5, visit_times=(0.5,), visit_states=(1,))
    with pytest.raises(DegenerateConditioningError, match="record 0"):
        subject_loglik(model, params, rec)


def test_zero_weight_component_with_zero_sampling_is_fine():
    model = nun_study_model()
    truth = sim_study_truth()
    lopsided = ParameterSet(psi=np.array([0.0, 1.0]), pi=truth.pi, rates=truth.rates)
    rec = SubjectRecord(0.0, (0.0, 0.5), (1, 1))
    assert np.isfinite(subject_loglik(model, lopsided, rec))


def test_long_followup_remains_finite():
    # 200 visits would underflow naive matrix products
    model = nun_study_model()
    params = ParameterSet(
        psi=np.array([0.5, 0.5]),
        pi=sim_study_truth().pi,
        rates=(
            {(1, 2): 0.08, (1, 3): 0.05, (2, 4): 0.2},
            {(1, 2): 0.1, (1, 4): 0.04, (2, 3): 0.12, (2, 5): 0.07, (3, 6): 0.2},
        ),
    )
    times = tuple(np.arange(200) * 0.25)
    rec = SubjectRecord(0.0, times, (1,) * 150 + (2,) * 50)
    value = subject_loglik(model, params, rec)
    assert np.isfinite(value) and value < 0


def test_shrinking_aux_never_increases_likelihood():
    model = nun_study_model()
    truth = sim_study_truth()
    rng = np.random.default_rng(8)
    for _ in range(20):
        rec = restricted_record(random_restricted_times(rng))
        base = subject_loglik(model, truth, rec)
        full = [set(range(1, c.n_states + 1)) for c in model.components]
        for _ in range(4):
            m = int(rng.integers(0, 2))
            if len(full[m]) > 1:
                drop = rng.choice(sorted(full[m]))
                full[m] = full[m] - {int(drop)}
            restricted = SubjectRecord(
                rec.entry_time,
                rec.visit_times,
                rec.visit_states,
                rec.death_time,
                rec.death_state,
                aux=tuple(tuple(sorted(s)) for s in full),
            )
            value = subject_loglik(model, truth, restricted)
            assert value <= base + 1e-12
            base = value


def test_naive_markov_equivalence_by_enumeration():
    # single component, identity emission: HMM likelihood = plain Markov panel likelihood
    model = three_state_progressive()
    params = ParameterSet(
        psi=np.array([1.0]),
        pi=(np.array([0.8, 0.2, 0.0]),),
        rates=({(1, 2): 0.7, (2, 3): 0.5},),
    )
    from oracles import enumerate_panel_probability

    rec = SubjectRecord(0.0, (0.0, 0.4, 0.9), (1, 2, 2))
    lam = params.intensity(model, 1).rates
    prob = 0.0
    for z0 in (1, 2):
        p0 = params.pi[0][z0 - 1]
        if p0 == 0 or z0 != rec.visit_states[0]:
            continue
        prob += p0 * enumerate_panel_probability(lam, np.eye(3)[z0 - 1], (0.4, 0.5), (2, 2))
    assert np.exp(subject_loglik(model, params, rec)) == pytest.approx(prob, rel=1e-10)


def test_probability_coherence_two_visit_grid():
    model = nun_study_model()
    rng = np.random.default_rng(31)
    layout = FreeParameterization(model)
    t2 = 0.6
    for _ in range(3):
        params = random_nun_params(rng)
        total = 0.0
        for y1 in (1, 2):
            for y2 in (1, 2):
                rec = SubjectRecord(0.0, (0.0, t2), (y1, y2))
                total += np.exp(subject_loglik(model, params, rec))
        for y1 in (1, 2):
            def density(u, y1=y1):
                rec = SubjectRecord(0.0, (0.0,), (y1,), death_time=u, death_state=3)
                return np.exp(subject_loglik(model, params, rec))

            part, _ = quad(density, 0, t2, limit=100)
            total += part
        assert total == pytest.approx(1.0, abs=1e-4)


# ---------------------------------------------------------------------------
# closed form
# ---------------------------------------------------------------------------


def test_closed_form_matches_matrix_likelihood_randomly():
    rng = np.random.default_rng(77)
    model = nun_study_model()
    for _ in range(10):
        params = random_nun_params(rng)
        times = random_restricted_times(rng)
        cf = restricted_path_closed_form(params, times)
        ll = subject_loglik(model, params, restricted_record(times))
        assert abs(np.exp(ll) - cf) / cf < 1e-8


def test_closed_form_psi1_collapses_to_type1_term():
    rng = np.random.default_rng(4)
    params = random_nun_params(rng)
    only1 = ParameterSet(psi=np.array([1.0, 0.0]), pi=params.pi, rates=params.rates)
    times = (0.0, 0.3, 0.7, 1.0, 1.5)
    r1 = params.rates[0]
    l112, l113, l124 = r1[(1, 2)], r1[(1, 3)], r1[(2, 4)]
    a12, a23, a35 = 0.3, 0.4, 0.8
    expected = (
        params.pi[0][0]
        * l112
        * l124
        * (
            np.exp(-(l112 + l113) * a12 - l124 * (a23 + a35))
            - np.exp(-(l112 + l113) * (a12 + a23) - l124 * a35)
        )
        / (l112 + l113 - l124)
    )
    assert restricted_path_closed_form(only1, times) == pytest.approx(expected, rel=1e-12)


def test_closed_form_rejects_confluent_rates():
    params = sim_study_truth()
    rates1 = dict(params.rates[0])
    rates1[(2, 4)] = rates1[(1, 2)] + rates1[(1, 3)]
    confluent = ParameterSet(psi=params.psi, pi=params.pi, rates=(rates1, params.rates[1]))
    with pytest.raises(ValueError, match="matrix evaluator"):
        restricted_path_closed_form(confluent, (0.0, 0.25, 0.5, 0.75, 0.9))


def test_closed_form_input_validation():
    params = sim_study_truth()
    with pytest.raises(ValueError, match="a1 = 0"):
        restricted_path_closed_form(params, (0.1, 0.25, 0.5, 0.75, 0.9))
    with pytest.raises(ValueError, match="a1 <= a2"):
        restricted_path_closed_form(params, (0.0, 0.5, 0.25, 0.75, 0.9))
