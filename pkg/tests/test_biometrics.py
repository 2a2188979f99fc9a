import dataclasses
import json
import os

import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis.strategies import composite, integers, lists, permutations, sampled_from

from factories import SCENARIOS, THRESHOLD, golden_text
from utils.biometrics import (
    ActorRecord,
    ActorRegistry,
    ActorRole,
    BiometricTemplate,
    BiometricVerifier,
    EncryptedTemplate,
    MatchDecision,
    ScramblingKey,
    derive_key,
    distance,
    noisy_probe,
    random_template,
    scramble,
    verify,
)
from utils.chain_store import load_key, load_template
from utils.constants import GENUINE_NOISE, TEMPLATE_DIM
from utils.errors import (
    DuplicateActorError,
    InvalidValueError,
    KeyMismatchError,
    ScrambleOverflowError,
    TemplateRangeError,
    UnknownActorError,
)
from utils import ledger

IDENTITY = tuple(range(TEMPLATE_DIM))


def template(*head):
    return BiometricTemplate(tuple(head) + (0,) * (TEMPLATE_DIM - len(head)))


def key(permutation=IDENTITY, signs=(1,) * TEMPLATE_DIM, key_id=1):
    return ScramblingKey(key_id, permutation, signs)


# -32768 has no sign-flipped counterpart
components = integers(min_value=-32767, max_value=32767)


@composite
def templates(draw):
    return BiometricTemplate(tuple(draw(lists(components, min_size=TEMPLATE_DIM, max_size=TEMPLATE_DIM))))


@composite
def scrambling_keys(draw):
    permutation = draw(permutations(range(TEMPLATE_DIM)))
    signs = draw(lists(sampled_from((-1, 1)), min_size=TEMPLATE_DIM, max_size=TEMPLATE_DIM))
    return ScramblingKey(draw(integers(0, 2 ** 32 - 1)), tuple(permutation), tuple(signs))


class TestKeys:
    def test_derive_key_is_deterministic(self):
        assert derive_key(7, 1) == derive_key(7, 1)

    def test_derived_permutation_is_bijection(self):
        k = derive_key(7, 1)
        assert sorted(k.permutation) == list(range(TEMPLATE_DIM))
        assert set(k.signs) <= {-1, 1}

    def test_different_seeds_give_different_keys(self):
        assert derive_key(7, 1).permutation != derive_key(8, 1).permutation
        assert derive_key(7, 1).permutation != derive_key(7, 2).permutation

    @pytest.mark.parametrize("frozen", json.loads(golden_text("derived_keys.json")),
                             ids=lambda k: f"seed{k['seed']}-key{k['key_id']}")
    def test_derived_key_matches_frozen_output(self, frozen):
        k = derive_key(frozen["seed"], frozen["key_id"])
        assert list(k.permutation) == frozen["permutation"]
        assert list(k.signs) == frozen["signs"]

    def test_key_rejects_non_bijection(self):
        with pytest.raises(InvalidValueError):
            ScramblingKey(1, (0,) * TEMPLATE_DIM, (1,) * TEMPLATE_DIM)

    def test_key_rejects_bad_signs(self):
        with pytest.raises(InvalidValueError):
            ScramblingKey(1, IDENTITY, (0,) + (1,) * (TEMPLATE_DIM - 1))

    def test_key_json_fields(self):
        data = derive_key(7, 1).to_dict()
        assert set(data) == {'key_id', 'seed_note', 'permutation', 'signs'}
        assert ScramblingKey.from_dict(json.loads(json.dumps(data))) == derive_key(7, 1)


class TestScramble:
    def test_identity_key(self):
        t = random_template(np.random.default_rng(0))
        assert scramble(t, key()).values == t.values

    def test_all_negative_signs(self):
        out = scramble(template(1024), key(signs=(-1,) * TEMPLATE_DIM))
        assert out.values == (-1024,) + (0,) * (TEMPLATE_DIM - 1)

    def test_small_permutation_example(self):
        permutation = (2, 0, 3, 1) + IDENTITY[4:]
        signs = (1, -1, 1, -1) + (1,) * (TEMPLATE_DIM - 4)
        out = scramble(template(10, 20, 30, 40), key(permutation, signs, key_id=9))
        assert out.values[:4] == (30, -10, 40, -20)
        assert out.key_id == 9

    def test_overflow_on_negated_minimum(self):
        with pytest.raises(ScrambleOverflowError):
            scramble(template(-32768), key(signs=(-1,) * TEMPLATE_DIM))

    def test_minimum_with_positive_sign_is_fine(self):
        assert scramble(template(-32768), key()).values[0] == -32768

    def test_matches_reference_formula(self):
        rng = np.random.default_rng(3)
        t, k = random_template(rng), derive_key(11, 4)
        expected = tuple(k.signs[i] * t.values[k.permutation[i]] for i in range(TEMPLATE_DIM))
        assert scramble(t, k).values == expected


class TestDistance:
    def test_self_distance_is_zero(self):
        t = random_template(np.random.default_rng(1))
        assert distance(t, t) == 0

    def test_single_coordinate(self):
        assert distance(template(), template(1024)) == 1048576

    def test_extreme_values_do_not_overflow(self):
        a = BiometricTemplate((32767,) * TEMPLATE_DIM)
        b = BiometricTemplate((-32768,) * TEMPLATE_DIM)
        assert distance(a, b) == TEMPLATE_DIM * 65535 ** 2

    @settings(max_examples=1000, deadline=None, suppress_health_check=[HealthCheck.too_slow])
    @given(templates(), templates(), scrambling_keys())
    def test_isometry_over_random_triples(self, t1, t2, k):
        assert distance(scramble(t1, k), scramble(t2, k)) == distance(t1, t2)

    @settings(max_examples=200, deadline=None)
    @given(templates(), templates(), integers(0, 2 ** 32 - 1), integers(0, 2 ** 32 - 1))
    def test_isometry_under_derived_keys(self, t1, t2, seed, key_id):
        k = derive_key(seed, key_id)
        assert distance(scramble(t1, k), scramble(t2, k)) == distance(t1, t2)

    def test_key_mismatch(self):
        t = random_template(np.random.default_rng(5))
        with pytest.raises(KeyMismatchError):
            distance(scramble(t, derive_key(1, 1)), scramble(t, derive_key(1, 2)))

    def test_mixed_domains_rejected(self):
        t = random_template(np.random.default_rng(5))
        with pytest.raises(InvalidValueError):
            distance(t, scramble(t, derive_key(1, 1)))


class TestEnrollment:
    def test_enroll_single_actor(self):
        registry = ActorRegistry()
        record = registry.enroll(7, ActorRole.FARMER, random_template(np.random.default_rng(0)), derive_key(1, 1))
        assert len(registry) == 1
        assert record.actor_id == 7
        assert 7 in registry

    def test_duplicate_actor(self):
        registry = ActorRegistry()
        t = random_template(np.random.default_rng(0))
        registry.enroll(7, ActorRole.FARMER, t, derive_key(1, 1))
        with pytest.raises(DuplicateActorError):
            registry.enroll(7, ActorRole.SHIPPER, t, derive_key(1, 2))

    def test_template_range(self):
        with pytest.raises(TemplateRangeError):
            ActorRegistry().enroll(7, ActorRole.FARMER, template(5, -32768), derive_key(1, 1))

    def test_enrolled_values_match_independent_scramble(self):
        t, k = random_template(np.random.default_rng(8)), derive_key(3, 3)
        record = ActorRegistry().enroll(1, ActorRole.PROCESSOR, t, k)
        expected = [0] * TEMPLATE_DIM
        for i, (src, sign) in enumerate(zip(k.permutation, k.signs)):
            expected[i] = -t.values[src] if sign < 0 else t.values[src]
        assert list(record.enrolled.values) == expected

    def test_unknown_actor(self):
        with pytest.raises(UnknownActorError):
            ActorRegistry().get(99)

    def test_registry_json_has_no_raw_templates(self, registry):
        data = json.loads(json.dumps(registry.to_dict()))
        assert all(set(actor) == {'actor_id', 'role', 'enrolled'} for actor in data['actors'])
        assert ActorRegistry.from_dict(data) == registry

    def test_iteration_in_actor_id_order(self, registry):
        assert [r.actor_id for r in registry] == [101, 102, 103, 104]


class TestVerify:
    def test_exact_probe(self, registry):
        record = registry.get(101)
        decision = verify(record.enrolled, record, THRESHOLD)
        assert decision == MatchDecision(0, THRESHOLD, True)

    def test_genuine_and_impostor(self, actors):
        for actor_id in actors.templates:
            assert verify(actors.genuine_probe(actor_id), actors.registry.get(actor_id), THRESHOLD).accepted
            assert not verify(actors.impostor_probe(actor_id), actors.registry.get(actor_id), THRESHOLD).accepted

    def test_genuine_score_bound(self):
        rng = np.random.default_rng(9)
        t = random_template(rng)
        assert distance(t, noisy_probe(t, rng)) <= TEMPLATE_DIM * GENUINE_NOISE ** 2

    def test_key_mismatch(self, actors):
        probe = scramble(actors.templates[101], actors.keys[102])
        with pytest.raises(KeyMismatchError):
            verify(probe, actors.registry.get(101), THRESHOLD)

    def test_decision_is_threshold_rule(self, registry):
        record = registry.get(101)
        shifted = EncryptedTemplate(record.enrolled.key_id,
                                    (record.enrolled.values[0] + 3,) + record.enrolled.values[1:])
        assert verify(shifted, record, 9).accepted
        assert not verify(shifted, record, 8).accepted

    def test_decision_invariant_enforced(self):
        with pytest.raises(InvalidValueError):
            MatchDecision(10, 5, True)

    def test_verifier_service_reverify(self, actors):
        verifier = BiometricVerifier(actors.registry, THRESHOLD)
        attestation = actors.attest(102, actors.genuine_probe(102))
        assert verifier.reverify(attestation).score == attestation.match_score


class TestBundledFixtures:
    # scores computed over the raw JSON files with awk
    @pytest.mark.parametrize('actor_id, score', [(101, 6041), (102, 4994), (103, 4981), (104, 5378)])
    def test_genuine_scores(self, actor_id, score):
        data = os.path.join(SCENARIOS, 'data')
        k = load_key(os.path.join(data, f'key_{actor_id}.json'))
        registry = ActorRegistry()
        record = registry.enroll(actor_id, ActorRole.FARMER, load_template(os.path.join(data, f'template_{actor_id}.json')), k)
        decision = verify(scramble(load_template(os.path.join(data, f'probe_{actor_id}.json')), k), record, THRESHOLD)
        assert decision.score == score
        assert decision.accepted

    def test_impostor_score(self):
        data = os.path.join(SCENARIOS, 'data')
        k = load_key(os.path.join(data, 'key_102.json'))
        record = ActorRegistry().enroll(102, ActorRole.PROCESSOR, load_template(os.path.join(data, 'template_102.json')), k)
        decision = verify(scramble(load_template(os.path.join(data, 'probe_impostor.json')), k), record, THRESHOLD)
        assert decision.score == 41278306
        assert not decision.accepted


def _field_types(cls, seen=None):
    seen = seen if seen is not None else set()
    if cls in seen or not dataclasses.is_dataclass(cls):
        return seen
    seen.add(cls)
    for f in dataclasses.fields(cls):
        for candidate in (ledger.SupplyChainEvent, ledger.BiometricAttestation, ledger.Transaction,
                          ledger.BlockHeader, ledger.Block, ledger.Chain, EncryptedTemplate, ActorRecord):
            if candidate.__name__ in str(f.type):
                _field_types(candidate, seen)
    return seen


def test_ledger_types_never_hold_raw_templates():
    reachable = _field_types(ledger.Chain)
    assert ledger.BiometricAttestation in reachable
    assert BiometricTemplate not in reachable
    for cls in reachable:
        assert all('BiometricTemplate' not in str(f.type) for f in dataclasses.fields(cls))


def test_attestation_refuses_raw_template(actors):
    with pytest.raises(InvalidValueError):
        ledger.BiometricAttestation(101, actors.templates[101], 0, True, 0, 0)
