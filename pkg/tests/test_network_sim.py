import json

import numpy as np
import pytest

from factories import STAGE_ACTORS, THRESHOLD, make_event
from utils.consensus import NodeBehavior, Vote
from utils.errors import BudgetExceededError, InvalidValueError
from utils.ledger import Stage, reverify_attestation, validate_chain
from utils.network_sim import (
    IDLE,
    NetworkConfig,
    Partition,
    Submission,
    TimerFire,
    build_network,
)

BYZANTINE = [NodeBehavior.EQUIVOCATOR, NodeBehavior.TAMPERER, NodeBehavior.VOTE_FLIPPER, NodeBehavior.CRASHED]


def noop_vote(sender, recipient):
    """A rejecting vote: delivered and counted, but never changes node state."""
    return Vote(sender, recipient, sender, 1, bytes(32), False)


def submission(actors, index=0, node=0, stage=Stage.FARM, impostor=False, item='lettuce-42'):
    actor_id = STAGE_ACTORS[stage]
    probe = actors.impostor_probe(actor_id) if impostor else actors.genuine_probe(actor_id)
    label = ['lettuce'] if stage == Stage.RETAIL else ()
    return Submission(index, node, actor_id, probe, make_event(item, stage, event_time=index, label=label))


class TestConfig:
    def test_drop_rate_range(self):
        with pytest.raises(InvalidValueError):
            NetworkConfig(drop_rate=1.5)

    def test_overlapping_partitions_must_be_disjoint(self):
        with pytest.raises(InvalidValueError):
            NetworkConfig(partitions=[Partition({0, 1}, 0, 10), Partition({1, 2}, 5, 20)])

    def test_sequential_partitions_may_share_nodes(self):
        config = NetworkConfig(partitions=[Partition({0, 1}, 0, 10), Partition({1, 2}, 10, 20)])
        assert config.separated(0, 2, 5)
        assert not config.separated(1, 2, 15)

    def test_from_dict(self):
        config = NetworkConfig.from_dict({'drop_rate': 0.25, 'partitions': [{'nodes': [0, 1], 'start': 3, 'end': 9}]},
                                         seed=5, base_delay=2)
        assert (config.seed, config.base_delay, config.jitter, config.drop_rate) == (5, 2, 0, 0.25)
        assert config.partitions[0].to_dict() == {'nodes': [0, 1], 'start': 3, 'end': 9}


class TestSend:
    def test_delivery_after_base_delay(self, registry):
        net = build_network(4, registry, THRESHOLD)
        net.send(noop_vote(0, 2), now=5)
        assert net.peek_tick() == 6
        assert isinstance(net.step(), Vote)
        assert net.now == 6

    def test_drop_everything(self, registry):
        net = build_network(4, registry, THRESHOLD, config=NetworkConfig(drop_rate=1.0))
        net.send(noop_vote(0, 2), now=5)
        assert net.step() is IDLE
        assert net.counters() == {'sent': 1, 'delivered': 0, 'dropped': 1, 'in_flight': 0}

    def test_partition_drops_crossing_messages(self, registry):
        config = NetworkConfig(partitions=[Partition({0, 1}, 0, 100)])
        net = build_network(4, registry, THRESHOLD, config=config, record_trace=True)
        net.send(noop_vote(0, 2), now=5)
        net.send(noop_vote(0, 1), now=5)
        assert net.step().recipient == 1
        assert net.step() is IDLE
        assert [r['outcome'] for r in net.trace] == ['sent', 'dropped:partition', 'sent', 'delivered']

    def test_partition_inactive_outside_range(self, registry):
        config = NetworkConfig(partitions=[Partition({0, 1}, 10, 20)])
        net = build_network(4, registry, THRESHOLD, config=config)
        net.send(noop_vote(0, 2), now=20)
        assert net.step().recipient == 2

    def test_equal_ticks_in_insertion_order(self, registry):
        net = build_network(4, registry, THRESHOLD)
        for recipient in (3, 1, 2):
            net.send(noop_vote(0, recipient), now=0)
        assert [net.step().recipient for _ in range(3)] == [3, 1, 2]

    def test_empty_network_is_idle(self, registry):
        assert build_network(4, registry, THRESHOLD).step() is IDLE

    def test_jitter_stays_in_range(self, registry):
        net = build_network(4, registry, THRESHOLD, config=NetworkConfig(seed=3, base_delay=2, jitter=3))
        for _ in range(50):
            net.send(noop_vote(0, 1), now=10)
        ticks = []
        while net.peek_tick() is not None:
            ticks.append(net.peek_tick())
            net.step()
        assert min(ticks) >= 12 and max(ticks) <= 15
        assert ticks == sorted(ticks)

    def test_behavior_count_checked(self, registry):
        with pytest.raises(InvalidValueError):
            build_network(4, registry, THRESHOLD, behaviors=['HONEST'])


class TestRun:
    def test_single_tx_commits_everywhere(self, registry, actors):
        net = build_network(4, registry, THRESHOLD)
        net.submit(0, submission(actors))
        net.run_until_quiet(10_000)
        assert {node.head.height for node in net.nodes} == {1}
        assert net.honest_heads_identical()
        assert net.chain_of(3).tx_count() == 1

    def test_max_ticks_must_be_positive(self, registry):
        with pytest.raises(InvalidValueError):
            build_network(4, registry, THRESHOLD).run_until_quiet(0)

    def test_total_loss_exceeds_budget(self, registry, actors):
        net = build_network(4, registry, THRESHOLD, config=NetworkConfig(drop_rate=1.0))
        net.submit(0, submission(actors))
        with pytest.raises(BudgetExceededError) as err:
            net.run_until_quiet(1_000)
        assert err.value.final_tick <= 1_000
        assert all(node.head.height == 0 for node in net.nodes)

    def test_timers_fire_on_schedule(self, registry, actors):
        net = build_network(4, registry, THRESHOLD, config=NetworkConfig(drop_rate=1.0), timeout_ticks=50)
        net.submit(0, submission(actors))
        net.step()
        assert net.peek_tick() == 50
        assert isinstance(net.step(), TimerFire)
        assert net.nodes[0].state.view == 1

    def test_crashed_proposer_is_skipped(self, registry, actors):
        behaviors = ['HONEST', 'CRASHED', 'HONEST', 'HONEST']
        net = build_network(4, registry, THRESHOLD, behaviors=behaviors)
        net.submit(0, submission(actors))
        final_tick = net.run_until_quiet(10_000)
        assert final_tick >= 50
        for node_id in (0, 2, 3):
            assert net.chain_of(node_id).tip.header.proposer_id == 2
        assert net.chain_of(1).height == 0
        assert net.honest_heads_identical()

    def test_two_crashed_proposers_in_a_row(self, registry, actors):
        behaviors = ['HONEST', 'CRASHED', 'CRASHED'] + ['HONEST'] * 4
        net = build_network(7, registry, THRESHOLD, behaviors=behaviors)
        net.submit(0, submission(actors))
        net.run_until_quiet(10_000)
        honest = net.honest_nodes()
        assert len(honest) == 5
        assert all(node.head.height == 1 for node in honest)
        assert honest[0].head.tip.header.proposer_id == 3
        assert all(node.state.view == 2 for node in honest)

    def test_healed_partition_resumes(self, registry, actors):
        config = NetworkConfig(partitions=[Partition({0, 1}, 0, 200)])
        net = build_network(4, registry, THRESHOLD, config=config)
        net.submit(5, submission(actors, node=2))
        while net.peek_tick() is not None and net.peek_tick() < 200:
            net.step()
        assert all(node.head.height == 0 for node in net.nodes)
        net.run_until_quiet(20_000)
        assert {node.head.height for node in net.nodes} == {1}
        assert net.honest_heads_identical()

    def test_trace_accounts_for_every_message(self, registry, actors, tmp_path):
        config = NetworkConfig(seed=9, jitter=2, drop_rate=0.2)
        net = build_network(4, registry, THRESHOLD, config=config, record_trace=True)
        for i, stage in enumerate(Stage):
            net.submit(10 * i, submission(actors, index=i, node=i, stage=stage))
        try:
            net.run_until_quiet(3_000)
        except BudgetExceededError:
            pass
        outcomes = [r['outcome'] for r in net.trace]
        counters = net.counters()
        assert outcomes.count('sent') == counters['sent']
        assert outcomes.count('delivered') == counters['delivered']
        assert outcomes.count('dropped:random') + outcomes.count('dropped:partition') == counters['dropped']
        assert counters['sent'] == counters['delivered'] + counters['dropped'] + counters['in_flight']

        delivered_ticks = [r['tick'] for r in net.trace if r['outcome'] == 'delivered']
        assert delivered_ticks == sorted(delivered_ticks)

        path = tmp_path / 'trace.jsonl'
        net.write_trace(str(path))
        lines = path.read_text().splitlines()
        assert len(lines) == len(net.trace)
        assert set(json.loads(lines[0])) == {'tick', 'from', 'to', 'kind', 'outcome'}


def seeded_run(actors, seed, behaviors, jitter=2, drop_rate=0.0):
    subs = [submission(actors, index=i, node=i % 4, stage=Stage(i % 4), item=f"item-{seed}")
                     for i in range(4)]
    config = NetworkConfig(seed=seed, jitter=jitter, drop_rate=drop_rate)
    net = build_network(4, actors.registry, THRESHOLD, behaviors=behaviors, config=config, record_trace=True)
    for i, sub in enumerate(subs):
        net.submit(15 * i, sub)
    return net, subs


def test_seeded_runs_are_reproducible(actors):
    first, subs = seeded_run(actors, seed=21, behaviors=['HONEST'] * 4, jitter=3, drop_rate=0.1)
    second = build_network(4, actors.registry, THRESHOLD, config=first.config, record_trace=True)
    for i, sub in enumerate(subs):
        second.submit(15 * i, sub)
    for net in (first, second):
        try:
            net.run_until_quiet(5_000)
        except BudgetExceededError:
            pass
    assert first.trace_lines() == second.trace_lines()
    assert [n.head for n in first.nodes] == [n.head for n in second.nodes]
    assert first.now == second.now


def byzantine_run(actors, behavior, seed, impostors=False):
    """n=4 with one faulty node placed and loaded from the seed."""
    rng = np.random.default_rng(seed)
    faulty = int(rng.integers(0, 4))
    behaviors = [NodeBehavior.HONEST] * 4
    behaviors[faulty] = behavior
    config = NetworkConfig(seed=seed, jitter=int(rng.integers(0, 4)))
    net = build_network(4, actors.registry, THRESHOLD, behaviors=behaviors, config=config, timeout_ticks=50)

    impostor_indices = set()
    for index in range(int(rng.integers(1, 6))):
        stage = Stage(int(rng.integers(0, 4)))
        is_impostor = impostors and index % 2 == 1
        node = (faulty + 1 + int(rng.integers(0, 3))) % 4 if is_impostor else int(rng.integers(0, 4))
        if is_impostor:
            impostor_indices.add(index)
        net.submit(int(rng.integers(0, 120)), submission(actors, index, node, stage, is_impostor, f"item-{seed}"))
    try:
        net.run_until_quiet(30_000)
        quiet = True
    except BudgetExceededError:
        quiet = False
    return net, quiet, impostor_indices


def assert_safe(net, quiet, registry):
    honest = net.honest_nodes()
    for height in {h for node in honest for h in node.state.committed_at}:
        hashes = {node.state.committed_at[height] for node in honest if height in node.state.committed_at}
        assert len(hashes) == 1, f"honest nodes disagree at height {height}"
    for node in honest:
        assert validate_chain(node.head, registry, THRESHOLD) is None
        for _, _, tx in node.head.transactions():
            assert reverify_attestation(tx.attestation, registry, THRESHOLD) is None
    if quiet:
        assert net.honest_heads_identical()


def assert_impostors_rejected(net, impostor_indices):
    rejected = {r['index']: r for r in net.rejected()}
    assert impostor_indices <= set(rejected)
    assert all(rejected[i]['reason'] == 'NO_MATCH' for i in impostor_indices)
    for node in net.honest_nodes():
        assert not {tx.attestation.nonce for _, _, tx in node.head.transactions()} & impostor_indices


@pytest.mark.parametrize('behavior', BYZANTINE)
def test_one_faulty_node_never_splits_honest_nodes(actors, behavior):
    for seed in range(5):
        net, quiet, _ = byzantine_run(actors, behavior, seed)
        assert_safe(net, quiet, actors.registry)


def test_impostor_probes_never_reach_the_ledger(actors):
    for seed in range(5):
        net, quiet, impostors = byzantine_run(actors, BYZANTINE[seed % 4], 500 + seed, impostors=True)
        assert_safe(net, quiet, actors.registry)
        assert_impostors_rejected(net, impostors)


@pytest.mark.slow
@pytest.mark.parametrize('behavior', BYZANTINE)
def test_safety_suite(actors, behavior):
    for seed in range(250):
        net, quiet, _ = byzantine_run(actors, behavior, 1000 + seed)
        assert_safe(net, quiet, actors.registry)


@pytest.mark.slow
def test_attestation_gate_suite(actors):
    for seed in range(100):
        net, quiet, impostors = byzantine_run(actors, BYZANTINE[seed % 4], 5000 + seed, impostors=True)
        assert_safe(net, quiet, actors.registry)
        assert_impostors_rejected(net, impostors)
