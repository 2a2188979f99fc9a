"""
Scenario files: node count and behaviors, network conditions, enrolled
actors and a script of client submissions, run end to end on the simulator.
"""

import logging
import os
from dataclasses import dataclass, field
from typing import Any, Dict, List

from utils.biometrics import ActorRegistry, ActorRole, scramble
from utils.chain_store import load_key, load_registry, load_template, read_json
from utils.config import settings
from utils.consensus import NodeBehavior
from utils.errors import BBCError, BudgetExceededError, ChainFormatError, ScenarioError
from utils.ledger import Chain, SupplyChainEvent
from utils.network_sim import Network, NetworkConfig, Submission, build_network

logger = logging.getLogger(__name__)


@dataclass
class Scenario:
    nodes: int
    behaviors: List[NodeBehavior]
    timeout_ticks: int
    seed: int
    threshold: int
    max_ticks: int
    network: NetworkConfig
    registry: ActorRegistry
    submissions: List[tuple] = field(default_factory=list)  # (tick, Submission)

    def build(self, record_trace: bool = False) -> Network:
        net = build_network(self.nodes, self.registry, self.threshold, self.behaviors,
                            self.network, self.timeout_ticks, record_trace)
        for tick, submission in self.submissions:
            net.submit(tick, submission)
        return net


@dataclass
class SimulationResult:
    network: Network
    chain: Chain
    final_tick: int
    budget_exceeded: bool = False

    def summary(self) -> Dict[str, Any]:
        return {
            'committed_blocks': self.chain.height,
            'committed_txs': self.chain.tx_count(),
            'rejected_txs': self.network.rejected(),
            'final_tick': self.final_tick,
            'honest_heads_identical': self.network.honest_heads_identical(),
            'budget_exceeded': self.budget_exceeded,
            'messages': self.network.counters(),
        }


def _resolve(base_dir: str, path: str) -> str:
    return path if os.path.isabs(path) else os.path.join(base_dir, path)


def _require(data: Dict[str, Any], key: str, where: str) -> Any:
    if key not in data:
        raise ScenarioError(f"{where} is missing '{key}'")
    return data[key]


def _build_registry(data: Dict[str, Any], base_dir: str) -> ActorRegistry:
    registry = load_registry(_resolve(base_dir, data['registry'])) if 'registry' in data else ActorRegistry()
    for i, actor in enumerate(data.get('actors', [])):
        where = f"actors[{i}]"
        registry.enroll(
            _require(actor, 'actor_id', where),
            ActorRole.parse(_require(actor, 'role', where)),
            load_template(_resolve(base_dir, _require(actor, 'template_file', where))),
            load_key(_resolve(base_dir, _require(actor, 'key_file', where))),
        )
    return registry


def _build_submission(index: int, item: Dict[str, Any], nodes: int, base_dir: str) -> tuple:
    where = f"submissions[{index}]"
    tick = int(_require(item, 'tick', where))
    node = int(_require(item, 'node', where))
    if tick < 0 or not 0 <= node < nodes:
        raise ScenarioError(f"{where} has tick {tick} / node {node} outside the scenario")
    probe = scramble(
        load_template(_resolve(base_dir, _require(item, 'probe_file', where))),
        load_key(_resolve(base_dir, _require(item, 'key_file', where))),
    )
    event = SupplyChainEvent.from_dict(_require(item, 'event', where))
    return tick, Submission(index, node, int(_require(item, 'actor_id', where)), probe, event)


def parse_scenario(data: Dict[str, Any], base_dir: str = '.') -> Scenario:
    try:
        nodes = int(_require(data, 'nodes', 'scenario'))
        if nodes < 1:
            raise ScenarioError("nodes must be at least 1")
        behaviors = [NodeBehavior.parse(b) for b in data.get('behaviors', ['HONEST'] * nodes)]
        if len(behaviors) != nodes:
            raise ScenarioError(f"behaviors has {len(behaviors)} entries for {nodes} nodes")
        seed = int(data.get('seed', 0))
        timeout_ticks = int(data.get('timeout_ticks', settings.timeout_ticks))
        if timeout_ticks < 1:
            raise ScenarioError("timeout_ticks must be at least 1")
        scenario = Scenario(
            nodes=nodes,
            behaviors=behaviors,
            timeout_ticks=timeout_ticks,
            seed=seed,
            threshold=int(data.get('threshold', settings.threshold)),
            max_ticks=int(data.get('max_ticks', settings.max_ticks)),
            network=NetworkConfig.from_dict(data.get('network', {}), seed, settings.base_delay, settings.jitter),
            registry=_build_registry(data, base_dir),
        )
        scenario.submissions = [_build_submission(i, item, nodes, base_dir)
                                for i, item in enumerate(data.get('submissions', []))]
        return scenario
    except (ScenarioError, ChainFormatError):
        raise
    except BBCError as e:
        raise ScenarioError(f"{e.code}: {e.message}")
    except (KeyError, TypeError, ValueError) as e:
        raise ScenarioError(f"Malformed scenario: {e}")


def load_scenario(path: str) -> Scenario:
    return parse_scenario(read_json(path), os.path.dirname(os.path.abspath(path)))


def run_scenario(scenario: Scenario, record_trace: bool = False) -> SimulationResult:
    net = scenario.build(record_trace)
    budget_exceeded = False
    try:
        final_tick = net.run_until_quiet(scenario.max_ticks)
    except BudgetExceededError as e:
        final_tick = e.final_tick
        budget_exceeded = True
    result = SimulationResult(net, net.chain_of(0), final_tick, budget_exceeded)
    logger.info(f"✅ Simulation finished at tick {final_tick}: {result.chain.height} blocks on node 0")
    return result
