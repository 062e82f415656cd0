"""End-to-end federated rounds: train, attack, verify, aggregate, commit.

One round walks the full pipeline: every client trains from the committed
global model (malicious clients train on their label-flipped shard and may
scale their parameters), the verifier scores each local model by encrypted
inference against the trusted test split, accepted models are secret-shared
to the blockchain nodes and averaged, the nodes vote on the digest of the
global model they each reconstructed, and a strict majority commits it as
a mined block.  Clients then fetch and integrity-check the new global.

Every random choice derives from the master seed through stable hashing,
so a config replays to byte-identical metrics.  Wall-clock timings are
recorded but kept out of the deterministic metrics stream.
"""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import ledger, nn, secure_agg, secure_inference
from .config import ExperimentConfig
from .data import Dataset, gen_synthetic, load_csv, load_idx, partition
from .ring import Modulus
from .sharing import Dealer
from .secure_agg import AggregationState
from .secure_inference import Verdict, threshold_for_round, verify_local_model


class ExperimentAborted(RuntimeError):
    """A round failed to commit (after its one retry)."""


def derive_seed(master: int, *tags) -> int:
    """Stable 63-bit seed from the master seed and a tag path."""
    h = hashlib.sha256(repr((master,) + tags).encode()).digest()
    return int.from_bytes(h[:8], "little") >> 1


@dataclass(frozen=True)
class AttackSpec:
    source_class: int
    target_class: int
    flip_fraction: float
    scale_factor: float

    def __post_init__(self) -> None:
        if not 0.0 < self.flip_fraction <= 1.0:
            raise ValueError("flip fraction must be in (0, 1]")
        if self.scale_factor <= 0:
            raise ValueError("scale factor must be positive")


@dataclass
class ClientProfile:
    client_id: int
    shard: Dataset
    malicious: bool = False
    attack: AttackSpec | None = None
    train_shard: Dataset = None  # shard actually trained on (flipped if malicious)

    def __post_init__(self) -> None:
        if self.train_shard is None:
            self.train_shard = self.shard


def flip_labels(shard: Dataset, source: int, target: int, fraction: float,
                seed: int) -> Dataset:
    """Relabel the first ceil(fraction * count) source-class samples (under a
    seeded shuffle) as the target class; features are untouched."""
    if source == target:
        raise ValueError("source and target classes must differ")
    if not (0 <= source < shard.class_count and 0 <= target < shard.class_count):
        raise ValueError("source/target outside the class range")
    if not 0.0 < fraction <= 1.0:
        raise ValueError("flip fraction must be in (0, 1]")
    src_idx = np.nonzero(shard.labels == source)[0]
    if src_idx.size == 0:
        raise ValueError(f"class {source} absent from shard")
    rng = np.random.Generator(np.random.PCG64(seed))
    shuffled = src_idx[rng.permutation(src_idx.size)]
    n_flip = int(np.ceil(fraction * src_idx.size))
    labels = shard.labels.copy()
    labels[shuffled[:n_flip]] = target
    return Dataset(shard.features, labels, shard.class_count)


def scale_params(model: nn.Model, gamma: float) -> nn.Model:
    """Multiply every parameter by the attacker's scaling factor."""
    if gamma <= 0:
        raise ValueError("scaling factor must be positive")
    if gamma == 1.0:
        return model
    return model.with_flat_params(model.flat_params() * gamma)


def select_malicious(client_ids: list[int], fraction: float, seed: int) -> set[int]:
    """floor(fraction * count) clients drawn uniformly; fixed per experiment."""
    if not 0.0 <= fraction <= 0.5:
        raise ValueError("malicious fraction must be in [0, 0.5]")
    count = int(fraction * len(client_ids))
    if count == 0:
        return set()
    rng = np.random.Generator(np.random.PCG64(seed))
    return set(int(c) for c in rng.choice(client_ids, size=count, replace=False))


@dataclass
class RoundMetrics:
    round: int
    per_client_accuracy: dict
    verdicts: list[Verdict]
    accepted_clients: list[int]
    global_accuracy: float
    committed_digest: str
    aborted: bool = False
    retried: bool = False
    timings_ms: dict = field(default_factory=dict)

    def metrics_json(self) -> str:
        """Deterministic per-round record (wall times deliberately excluded)."""
        return json.dumps(
            {
                "round": self.round,
                "per_client_accuracy": {str(k): v for k, v in self.per_client_accuracy.items()},
                "verdicts": [
                    {
                        "model_id": v.model_id,
                        "encrypted_accuracy": v.encrypted_accuracy,
                        "threshold": v.threshold,
                        "accepted": v.accepted,
                    }
                    for v in self.verdicts
                ],
                "accepted_clients": self.accepted_clients,
                "global_accuracy": self.global_accuracy,
                "committed_digest": self.committed_digest,
                "aborted": self.aborted,
                "retried": self.retried,
            },
            sort_keys=True,
        )


@dataclass
class ExperimentState:
    config: ExperimentConfig
    clients: list[ClientProfile]
    eval_set: Dataset
    verified_set: Dataset
    global_model: nn.Model
    chain: ledger.Chain
    initial_model: nn.Model | None = None
    round: int = 0
    prev_verified_acc: float | None = None
    banned: set = field(default_factory=set)
    model_store: dict = field(default_factory=dict)  # round -> model bytes
    plaintext_debug: bool = False

    def __post_init__(self) -> None:
        if self.initial_model is None:
            self.initial_model = self.global_model

    @property
    def master_seed(self) -> int:
        return self.config.seeds.master


def build_state(cfg: ExperimentConfig, plaintext_debug: bool = False) -> ExperimentState:
    """Materialize datasets, client profiles and the initial global model."""
    master = cfg.seeds.master
    d = cfg.data
    if d.kind == "synthetic":
        total = gen_synthetic(d.classes, d.dims, d.per_class, derive_seed(master, "data"),
                              d.separation)
    elif d.kind == "idx":
        total = load_idx(d.images_path, d.labels_path)
    else:
        total = load_csv(d.csv_path)

    holdout = d.eval_count + d.verified_count
    if holdout + cfg.data.clients > len(total):
        raise ValueError("dataset too small for the configured splits")
    rng = np.random.Generator(np.random.PCG64(derive_seed(master, "split")))
    order = rng.permutation(len(total))
    eval_set = total.subset(order[: d.eval_count])
    # The verifier's trusted split is curated class-balanced, so a model that
    # loses exactly one of C classes scores at most (C-1)/C on it.
    rest = order[d.eval_count :]
    per_cls = d.verified_count // total.class_count
    ver_idx, pool_idx = [], []
    counts = {c: 0 for c in range(total.class_count)}
    for i in rest:
        c = int(total.labels[i])
        if counts[c] < per_cls:
            counts[c] += 1
            ver_idx.append(i)
        else:
            pool_idx.append(i)
    verified_set = total.subset(np.asarray(ver_idx))
    train_pool = total.subset(np.asarray(pool_idx))
    shards = partition(train_pool, d.clients, derive_seed(master, "partition"))

    bad = select_malicious(list(range(d.clients)), cfg.attack.malicious_fraction,
                           derive_seed(master, "malicious"))
    attack = AttackSpec(cfg.attack.source_class, cfg.attack.target_class,
                        cfg.attack.flip_fraction, cfg.attack.scale_factor)
    clients = []
    for cid in range(d.clients):
        mal = cid in bad
        profile = ClientProfile(cid, shards[cid], mal, attack if mal else None)
        if mal:
            profile.train_shard = flip_labels(
                shards[cid], attack.source_class, attack.target_class,
                attack.flip_fraction, derive_seed(master, "flip", cid),
            )
        clients.append(profile)

    feature_shape = total.features.shape[1:]
    if cfg.model.kind == "mlp":
        input_dim = int(np.prod(feature_shape))
        model = nn.init_mlp(input_dim, list(cfg.model.hidden), total.class_count,
                            derive_seed(master, "init"))
        eval_set = _flatten_ds(eval_set)
        verified_set = _flatten_ds(verified_set)
        clients = [_flatten_client(c) for c in clients]
    else:
        if len(feature_shape) == 2:
            eval_set = _imageify(eval_set)
            verified_set = _imageify(verified_set)
            clients = [_imageify_client(c) for c in clients]
            feature_shape = (1,) + feature_shape
        if len(feature_shape) != 3:
            raise ValueError("cnn model requires image-shaped features (h, w) or (c, h, w)")
        model = nn.init_cnn(feature_shape, cfg.model.conv_channels, cfg.model.kernel,
                            total.class_count, derive_seed(master, "init"), cfg.model.pool)

    chain = ledger.Chain(difficulty=cfg.ledger.difficulty)
    return ExperimentState(cfg, clients, eval_set, verified_set, model, chain,
                           plaintext_debug=plaintext_debug)


def _flatten_ds(ds: Dataset) -> Dataset:
    return Dataset(ds.features.reshape(len(ds), -1), ds.labels, ds.class_count)


def _flatten_client(c: ClientProfile) -> ClientProfile:
    out = ClientProfile(c.client_id, _flatten_ds(c.shard), c.malicious, c.attack,
                        _flatten_ds(c.train_shard))
    return out


def _imageify(ds: Dataset) -> Dataset:
    n, h, w = ds.features.shape
    return Dataset(ds.features.reshape(n, 1, h, w), ds.labels, ds.class_count)


def _imageify_client(c: ClientProfile) -> ClientProfile:
    return ClientProfile(c.client_id, _imageify(c.shard), c.malicious, c.attack,
                         _imageify(c.train_shard))


def _train_clients(state: ExperimentState) -> dict[int, nn.Model]:
    cfg = state.config
    locals_: dict[int, nn.Model] = {}
    for c in state.clients:
        if c.client_id in state.banned:
            continue
        tc = nn.TrainConfig(
            learning_rate=cfg.train.learning_rate,
            epochs=cfg.train.epochs_per_round,
            batch_size=cfg.train.batch_size,
            rng_seed=derive_seed(state.master_seed, "train", state.round, c.client_id),
            optimizer=cfg.train.optimizer,
        )
        local = nn.train_local(state.global_model, c.train_shard, tc)
        if c.malicious and c.attack is not None:
            local = scale_params(local, c.attack.scale_factor)
        locals_[c.client_id] = local
    return locals_


def _verify_models(state: ExperimentState, locals_: dict[int, nn.Model]) -> list[Verdict]:
    cfg = state.config
    absolute = (cfg.verifier.threshold_value
                if cfg.verifier.threshold_rule == "absolute" else None)
    tau = threshold_for_round(state.prev_verified_acc, state.eval_set.class_count, absolute)
    verdicts = []
    for cid in sorted(locals_):
        model_id = f"r{state.round}/c{cid}"
        if cfg.verifier.mode == "plaintext" or state.plaintext_debug:
            t0 = time.perf_counter()
            acc = nn.evaluate(locals_[cid], state.verified_set)
            verdicts.append(Verdict(model_id, state.round, acc, tau, acc >= tau,
                                    (time.perf_counter() - t0) * 1000.0))
        else:
            dealer = Dealer(
                derive_seed(state.master_seed, "verify", state.round, cid),
                Modulus.power_of_two(secure_inference.SHARE_BITS),
            )
            verdicts.append(
                verify_local_model(locals_[cid], state.verified_set, tau, dealer,
                                   state.round, model_id)
            )
    return verdicts


def _aggregate(state: ExperimentState, locals_: dict[int, nn.Model],
               accepted: list[int]) -> nn.Model:
    if state.plaintext_debug:
        stack = np.stack([locals_[cid].flat_params() for cid in accepted])
        return state.global_model.with_flat_params(stack.mean(axis=0))
    dealer = Dealer(derive_seed(state.master_seed, "agg", state.round), Modulus.prime())
    nodes = state.config.aggregation.nodes
    agg = AggregationState(state.round, tuple(accepted), nodes,
                           state.global_model.param_count)
    for cid in accepted:
        agg.add(secure_agg.share_model_params(locals_[cid], nodes, dealer,
                                              client_id=cid, round_no=state.round))
    partials = agg.node_partial_sums()
    return secure_agg.finalize_global(partials, len(accepted), state.global_model)


def run_round(state: ExperimentState) -> RoundMetrics:
    """Execute one federated round; raises ExperimentAborted after a failed retry."""
    cfg = state.config
    timings: dict[str, float] = {}

    t0 = time.perf_counter()
    locals_ = _train_clients(state)
    timings["train"] = (time.perf_counter() - t0) * 1000.0

    t0 = time.perf_counter()
    if cfg.verifier.enabled:
        verdicts = _verify_models(state, locals_)
        accepted = [int(v.model_id.split("/c")[1]) for v in verdicts if v.accepted]
        if cfg.verifier.ban_on_rejection:
            state.banned.update(
                int(v.model_id.split("/c")[1]) for v in verdicts if not v.accepted
            )
    else:
        verdicts = []
        accepted = sorted(locals_)
    timings["verify"] = (time.perf_counter() - t0) * 1000.0

    per_client_acc = {cid: nn.evaluate(m, state.eval_set) for cid, m in sorted(locals_.items())}

    retried = False
    for attempt in range(2):
        if accepted:
            break
        retried = True  # same inputs, one retry per the round contract
        if cfg.verifier.enabled:
            verdicts = _verify_models(state, locals_)
            accepted = [int(v.model_id.split("/c")[1]) for v in verdicts if v.accepted]
    if not accepted:
        metrics = RoundMetrics(state.round, per_client_acc, verdicts, [], 0.0, "",
                               aborted=True, retried=retried, timings_ms=timings)
        raise ExperimentAborted(f"round {state.round}: no models accepted", metrics)

    t0 = time.perf_counter()
    new_global = _aggregate(state, locals_, accepted)
    timings["aggregate"] = (time.perf_counter() - t0) * 1000.0

    model_bytes = nn.serialize(new_global)
    digest = nn.digest(new_global).sha256
    nodes = cfg.aggregation.nodes
    votes = [ledger.NodeVote(i, state.round, digest) for i in range(nodes)]
    committed = ledger.consensus_commit(votes, nodes)
    retried_consensus = False
    if committed is None:
        retried_consensus = True
        committed = ledger.consensus_commit(votes, nodes)
    if committed is None:
        metrics = RoundMetrics(state.round, per_client_acc, verdicts, accepted, 0.0, "",
                               aborted=True, retried=True, timings_ms=timings)
        raise ExperimentAborted(f"round {state.round}: consensus split", metrics)

    t0 = time.perf_counter()
    ref = f"models/round_{state.round:04d}.bin"
    block = ledger.mine_block(state.round, committed, ref, state.chain, seq=len(state.chain))
    state.chain.append(block)
    timings["mine"] = (time.perf_counter() - t0) * 1000.0

    state.model_store[state.round] = model_bytes
    if not ledger.verify_global(model_bytes, state.chain, state.round):
        raise RuntimeError("committed model failed its own integrity check")

    state.global_model = new_global
    state.prev_verified_acc = nn.evaluate(new_global, state.verified_set)
    global_acc = nn.evaluate(new_global, state.eval_set)
    metrics = RoundMetrics(state.round, per_client_acc, verdicts, accepted, global_acc,
                           committed.hex(), retried=retried or retried_consensus,
                           timings_ms=timings)
    state.round += 1
    return metrics


def _detector_stats(state: ExperimentState, rounds: list[RoundMetrics]) -> dict:
    malicious = {c.client_id for c in state.clients if c.malicious}
    mal_total = mal_caught = benign_total = benign_rejected = 0
    for rm in rounds:
        for v in rm.verdicts:
            cid = int(v.model_id.split("/c")[1])
            if cid in malicious:
                mal_total += 1
                mal_caught += 0 if v.accepted else 1
            else:
                benign_total += 1
                benign_rejected += 0 if v.accepted else 1
    return {
        "recall": (mal_caught / mal_total) if mal_total else None,
        "false_positive_rate": (benign_rejected / benign_total) if benign_total else None,
        "false_positives": benign_rejected,
        "malicious_submissions": mal_total,
    }


def run_experiment(cfg: ExperimentConfig, out_dir: str | Path | None = None,
                   plaintext_debug: bool = False) -> dict:
    """Run all rounds, write artifacts, and return the summary dict."""
    state = build_state(cfg, plaintext_debug)
    rounds: list[RoundMetrics] = []
    aborted = False
    try:
        for _ in range(cfg.train.rounds):
            rounds.append(run_round(state))
    except ExperimentAborted as exc:
        rounds.append(exc.args[1])
        aborted = True

    detector = _detector_stats(state, rounds)
    final_acc = rounds[-1].global_accuracy if rounds and not aborted else 0.0

    recovery_delta = None
    if cfg.verifier.enabled and not aborted and rounds and rounds[-1].verdicts:
        last = rounds[-1]
        if len(last.accepted_clients) < len(last.verdicts):
            # What filtering bought in the final round: committed global vs a
            # shadow aggregate that includes the rejected models.
            locals_ = _train_clients_replay(state, last)
            if locals_ is not None:
                stack = np.stack([m.flat_params() for m in locals_.values()])
                shadow = state.global_model.with_flat_params(stack.mean(axis=0))
                recovery_delta = final_acc - nn.evaluate(shadow, state.eval_set)

    summary = {
        "rounds_completed": sum(1 for r in rounds if not r.aborted),
        "aborted": aborted,
        "final_global_accuracy": final_acc,
        "detector_recall": detector["recall"],
        "detector_false_positive_rate": detector["false_positive_rate"],
        "detector_false_positives": detector["false_positives"],
        "malicious_clients": sorted(c.client_id for c in state.clients if c.malicious),
        "recovery_delta": recovery_delta,
        "final_digest": rounds[-1].committed_digest if rounds else "",
    }

    if out_dir is not None:
        _write_artifacts(Path(out_dir), state, rounds, summary)
    return summary


def _train_clients_replay(state: ExperimentState, last: RoundMetrics) -> dict | None:
    """Re-train the final round's locals from the prior global for the shadow
    aggregate.  Round state has already advanced, so replay uses the stored
    model bytes of the previous commit."""
    prev_round = last.round - 1
    if prev_round >= 0 and prev_round not in state.model_store:
        return None
    base = (nn.deserialize(state.model_store[prev_round])
            if prev_round >= 0 else state.initial_model)
    saved_round, saved_global = state.round, state.global_model
    state.round, state.global_model = last.round, base
    try:
        return _train_clients(state)
    finally:
        state.round, state.global_model = saved_round, saved_global


def _write_artifacts(out: Path, state: ExperimentState, rounds: list[RoundMetrics],
                     summary: dict) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / "metrics.jsonl").write_text(
        "".join(rm.metrics_json() + "\n" for rm in rounds)
    )
    (out / "verdicts.jsonl").write_text(
        "".join(v.to_json() + "\n" for rm in rounds for v in rm.verdicts)
    )
    with open(out / "timings.csv", "w") as fh:
        fh.write("round,train_ms,verify_ms,aggregate_ms,mine_ms\n")
        for rm in rounds:
            t = rm.timings_ms
            fh.write(f"{rm.round},{t.get('train', 0.0):.3f},{t.get('verify', 0.0):.3f},"
                     f"{t.get('aggregate', 0.0):.3f},{t.get('mine', 0.0):.3f}\n")
    with open(out / "summary.csv", "w") as fh:
        keys = sorted(summary)
        fh.write(",".join(keys) + "\n")
        fh.write(",".join(_csv_cell(summary[k]) for k in keys) + "\n")
    models = out / "models"
    models.mkdir(exist_ok=True)
    for r, blob in state.model_store.items():
        (models / f"round_{r:04d}.bin").write_bytes(blob)
    ledger.save_chain(state.chain, str(out / "chain.bin"))


def _csv_cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, list):
        return ";".join(str(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)
