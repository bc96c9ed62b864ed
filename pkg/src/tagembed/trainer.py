"""Mini-batch optimization of the contrastive objective over the corpus.

Each step samples anchors uniformly across all graphs, encodes them with the
current encoder, scores each anchor against its generated positive (a
weighted mixture of memory-bank rows) and against the other batch members as
negatives, and adds a weighted KL term pulling the selection weights toward
the PageRank importances. Gradients reach the encoder projection and the
batch anchors' selection tables; bank rows are constants. After the SGD step
the bank rows of the batch are overwritten with the embeddings computed this
step, so later steps reuse them without re-encoding.

Variants: `full` is the default path; `fixed_weights` freezes selection
tables at their initialization; `sim_aggregate` replaces the numerator with
the weighted per-member similarity; `no_bank` re-encodes pool members with
the current encoder every step instead of looking them up (the cost baseline
for the lazy-bank speedup).
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from tagembed.encoder import (
    EncoderParams,
    encode_features,
    encode_features_grad,
    hash_features,
    init_params,
)
from tagembed.errors import TrainingError, ValidationError
from tagembed.graph_store import TagCorpus
from tagembed.memory_bank import MemoryBank, init_bank
from tagembed.positive_gen import (
    NORM_FLOOR,
    init_selection_table,
    kl_grad,
    kl_regularizer,
    selection_weights,
    softmax_jacobian_apply,
)
from tagembed.sampler import PositivePool, build_all_pools

VARIANTS = ("full", "fixed_weights", "sim_aggregate", "no_bank")

LOSS_CSV_HEADER = "step,loss,contrastive,kl,grad_norm"


@dataclass
class TrainConfig:
    """All knobs of a training run; file keys match the field names."""

    temperature: float = 0.3
    alpha: float = 0.1
    num_pos_samples: int = 15
    batch_size: int = 64
    learning_rate: float = 0.05
    steps: int = 200
    epochs: int = 0
    seed: int = 0
    variant: str = "full"
    restart_prob: float = 0.15
    ppr_epsilon: float = 1e-4
    feature_dim: int = 4096
    embed_dim: int = 64
    checkpoint_every: int = 0
    threads: int = 1

    def __post_init__(self) -> None:
        if self.temperature <= 0:
            raise ValidationError(f"temperature must be positive, got {self.temperature}")
        if self.alpha < 0:
            raise ValidationError(f"alpha must be non-negative, got {self.alpha}")
        if self.batch_size < 2:
            raise ValidationError(f"batch_size must be >= 2, got {self.batch_size}")
        if self.num_pos_samples < 1:
            raise ValidationError(f"num_pos_samples must be >= 1, got {self.num_pos_samples}")
        if self.learning_rate < 0:
            raise ValidationError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if self.variant not in VARIANTS:
            raise ValidationError(f"variant must be one of {VARIANTS}, got {self.variant!r}")


_CONFIG_TYPES = {
    "temperature": float,
    "alpha": float,
    "num_pos_samples": int,
    "batch_size": int,
    "learning_rate": float,
    "steps": int,
    "epochs": int,
    "seed": int,
    "variant": str,
    "restart_prob": float,
    "ppr_epsilon": float,
    "feature_dim": int,
    "embed_dim": int,
    "checkpoint_every": int,
    "threads": int,
}


def parse_config_file(path: str) -> dict:
    """Read a flat "key = value" config file; '#' starts a comment line."""
    values: dict = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ValidationError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
            key, _, raw = line.partition("=")
            key = key.strip()
            raw = raw.strip()
            if key not in _CONFIG_TYPES:
                raise ValidationError(f"{path}:{lineno}: unknown config key {key!r}")
            try:
                values[key] = _CONFIG_TYPES[key](raw)
            except ValueError as exc:
                raise ValidationError(f"{path}:{lineno}: bad value for {key!r}: {raw!r}") from exc
    return values


def config_from_mapping(values: dict) -> TrainConfig:
    return TrainConfig(**values)


@dataclass
class StepReport:
    step: int
    loss: float
    contrastive_part: float
    kl_part: float
    grad_norm: float


@dataclass
class TrainState:
    """Everything a step mutates: encoder, tables, bank, rng, counter."""

    corpus: TagCorpus
    config: TrainConfig
    params: EncoderParams
    f0: EncoderParams
    pools: dict[int, PositivePool]
    bank: MemoryBank
    eligible: np.ndarray
    rng: np.random.Generator
    step: int = 0
    excluded: int = 0
    _feature_cache: dict[int, dict[int, float]] = field(default_factory=dict, repr=False)

    def features_of(self, node: int) -> dict[int, float]:
        """Hashed features of a node's text (hashing is parameter-free)."""
        cached = self._feature_cache.get(node)
        if cached is None:
            cached = hash_features(self.corpus.node_text(node), self.config.feature_dim)
            self._feature_cache[node] = cached
        return cached


def init_train_state(
    corpus: TagCorpus,
    config: TrainConfig,
    pools: dict[int, PositivePool] | None = None,
    ppr_cache: dict[int, dict[int, float]] | None = None,
) -> TrainState:
    """Build pools, initialize tables and bank with the frozen encoder."""
    params = init_params(config.feature_dim, config.embed_dim, config.seed)
    f0 = params.copy()
    excluded = 0
    if pools is None:
        pools, excluded = build_all_pools(
            corpus,
            config.num_pos_samples,
            config.restart_prob,
            config.ppr_epsilon,
            threads=config.threads,
            ppr_cache=ppr_cache,
        )
    bank = init_bank(corpus, f0)
    # Bank rows are exactly the f0 encodings at this point; reuse them for the
    # member side of the table initialization.
    for pool in pools.values():
        init_selection_table(pool, f0, corpus, member_embeddings=bank.table)
    eligible = np.asarray(sorted(pools), dtype=np.int64)
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([config.seed, 0xBA7C4])))
    return TrainState(
        corpus=corpus,
        config=config,
        params=params,
        f0=f0,
        pools=pools,
        bank=bank,
        eligible=eligible,
        rng=rng,
        excluded=excluded,
    )


def sample_batch(
    corpus: TagCorpus,
    rng: np.random.Generator,
    batch_size: int,
    eligible: np.ndarray | None = None,
) -> list[int]:
    """Uniform draw without replacement over eligible anchors of all graphs."""
    if eligible is None:
        eligible = np.arange(corpus.total_nodes, dtype=np.int64)
    if batch_size > len(eligible):
        raise ValidationError(
            f"batch_size {batch_size} exceeds {len(eligible)} eligible anchors"
        )
    picked = rng.choice(eligible, size=batch_size, replace=False)
    return [int(v) for v in picked]


def _logsumexp(logits: np.ndarray) -> float:
    m = float(logits.max())
    return m + float(np.log(np.exp(logits - m).sum()))


@dataclass
class BatchLossResult:
    loss: float
    contrastive_part: float
    kl_part: float
    per_anchor_contrastive: np.ndarray
    grad_projection: np.ndarray
    grad_tables: dict[int, np.ndarray]
    anchor_embeddings: dict[int, np.ndarray]


def batch_loss(
    batch: list[int],
    pools: dict[int, PositivePool],
    bank: MemoryBank,
    params: EncoderParams,
    config: TrainConfig,
    feature_fn=None,
    fresh_member_embedding=None,
) -> BatchLossResult:
    """Loss and exact gradients of one mini-batch with the bank frozen.

    `feature_fn(node) -> sparse features` supplies node text features (tests
    may inject synthetic ones); `fresh_member_embedding(node)` overrides the
    bank lookup in the no_bank variant.
    """
    if feature_fn is None:
        raise ValidationError("batch_loss requires a feature_fn (use TrainState.features_of)")
    tau = config.temperature
    B = len(batch)
    feats = {v: feature_fn(v) for v in batch}
    emb = {v: encode_features(params, feats[v]) for v in batch}

    upstream = {v: np.zeros(params.embed_dim) for v in batch}
    grad_tables: dict[int, np.ndarray] = {}
    per_anchor = np.zeros(B)
    kl_values = np.zeros(B)

    for i, v in enumerate(batch):
        pool = pools[v]
        a = emb[v]
        weights = selection_weights(pool)
        if config.variant == "no_bank":
            member_rows = np.stack([fresh_member_embedding(int(m)) for m in pool.members])
        else:
            member_rows = bank.table[pool.members]

        if config.variant == "sim_aggregate":
            norms = np.maximum(np.linalg.norm(member_rows, axis=1), NORM_FLOOR)
            unit_rows = member_rows / norms[:, None]
            member_sims = unit_rows @ a / tau
            l_pos = float(weights @ member_sims)
            dlpos_da = (weights @ unit_rows) / tau
            table_upstream = member_sims
        else:
            mixture = weights @ member_rows
            mix_norm = max(float(np.linalg.norm(mixture)), NORM_FLOOR)
            l_pos = float(np.dot(a, mixture)) / (mix_norm * tau)
            dlpos_da = mixture / (mix_norm * tau)
            dlpos_dmix = a / (mix_norm * tau) - (
                float(np.dot(a, mixture)) / (mix_norm**3 * tau)
            ) * mixture
            table_upstream = member_rows @ dlpos_dmix

        negatives = [k for k in batch if k != v]
        logits = np.empty(len(negatives) + 1)
        logits[0] = l_pos
        for j, k in enumerate(negatives):
            logits[j + 1] = float(np.dot(a, emb[k])) / tau
        lse = _logsumexp(logits)
        per_anchor[i] = lse - l_pos
        probs = np.exp(logits - lse)

        coeff_pos = (probs[0] - 1.0) / B
        upstream[v] += coeff_pos * dlpos_da
        for j, k in enumerate(negatives):
            coeff = probs[j + 1] / B
            upstream[v] += coeff * emb[k] / tau
            upstream[k] += coeff * a / tau

        kl_values[i] = kl_regularizer(pool)
        if config.variant != "fixed_weights":
            g_table = coeff_pos * softmax_jacobian_apply(weights, table_upstream)
            if config.alpha != 0.0:
                g_table = g_table + (config.alpha / B) * kl_grad(pool)
            grad_tables[v] = g_table

    grad_projection = np.zeros_like(params.projection)
    for v in batch:
        grad_projection += encode_features_grad(params, feats[v], upstream[v])

    contrastive = float(per_anchor.mean())
    kl_part = float(kl_values.mean())
    loss = contrastive + config.alpha * kl_part
    if not math.isfinite(loss):
        raise TrainingError(
            f"non-finite loss (contrastive={contrastive}, kl={kl_part}); "
            f"check temperature={tau} and learning rate"
        )
    return BatchLossResult(
        loss=loss,
        contrastive_part=contrastive,
        kl_part=kl_part,
        per_anchor_contrastive=per_anchor,
        grad_projection=grad_projection,
        grad_tables=grad_tables,
        anchor_embeddings=emb,
    )


def train_step(state: TrainState, batch: list[int] | None = None) -> StepReport:
    """One optimization step: sample, differentiate, update, refresh bank.

    `batch` overrides the sampler (replay and oracle tests); production runs
    leave it None.
    """
    config = state.config
    if batch is None:
        batch = sample_batch(state.corpus, state.rng, config.batch_size, state.eligible)
    fresh = None
    if config.variant == "no_bank":
        fresh = lambda node: encode_features(state.params, state.features_of(node))
    result = batch_loss(
        batch,
        state.pools,
        state.bank,
        state.params,
        config,
        feature_fn=state.features_of,
        fresh_member_embedding=fresh,
    )
    sq_norm = float((result.grad_projection**2).sum())
    for g in result.grad_tables.values():
        sq_norm += float((g**2).sum())
    grad_norm = math.sqrt(sq_norm)

    lr = config.learning_rate
    state.params.projection -= lr * result.grad_projection
    for v, g in result.grad_tables.items():
        state.pools[v].selection_table = state.pools[v].selection_table - lr * g
    if config.variant != "no_bank":
        state.bank.update([(v, result.anchor_embeddings[v]) for v in batch], step=state.step + 1)
    state.step += 1
    return StepReport(
        step=state.step,
        loss=result.loss,
        contrastive_part=result.contrastive_part,
        kl_part=result.kl_part,
        grad_norm=grad_norm,
    )


def resolve_steps(config: TrainConfig, eligible_count: int) -> int:
    """Steps to run: explicit steps, else epochs * ceil(eligible / batch)."""
    if config.steps > 0:
        return config.steps
    if config.epochs > 0:
        return config.epochs * math.ceil(eligible_count / config.batch_size)
    raise ValidationError("config must set steps > 0 or epochs > 0")


@dataclass
class TrainResult:
    params: EncoderParams
    f0: EncoderParams
    bank: MemoryBank
    pools: dict[int, PositivePool]
    reports: list[StepReport]
    excluded: int


def train(
    corpus: TagCorpus,
    config: TrainConfig,
    checkpoint_fn=None,
    state: TrainState | None = None,
) -> TrainResult:
    """Run the configured number of steps; deterministic given the seed.

    `checkpoint_fn(state)` is invoked every `checkpoint_every` steps and once
    after the final step (when provided).
    """
    if state is None:
        state = init_train_state(corpus, config)
    config = state.config
    total = resolve_steps(config, len(state.eligible))
    reports = []
    for _ in range(total):
        reports.append(train_step(state))
        if (
            checkpoint_fn is not None
            and config.checkpoint_every > 0
            and state.step % config.checkpoint_every == 0
        ):
            checkpoint_fn(state)
    if checkpoint_fn is not None:
        checkpoint_fn(state)
    return TrainResult(
        params=state.params,
        f0=state.f0,
        bank=state.bank,
        pools=state.pools,
        reports=reports,
        excluded=state.excluded,
    )


def write_loss_csv(path: str, reports: list[StepReport]) -> None:
    """Loss curve as "step,loss,contrastive,kl,grad_norm" rows."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(LOSS_CSV_HEADER + "\n")
        for r in reports:
            fh.write(
                f"{r.step},{r.loss!r},{r.contrastive_part!r},{r.kl_part!r},{r.grad_norm!r}\n"
            )


def bench_variants(
    corpus: TagCorpus,
    config: TrainConfig,
    variants: tuple[str, ...] = ("full", "no_bank"),
    steps: int = 200,
) -> dict[str, dict[str, float]]:
    """Median per-step wall clock of each variant on identical settings."""
    results: dict[str, dict[str, float]] = {}
    for variant in variants:
        cfg = replace(config, variant=variant, steps=steps)
        state = init_train_state(corpus, cfg)
        times = []
        for _ in range(steps):
            t0 = time.perf_counter()
            train_step(state)
            times.append(time.perf_counter() - t0)
        arr = np.asarray(times)
        results[variant] = {
            "steps": float(steps),
            "median_step_seconds": float(np.median(arr)),
            "mean_step_seconds": float(arr.mean()),
            "total_seconds": float(arr.sum()),
        }
    return results
