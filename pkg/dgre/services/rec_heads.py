"""
Serviço dos heads de recomendação: GMF, MLP e NMF nas variantes base, com
protótipos (dgre) e com mercado explícito (ma)
"""
import json
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import structlog

from dgre.config import HeadSettings
from dgre.core.exceptions import (
    CheckpointError,
    MissingArtifactError,
    MissingPretrainedError,
    ShapeMismatchError,
    TrainingError,
    UnknownEntityError,
)
from dgre.core.numerics import (
    OptimizerState,
    adam_step,
    add_bias,
    bce_loss,
    clamp_probability,
    concat_rows,
    glorot_normal,
    hadamard,
    matmul,
    relu,
    sigmoid,
)
from dgre.models.data import SplitDataset
from dgre.models.graph import EmbeddingTable
from dgre.models.heads import HeadFamily, HeadKind, HeadParameters, HeadVariant, PrototypeContext, TrainedHead
from dgre.models.prototypes import MarketPrototype, SoftAssignment, UserPrototypeSet
from dgre.models.results import CheckpointManifest, TensorEntry

logger = structlog.get_logger(__name__)

CHECKPOINT_MAGIC = "DGRE1"
MAX_REJECTION_ROUNDS = 100


# Forward escalar (um par usuário-item)

def gmf_forward(p, q, b, o, h) -> float:
    """ŷ = σ(hᵀ((p ⊙ b) ⊙ (o ⊙ q)))"""
    interaction = hadamard(hadamard(p, b), hadamard(o, q))
    return float(clamp_probability(sigmoid(np.sum(hadamard(h, interaction)))))


def _mlp_tower(m0: np.ndarray, layers: Sequence[Tuple[np.ndarray, np.ndarray]]) -> np.ndarray:
    a = m0
    for weight, bias in layers:
        a = relu(add_bias(matmul(weight, a), bias))
    return a


def mlp_forward(p, q, b, o, layers: Sequence[Tuple[np.ndarray, np.ndarray]], h, market_one_hot=None) -> float:
    """
    m_0 = [p ⊙ b ‖ o ⊙ q] (mais o one-hot do mercado na variante ma),
    camadas ReLU e ŷ = σ(hᵀ m_L)
    """
    parts = [hadamard(p, b), hadamard(o, q)]
    if market_one_hot is not None:
        parts.append(market_one_hot)
    top = _mlp_tower(concat_rows(*parts), layers)
    h = np.asarray(h, dtype=np.float64)
    if h.shape != top.shape:
        raise ShapeMismatchError(f"mlp_forward: shape mismatch {h.shape} vs {top.shape}")
    return float(clamp_probability(sigmoid(np.dot(h, top))))


def nmf_forward(p_gmf, q_gmf, p_mlp, q_mlp, b, o, layers, h, market_one_hot=None) -> float:
    """ŷ = σ(hᵀ [m_GMF ‖ m_MLP])"""
    m_gmf = hadamard(hadamard(p_gmf, b), hadamard(o, q_gmf))
    parts = [hadamard(p_mlp, b), hadamard(o, q_mlp)]
    if market_one_hot is not None:
        parts.append(market_one_hot)
    m_mlp = _mlp_tower(concat_rows(*parts), layers)
    features = concat_rows(m_gmf, m_mlp)
    h = np.asarray(h, dtype=np.float64)
    if h.shape != features.shape:
        raise ShapeMismatchError(f"nmf_forward: shape mismatch {h.shape} vs {features.shape}")
    return float(clamp_probability(sigmoid(np.dot(h, features))))


# Modelo vetorizado

def _branch_names(kind: HeadKind) -> Dict[str, Tuple[str, str]]:
    if kind.family == HeadFamily.NMF:
        return {"gmf": ("P_gmf", "Q_gmf"), "mlp": ("P_mlp", "Q_mlp")}
    if kind.family == HeadFamily.GMF:
        return {"gmf": ("P", "Q")}
    return {"mlp": ("P", "Q")}


def _fit_rows(vectors: np.ndarray, dim: int) -> np.ndarray:
    """Trunca (ou completa com uns) para d colunas e normaliza cada linha para RMS 1"""
    vectors = np.asarray(vectors, dtype=np.float64)
    if vectors.shape[1] >= dim:
        fitted = vectors[:, :dim].copy()
    else:
        fitted = np.hstack([vectors, np.ones((vectors.shape[0], dim - vectors.shape[1]))])
    rms = np.sqrt(np.mean(fitted * fitted, axis=1, keepdims=True))
    return np.divide(fitted, rms, out=fitted.copy(), where=rms > 0)


def build_prototype_context(
    users: Sequence[int],
    markets: Sequence[str],
    dim: int,
    user_prototypes: Optional[UserPrototypeSet] = None,
    assignment: Optional[SoftAssignment] = None,
    market_prototypes: Optional[Mapping[str, MarketPrototype]] = None,
    soft_mixture: bool = False,
    use_shared: bool = True,
    use_market: bool = True,
) -> PrototypeContext:
    """
    Monta b_K(u) por usuário e o_l por mercado na dimensão do head

    b_K(u) é o protótipo de argmax da linha de W (ou Σ_k W(u,k)·b_k com
    `soft_mixture`). Usuários sem atribuição e mercados sem protótipo recebem
    o vetor de uns.
    """
    user_matrix = np.ones((len(users), dim))
    if user_prototypes is not None and assignment is not None:
        B = _fit_rows(user_prototypes.prototypes, dim)
        rows = {node: row for row, node in enumerate(assignment.node_ids)}
        for position, user in enumerate(users):
            row = rows.get(user)
            if row is None:
                continue
            weights = assignment.W[row]
            user_matrix[position] = weights @ B if soft_mixture else B[int(np.argmax(weights))]

    market_matrix = np.ones((len(markets), dim))
    for position, market in enumerate(markets):
        prototype = (market_prototypes or {}).get(market)
        if prototype is not None:
            market_matrix[position] = _fit_rows(prototype.vector[None, :], dim)[0]

    return PrototypeContext(
        users=tuple(users),
        markets=tuple(markets),
        user_prototypes=user_matrix,
        market_prototypes=market_matrix,
        use_shared=use_shared,
        use_market=use_market,
    )


class HeadModel:
    """
    Forward e backward vetorizados de um head

    Os tensores treináveis ficam fora do objeto (dicionário nome -> array)
    para que o otimizador e a verificação de gradientes possam trocá-los.
    """

    def __init__(self, params: HeadParameters, ctx: Optional[PrototypeContext] = None):
        self.params = params
        self.kind = params.kind
        self.dim = params.dim
        self.n_markets = len(params.markets)
        self.user_markets = np.asarray(params.user_markets, dtype=np.int64)

        self.user_context = np.ones((len(params.users), params.dim))
        self.market_context = np.ones((self.n_markets, params.dim))
        if self.kind.uses_prototypes and ctx is not None:
            if ctx.dim != params.dim:
                raise ShapeMismatchError(f"prototype context dim {ctx.dim} vs head dim {params.dim}")
            user_rows = {user: row for row, user in enumerate(ctx.users)}
            user_matrix = ctx.user_matrix()
            for position, user in enumerate(params.users):
                if user in user_rows:
                    self.user_context[position] = user_matrix[user_rows[user]]
            market_rows = {market: row for row, market in enumerate(ctx.markets)}
            market_matrix = ctx.market_matrix()
            for position, market in enumerate(params.markets):
                if market in market_rows:
                    self.market_context[position] = market_matrix[market_rows[market]]

    def _one_hot(self, market_rows: np.ndarray) -> np.ndarray:
        return np.eye(self.n_markets)[market_rows]

    def _forward(self, tensors: Mapping[str, np.ndarray], user_rows: np.ndarray, item_rows: np.ndarray):
        names = _branch_names(self.kind)
        market_rows = self.user_markets[user_rows]
        b = self.user_context[user_rows]
        o = self.market_context[market_rows]
        cache = {"b": b, "o": o, "market_rows": market_rows}
        features = []

        if "gmf" in names:
            P, Q = names["gmf"]
            p, q = tensors[P][user_rows], tensors[Q][item_rows]
            o_gmf = tensors["market_table"][market_rows] if self.kind.market_aware else o
            cache["gmf"] = (p, q, o_gmf)
            features.append(p * b * o_gmf * q)

        if "mlp" in names:
            P, Q = names["mlp"]
            p, q = tensors[P][user_rows], tensors[Q][item_rows]
            parts = [p * b, o * q]
            if self.kind.market_aware:
                parts.append(self._one_hot(market_rows))
            activations = [np.hstack(parts)]
            pre_activations = []
            for k in range(1, self.params.n_mlp_layers + 1):
                z = add_bias(activations[-1] @ tensors[f"W{k}"].T, tensors[f"b{k}"])
                pre_activations.append(z)
                activations.append(relu(z))
            cache["mlp"] = (p, q, activations, pre_activations)
            features.append(activations[-1])

        x = np.hstack(features)
        cache["x"] = x
        return x @ tensors["h"], cache

    def logits(self, tensors: Mapping[str, np.ndarray], user_rows, item_rows) -> np.ndarray:
        scores, _ = self._forward(tensors, np.asarray(user_rows), np.asarray(item_rows))
        return scores

    def loss_and_grads(
        self,
        tensors: Mapping[str, np.ndarray],
        user_rows: np.ndarray,
        item_rows: np.ndarray,
        labels: np.ndarray,
    ) -> Tuple[float, Dict[str, np.ndarray]]:
        """
        BCE média e gradientes analíticos (dL/dlogit = (σ − y) / N)
        """
        user_rows = np.asarray(user_rows, dtype=np.int64)
        item_rows = np.asarray(item_rows, dtype=np.int64)
        labels = np.asarray(labels, dtype=np.float64)
        scores, cache = self._forward(tensors, user_rows, item_rows)
        probs = sigmoid(scores)
        loss = bce_loss(probs, labels)

        grads = {name: np.zeros_like(value) for name, value in tensors.items()}
        d_logit = (probs - labels) / len(labels)
        grads["h"] = cache["x"].T @ d_logit
        d_x = np.outer(d_logit, tensors["h"])
        b, market_rows = cache["b"], cache["market_rows"]
        names = _branch_names(self.kind)
        offset = 0

        if "gmf" in names:
            P, Q = names["gmf"]
            p, q, o_gmf = cache["gmf"]
            d_g = d_x[:, :self.dim]
            offset = self.dim
            np.add.at(grads[P], user_rows, d_g * b * o_gmf * q)
            np.add.at(grads[Q], item_rows, d_g * p * b * o_gmf)
            if self.kind.market_aware:
                np.add.at(grads["market_table"], market_rows, d_g * p * b * q)

        if "mlp" in names:
            P, Q = names["mlp"]
            p, q, activations, pre_activations = cache["mlp"]
            d_a = d_x[:, offset:]
            for k in range(self.params.n_mlp_layers, 0, -1):
                d_z = d_a * (pre_activations[k - 1] > 0)
                grads[f"W{k}"] = d_z.T @ activations[k - 1]
                grads[f"b{k}"] = d_z.sum(axis=0)
                d_a = d_z @ tensors[f"W{k}"]
            np.add.at(grads[P], user_rows, d_a[:, :self.dim] * b)
            np.add.at(grads[Q], item_rows, d_a[:, self.dim:2 * self.dim] * cache["o"])

        return loss, grads

    def predict_rows(self, user_rows, item_rows) -> np.ndarray:
        return clamp_probability(sigmoid(self.logits(self.params.tensors, user_rows, item_rows)))


# Inicialização

def _project_table(X: np.ndarray, dim: int, std: float, rng: np.random.Generator) -> np.ndarray:
    """Trunca/completa para d colunas e reescala para desvio padrão `std`"""
    if X.shape[1] >= dim:
        projected = X[:, :dim].copy()
    else:
        projected = np.hstack([X, rng.normal(0.0, std, size=(X.shape[0], dim - X.shape[1]))])
    spread = projected.std()
    if spread > 0:
        projected = projected * (std / spread)
    return projected


def _graph_initialized_tables(
    users: Tuple[int, ...],
    items: Tuple[int, ...],
    dim: int,
    std: float,
    rng: np.random.Generator,
    user_table: EmbeddingTable,
    item_tables: Mapping[str, EmbeddingTable],
) -> Tuple[np.ndarray, np.ndarray]:
    P = rng.normal(0.0, std, size=(len(users), dim))
    known = [row for row, user in enumerate(users) if user in user_table.index]
    if known:
        vectors = user_table.aligned_to(tuple(users[row] for row in known))
        P[known] = _project_table(vectors, dim, std, rng)

    Q = rng.normal(0.0, std, size=(len(items), dim))
    if item_tables:
        width = next(iter(item_tables.values())).dim
        sums = np.zeros((len(items), width))
        counts = np.zeros(len(items))
        item_rows = {item: row for row, item in enumerate(items)}
        for table in item_tables.values():
            for node, vector in zip(table.node_ids, table.vectors):
                row = item_rows.get(node)
                if row is not None:
                    sums[row] += vector
                    counts[row] += 1
        covered = np.flatnonzero(counts > 0)
        if len(covered):
            Q[covered] = _project_table(sums[covered] / counts[covered, None], dim, std, rng)
    return P, Q


def init_head_parameters(
    kind: HeadKind,
    dim: int,
    mlp_layers: Sequence[int],
    users: Sequence[int],
    items: Sequence[int],
    markets: Sequence[str],
    user_markets: Sequence[int],
    rng: np.random.Generator,
    init_std: float = 0.1,
    graph_init: Optional[Tuple[EmbeddingTable, Mapping[str, EmbeddingTable]]] = None,
    pretrained: Optional[Mapping[str, HeadParameters]] = None,
) -> HeadParameters:
    """
    Cria os tensores de um head

    Embeddings seguem N(0, init_std); nos heads dgre com `graph_init`, P e Q
    partem dos embeddings de grafo (truncados e reescalados; itens pela média
    entre mercados). O NMF copia os ramos pré-treinados quando disponíveis,
    com h = [0.5·h_gmf ‖ 0.5·h_mlp].

    Raises:
        MissingPretrainedError: NMF dgre sem ramos GMF e MLP pré-treinados
    """
    users, items, markets = tuple(users), tuple(items), tuple(markets)
    widths = list(mlp_layers)
    if kind.has_mlp_branch and (len(widths) < 2 or widths[0] != 2 * dim):
        raise ShapeMismatchError(f"MLP widths {widths} must start at 2 * dim = {2 * dim}")

    params = HeadParameters(
        kind=kind,
        dim=dim,
        mlp_layers=widths if kind.has_mlp_branch else [],
        users=users,
        items=items,
        markets=markets,
        user_markets=np.asarray(user_markets, dtype=np.int64),
    )

    if kind.family == HeadFamily.NMF:
        if pretrained is None or "gmf" not in pretrained or "mlp" not in pretrained:
            if kind.uses_prototypes:
                raise MissingPretrainedError("DGRE-NMF needs pretrained DGRE-GMF and DGRE-MLP parameters")
        else:
            gmf, mlp = pretrained["gmf"].tensors, pretrained["mlp"].tensors
            tensors = {
                "P_gmf": gmf["P"].copy(),
                "Q_gmf": gmf["Q"].copy(),
                "P_mlp": mlp["P"].copy(),
                "Q_mlp": mlp["Q"].copy(),
                "h": np.concatenate([0.5 * gmf["h"], 0.5 * mlp["h"]]),
            }
            for k in range(1, len(widths)):
                tensors[f"W{k}"] = mlp[f"W{k}"].copy()
                tensors[f"b{k}"] = mlp[f"b{k}"].copy()
            if kind.market_aware:
                tensors["market_table"] = gmf["market_table"].copy()
            params.tensors = tensors
            return params

    tensors: Dict[str, np.ndarray] = {}
    for branch, (P, Q) in _branch_names(kind).items():
        if kind.uses_prototypes and graph_init is not None:
            tensors[P], tensors[Q] = _graph_initialized_tables(users, items, dim, init_std, rng, *graph_init)
        else:
            tensors[P] = rng.normal(0.0, init_std, size=(len(users), dim))
            tensors[Q] = rng.normal(0.0, init_std, size=(len(items), dim))

    top_width = 0
    if kind.has_gmf_branch:
        top_width += dim
        if kind.market_aware:
            tensors["market_table"] = np.ones((len(markets), dim))
    if kind.has_mlp_branch:
        extra = len(markets) if kind.market_aware else 0
        for k in range(1, len(widths)):
            fan_in = widths[k - 1] + (extra if k == 1 else 0)
            tensors[f"W{k}"] = glorot_normal(rng, widths[k], fan_in)
            tensors[f"b{k}"] = np.zeros(widths[k])
        top_width += widths[-1]
    tensors["h"] = glorot_normal(rng, 1, top_width)[0]
    params.tensors = tensors
    return params


# Treino

def _positive_pairs(params: HeadParameters, split: SplitDataset) -> Tuple[np.ndarray, np.ndarray]:
    frame = split.train.interactions
    user_rows = params.user_rows(frame["user"].to_numpy())
    item_rows = params.item_rows(frame["item"].to_numpy())
    return user_rows, item_rows


def sample_training_negatives(
    user_rows: np.ndarray,
    n_items: int,
    observed_keys: np.ndarray,
    neg_per_pos: int,
    rng: np.random.Generator,
) -> Tuple[np.ndarray, np.ndarray]:
    """
    `neg_per_pos` itens uniformes por positivo, rejeitando pares observados

    Pares que continuam observados após o limite de rodadas são descartados.
    """
    users = np.repeat(user_rows, neg_per_pos)
    items = rng.integers(0, n_items, size=len(users))
    pending = np.isin(users * n_items + items, observed_keys)
    rounds = 0
    while pending.any() and rounds < MAX_REJECTION_ROUNDS:
        items[pending] = rng.integers(0, n_items, size=int(pending.sum()))
        pending = np.isin(users * n_items + items, observed_keys)
        rounds += 1
    keep = ~pending
    return users[keep], items[keep]


def train_head(
    kind: HeadKind,
    split: SplitDataset,
    ctx: Optional[PrototypeContext],
    hyper: HeadSettings,
    seed: int,
    graph_init: Optional[Tuple[EmbeddingTable, Mapping[str, EmbeddingTable]]] = None,
    pretrained: Optional[Mapping[str, HeadParameters]] = None,
) -> TrainedHead:
    """
    Treina um head com BCE pontual, negativos amostrados e Adam

    Args:
        kind: Família e variante
        split: Split leave-one-out (só o treino é usado)
        ctx: Protótipos (ignorados fora da variante dgre)
        hyper: Hiperparâmetros do head
        seed: Semente (inicialização, negativos e embaralhamento)
        graph_init: (embeddings de usuários, embeddings de itens por mercado)
        pretrained: Ramos "gmf" e "mlp" para o NMF

    Raises:
        TrainingError: Treino vazio
    """
    train = split.train
    if len(train) == 0:
        raise TrainingError("Cannot train a head on an empty training set")

    rng = np.random.default_rng(seed)
    users = train.all_users
    markets = train.markets
    market_index = {market: row for row, market in enumerate(markets)}
    user_markets = [market_index[train.user_market[user]] for user in users]
    params = init_head_parameters(
        kind,
        hyper.dim,
        hyper.layer_widths,
        users,
        train.items,
        markets,
        user_markets,
        rng,
        hyper.init_std,
        graph_init=graph_init,
        pretrained=pretrained,
    )
    model = HeadModel(params, ctx)

    pos_users, pos_items = _positive_pairs(params, split)
    n_items = len(params.items)
    observed = np.unique(pos_users * n_items + pos_items)
    tensors = dict(params.tensors)
    state = OptimizerState(lr=hyper.lr)
    trace: List[float] = []

    for epoch in range(hyper.epochs):
        neg_users, neg_items = sample_training_negatives(pos_users, n_items, observed, hyper.neg_per_pos, rng)
        all_users = np.concatenate([pos_users, neg_users])
        all_items = np.concatenate([pos_items, neg_items])
        labels = np.concatenate([np.ones(len(pos_users)), np.zeros(len(neg_users))])
        order = rng.permutation(len(labels))

        total = 0.0
        for start in range(0, len(order), hyper.batch_size):
            batch = order[start:start + hyper.batch_size]
            loss, grads = model.loss_and_grads(tensors, all_users[batch], all_items[batch], labels[batch])
            tensors, state = adam_step(tensors, grads, state)
            total += loss * len(batch)
        trace.append(total / len(order))
        logger.debug("Head epoch", kind=kind.tag, epoch=epoch + 1, loss=trace[-1])

    params.tensors = tensors
    logger.info(
        "Head trained",
        kind=kind.tag,
        users=len(users),
        items=n_items,
        positives=len(pos_users),
        epochs=hyper.epochs,
        final_loss=trace[-1] if trace else None,
    )
    return TrainedHead(params=params, loss_trace=trace)


def train_with_pretraining(
    kind: HeadKind,
    split: SplitDataset,
    ctx: Optional[PrototypeContext],
    hyper: HeadSettings,
    seed: int,
    graph_init=None,
) -> Tuple[TrainedHead, Dict[str, TrainedHead]]:
    """
    Treina o head pedido; para NMF, pré-treina antes os ramos GMF e MLP da mesma variante

    Returns:
        (head final, ramos pré-treinados por família)
    """
    branches: Dict[str, TrainedHead] = {}
    if kind.family == HeadFamily.NMF:
        for offset, family in enumerate((HeadFamily.GMF, HeadFamily.MLP), start=1):
            branch_kind = HeadKind(family=family, variant=kind.variant)
            branches[family.value] = train_head(branch_kind, split, ctx, hyper, seed + offset, graph_init)
    head = train_head(
        kind,
        split,
        ctx,
        hyper,
        seed,
        graph_init,
        pretrained={name: branch.params for name, branch in branches.items()} or None,
    )
    return head, branches


# Predição

def predict(kind: HeadKind, params: HeadParameters, ctx: Optional[PrototypeContext], user: int, item: int) -> float:
    """
    ŷ de um par (usuário, item)

    Raises:
        UnknownEntityError: Usuário ou item desconhecido
    """
    if kind != params.kind:
        raise ShapeMismatchError(f"predict: head kind {kind.tag} vs parameters {params.kind.tag}")
    return float(predict_batch(HeadModel(params, ctx), user, [item])[0])


def predict_batch(model: HeadModel, user: int, items: Sequence[int]) -> np.ndarray:
    """ŷ de um usuário contra vários itens"""
    try:
        user_rows = model.params.user_rows(np.full(len(items), user))
        item_rows = model.params.item_rows(items)
    except KeyError as e:
        raise UnknownEntityError(f"Unknown user or item id {e.args[0]}")
    return model.predict_rows(user_rows, item_rows)


class HeadScorer:
    """Callable (usuário, itens) -> escores usado na avaliação"""

    def __init__(self, params: HeadParameters, ctx: Optional[PrototypeContext] = None):
        self.model = HeadModel(params, ctx)

    def __call__(self, user: int, items: Sequence[int]) -> np.ndarray:
        return predict_batch(self.model, user, items)


# Checkpoint

def save_checkpoint(head: TrainedHead, directory: Path, notes: Optional[str] = None) -> List[str]:
    """Grava `checkpoint.json` (manifesto) e `tensors.npz`"""
    directory.mkdir(parents=True, exist_ok=True)
    params = head.params
    names = sorted(params.tensors)
    manifest = CheckpointManifest(
        magic=CHECKPOINT_MAGIC,
        kind=params.kind.tag,
        dim=params.dim,
        mlp_layers=list(params.mlp_layers),
        tensors=[TensorEntry(name=name, shape=list(params.tensors[name].shape)) for name in names],
        users=list(params.users),
        items=list(params.items),
        markets=list(params.markets),
        user_markets=[int(value) for value in params.user_markets],
        loss_trace=list(head.loss_trace),
        notes=notes,
    )
    (directory / "checkpoint.json").write_text(manifest.model_dump_json(indent=2), encoding="utf-8")
    with open(directory / "tensors.npz", "wb") as fh:
        np.savez(fh, **{name: params.tensors[name] for name in names})
    return ["checkpoint.json", "tensors.npz"]


def load_checkpoint(directory: Path) -> TrainedHead:
    """
    Lê um checkpoint gravado por `save_checkpoint`

    Raises:
        MissingArtifactError: Arquivos ausentes
        CheckpointError: Magic, tipo ou formatos inválidos
    """
    manifest_path = directory / "checkpoint.json"
    tensors_path = directory / "tensors.npz"
    for path in (manifest_path, tensors_path):
        if not path.exists():
            raise MissingArtifactError(f"Checkpoint artifact not found: {path}", path=str(path))

    try:
        manifest = CheckpointManifest(**json.loads(manifest_path.read_text(encoding="utf-8")))
    except (ValueError, TypeError) as e:
        raise CheckpointError(f"Invalid checkpoint manifest {manifest_path}", details=str(e))
    if manifest.magic != CHECKPOINT_MAGIC:
        raise CheckpointError(f"Unknown checkpoint magic '{manifest.magic}'")
    try:
        kind = HeadKind.parse(manifest.kind)
    except ValueError as e:
        raise CheckpointError(f"Unknown head kind '{manifest.kind}'", details=str(e))

    with np.load(tensors_path) as archive:
        tensors = {entry.name: archive[entry.name] for entry in manifest.tensors if entry.name in archive}
    for entry in manifest.tensors:
        if entry.name not in tensors or list(tensors[entry.name].shape) != entry.shape:
            raise CheckpointError(f"Tensor '{entry.name}' is missing or has the wrong shape")

    params = HeadParameters(
        kind=kind,
        dim=manifest.dim,
        mlp_layers=manifest.mlp_layers,
        users=tuple(manifest.users),
        items=tuple(manifest.items),
        markets=tuple(manifest.markets),
        user_markets=np.asarray(manifest.user_markets, dtype=np.int64),
        tensors=tensors,
    )
    return TrainedHead(params=params, loss_trace=manifest.loss_trace)
