"""
Álgebra linear densa, ativações, perdas, otimizadores e verificação de gradientes

Tudo em float64. As funções são puras: nenhuma altera os argumentos recebidos.
"""
from dataclasses import dataclass, field
from typing import Callable, Dict, Tuple

import numpy as np

from dgre.core.exceptions import ShapeMismatchError

Tensor2 = np.ndarray

# Limites usados sempre que uma probabilidade alimenta um log
PROB_FLOOR = 1e-12
PROB_CEIL = 1.0 - 1e-12


def _require_same_shape(a: np.ndarray, b: np.ndarray, op: str) -> None:
    if a.shape != b.shape:
        raise ShapeMismatchError(
            f"{op}: shape mismatch {a.shape} vs {b.shape}"
        )


def matmul(a, b) -> Tensor2:
    """Produto matricial com verificação de dimensões internas"""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    inner_a = a.shape[-1]
    inner_b = b.shape[0]
    if inner_a != inner_b:
        raise ShapeMismatchError(f"matmul: shape mismatch {a.shape} vs {b.shape}")
    return a @ b


def hadamard(a, b) -> Tensor2:
    """Produto elemento a elemento (⊙)"""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    _require_same_shape(a, b, "hadamard")
    return a * b


def concat_rows(*blocks) -> Tensor2:
    """Empilha blocos verticalmente; vetores 1-D viram um vetor concatenado"""
    arrays = [np.asarray(block, dtype=np.float64) for block in blocks]
    if not arrays:
        return np.zeros(0)
    if all(array.ndim == 1 for array in arrays):
        return np.concatenate(arrays)
    widths = {array.shape[1:] for array in arrays}
    if len(widths) != 1:
        shapes = [array.shape for array in arrays]
        raise ShapeMismatchError(f"concat_rows: shape mismatch {shapes[0]} vs {shapes[-1]}")
    return np.concatenate(arrays, axis=0)


def add_bias(x, bias) -> Tensor2:
    """Soma o vetor de bias a cada linha de x"""
    x = np.asarray(x, dtype=np.float64)
    bias = np.asarray(bias, dtype=np.float64)
    if x.shape[-1] != bias.shape[-1] or bias.ndim != 1:
        raise ShapeMismatchError(f"add_bias: shape mismatch {x.shape} vs {bias.shape}")
    return x + bias


def sigmoid(x) -> Tensor2:
    """Logística numericamente estável"""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    positive = x >= 0
    out[positive] = 1.0 / (1.0 + np.exp(-x[positive]))
    exp_x = np.exp(x[~positive])
    out[~positive] = exp_x / (1.0 + exp_x)
    if out.ndim == 0:
        return float(out)
    return out


def clamp_probability(p) -> Tensor2:
    """Restringe probabilidades a [1e-12, 1 - 1e-12]"""
    return np.clip(p, PROB_FLOOR, PROB_CEIL)


def log_sigmoid(x) -> Tensor2:
    """log σ(x) com o clamp usado em todas as perdas"""
    return np.log(clamp_probability(sigmoid(x)))


def relu(x) -> Tensor2:
    x = np.asarray(x, dtype=np.float64)
    return np.maximum(x, 0.0)


def bce_loss(pred, label) -> float:
    """
    Binary cross-entropy média

    Args:
        pred: Probabilidades previstas em (0, 1)
        label: Rótulos 0/1

    Returns:
        Média de -[y log p + (1 - y) log(1 - p)]
    """
    pred = clamp_probability(np.asarray(pred, dtype=np.float64))
    label = np.asarray(label, dtype=np.float64)
    _require_same_shape(pred, label, "bce_loss")
    losses = -(label * np.log(pred) + (1.0 - label) * np.log(1.0 - pred))
    return float(np.mean(losses))


@dataclass
class OptimizerState:
    """Acumuladores de primeiro e segundo momento do Adam"""
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    first_moment: Dict[str, np.ndarray] = field(default_factory=dict)
    second_moment: Dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(
    params: Dict[str, np.ndarray],
    grads: Dict[str, np.ndarray],
    state: OptimizerState,
) -> Tuple[Dict[str, np.ndarray], OptimizerState]:
    """
    Um passo do Adam com correção de viés

    Args:
        params: Parâmetros por nome
        grads: Gradientes com o mesmo formato (nomes ausentes não são atualizados)
        state: Estado atual do otimizador

    Returns:
        (novos parâmetros, novo estado)
    """
    step = state.step + 1
    new_params = dict(params)
    first = dict(state.first_moment)
    second = dict(state.second_moment)
    correction1 = 1.0 - state.beta1 ** step
    correction2 = 1.0 - state.beta2 ** step

    for name, grad in grads.items():
        if name not in params:
            raise ShapeMismatchError(f"adam_step: gradient for unknown parameter '{name}'")
        value = params[name]
        if value.shape != grad.shape:
            raise ShapeMismatchError(
                f"adam_step: shape mismatch {value.shape} vs {grad.shape} for '{name}'"
            )
        m = first.get(name, np.zeros_like(value))
        v = second.get(name, np.zeros_like(value))
        m = state.beta1 * m + (1.0 - state.beta1) * grad
        v = state.beta2 * v + (1.0 - state.beta2) * grad * grad
        m_hat = m / correction1
        v_hat = v / correction2
        new_params[name] = value - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
        first[name] = m
        second[name] = v

    new_state = OptimizerState(
        lr=state.lr,
        beta1=state.beta1,
        beta2=state.beta2,
        eps=state.eps,
        step=step,
        first_moment=first,
        second_moment=second,
    )
    return new_params, new_state


def sgd_step(
    params: Dict[str, np.ndarray],
    grads: Dict[str, np.ndarray],
    lr: float,
) -> Dict[str, np.ndarray]:
    """Descida de gradiente simples (modo só com learning rate)"""
    new_params = dict(params)
    for name, grad in grads.items():
        if params[name].shape != grad.shape:
            raise ShapeMismatchError(
                f"sgd_step: shape mismatch {params[name].shape} vs {grad.shape} for '{name}'"
            )
        new_params[name] = params[name] - lr * grad
    return new_params


def finite_diff_check(
    f: Callable[[Dict[str, np.ndarray]], float],
    params: Dict[str, np.ndarray],
    analytic_grads: Dict[str, np.ndarray],
    h: float = 1e-5,
) -> float:
    """
    Compara gradientes analíticos com diferenças centrais

    Args:
        f: Função escalar dos parâmetros
        params: Ponto de avaliação
        analytic_grads: Gradientes analíticos por nome
        h: Passo da diferença central

    Returns:
        Maior erro relativo |a - n| / max(|a|, |n|, 1e-8) entre todas as coordenadas
    """
    worst = 0.0
    for name, analytic in analytic_grads.items():
        base = np.asarray(params[name], dtype=np.float64)
        if base.shape != analytic.shape:
            raise ShapeMismatchError(
                f"finite_diff_check: shape mismatch {base.shape} vs {analytic.shape} for '{name}'"
            )
        for index in np.ndindex(base.shape):
            plus = base.copy()
            minus = base.copy()
            plus[index] += h
            minus[index] -= h
            f_plus = f({**params, name: plus})
            f_minus = f({**params, name: minus})
            numeric = (f_plus - f_minus) / (2.0 * h)
            a = float(analytic[index])
            denominator = max(abs(a), abs(numeric), 1e-8)
            worst = max(worst, abs(a - numeric) / denominator)
    return worst


def l2_normalize_rows(x: np.ndarray, eps: float = 1e-12) -> np.ndarray:
    """Normaliza cada linha; linhas nulas permanecem nulas"""
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    safe = np.where(norms > eps, norms, 1.0)
    return x / safe


def glorot_normal(rng: np.random.Generator, fan_out: int, fan_in: int) -> np.ndarray:
    """Inicialização Glorot (normal) para uma matriz fan_out x fan_in"""
    std = np.sqrt(2.0 / (fan_in + fan_out))
    return rng.normal(0.0, std, size=(fan_out, fan_in))
