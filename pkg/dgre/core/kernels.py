"""
Kernels compilados com numba
"""
import numpy as np
from numba import njit


@njit(cache=True)
def louvain_local_moving(indptr, indices, weights, degrees, total_weight, community, max_sweeps):
    """
    Fase de movimentação local do Louvain sobre uma matriz CSR simétrica

    Cada nó, na ordem dos índices, é retirado da sua comunidade e colocado na
    comunidade vizinha de maior ganho de modularidade. Só há movimento quando
    o ganho supera estritamente o de permanecer. Repete até nenhum nó mudar.

    Args:
        indptr, indices, weights: Matriz de adjacência (pode conter laços)
        degrees: Soma das linhas (grau ponderado)
        total_weight: Soma de todos os pesos (2m)
        community: Comunidade inicial de cada nó (alterada in place)
        max_sweeps: Limite de varreduras

    Returns:
        Número total de movimentos realizados
    """
    n = indptr.shape[0] - 1
    tot = np.zeros(n)
    for i in range(n):
        tot[community[i]] += degrees[i]

    neigh_weight = np.zeros(n)
    neigh_comms = np.empty(n, dtype=np.int64)
    total_moves = 0

    for _ in range(max_sweeps):
        moves = 0
        for i in range(n):
            ki = degrees[i]
            if ki == 0.0:
                continue
            ci = community[i]
            n_found = 0
            for p in range(indptr[i], indptr[i + 1]):
                j = indices[p]
                if j == i:
                    continue
                cj = community[j]
                if neigh_weight[cj] == 0.0:
                    neigh_comms[n_found] = cj
                    n_found += 1
                neigh_weight[cj] += weights[p]

            tot[ci] -= ki
            best = ci
            best_gain = neigh_weight[ci] - tot[ci] * ki / total_weight
            for t in range(n_found):
                c = neigh_comms[t]
                gain = neigh_weight[c] - tot[c] * ki / total_weight
                if gain > best_gain + 1e-12:
                    best_gain = gain
                    best = c

            tot[best] += ki
            if best != ci:
                community[i] = best
                moves += 1

            for t in range(n_found):
                neigh_weight[neigh_comms[t]] = 0.0

        total_moves += moves
        if moves == 0:
            break

    return total_moves
