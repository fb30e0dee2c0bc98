"""Independent reference implementations the tests compare against.

Everything here is written naively from the behavioral contracts: plain
loops over label triples, no shared code with the package internals.  Slow
is fine; obviously-correct is the point.
"""

from itertools import combinations

import numpy as np

Token = tuple[str, int]  # ("entity"|"relation", id)


def bfs_serialize(
    topics: list[int],
    triples: list[tuple[int, int, int]],
) -> tuple[list[Token], set[tuple[int, int]], list[int], bool]:
    """Wave-at-a-time BFS over triples, scanning the full triple list per wave.

    Returns (tokens, adjacency pairs (i<j), topic positions, unreachable flag).
    """
    tokens: list[Token] = []

    def emit(tok: Token) -> None:
        if tok not in tokens:
            tokens.append(tok)

    seen_topics: list[int] = []
    for t in topics:
        if t not in seen_topics:
            seen_topics.append(t)
            emit(("entity", t))

    visited = [False] * len(triples)
    frontier = set(seen_topics)
    reached = set(frontier)
    while frontier:
        wave = [
            i
            for i, (h, _r, t) in enumerate(triples)
            if not visited[i] and (h in frontier or t in frontier)
        ]
        if not wave:
            break
        newly: set[int] = set()
        for i in wave:
            visited[i] = True
            h, r, t = triples[i]
            emit(("entity", h))
            emit(("relation", r))
            emit(("entity", t))
            for e in (h, t):
                if e not in reached:
                    reached.add(e)
                    newly.add(e)
        frontier = newly

    unreachable = not all(visited)
    for i, flag in enumerate(visited):
        if not flag:
            h, r, t = triples[i]
            emit(("entity", h))
            emit(("relation", r))
            emit(("entity", t))

    position = {tok: i for i, tok in enumerate(tokens)}
    adjacency: set[tuple[int, int]] = set()
    for h, r, t in triples:
        trio = {position[("entity", h)], position[("relation", r)], position[("entity", t)]}
        for a, b in combinations(sorted(trio), 2):
            adjacency.add((a, b))
    topic_positions = [position[("entity", t)] for t in seen_topics]
    return tokens, adjacency, topic_positions, unreachable


def entity_distances(
    topics: list[int], triples: list[tuple[int, int, int]]
) -> dict[int, int]:
    """Hop distance from the topic set, both triple directions, by relaxation."""
    dist = {t: 0 for t in topics}
    changed = True
    while changed:
        changed = False
        for h, _r, t in triples:
            for a, b in ((h, t), (t, h)):
                if a in dist and dist[a] + 1 < dist.get(b, 10**9):
                    dist[b] = dist[a] + 1
                    changed = True
    return dist


def connected(triples: list[tuple[int, int, int]]) -> bool:
    """Whether the triple set forms one connected component over its entities."""
    if not triples:
        return True
    ents = {e for h, _r, t in triples for e in (h, t)}
    start = next(iter(ents))
    return set(entity_distances([start], triples)) == ents


def all_connected_subgraphs(n_entities: int, n_relations: int, max_triples: int):
    """Every connected triple subset (as a tuple, in universe order) with
    1..max_triples triples over the full directed triple universe, self-loops
    included."""
    universe = [
        (h, r, t)
        for h in range(n_entities)
        for r in range(n_relations)
        for t in range(n_entities)
    ]
    for size in range(1, max_triples + 1):
        for combo in combinations(range(len(universe)), size):
            chosen = [universe[i] for i in combo]
            if connected(chosen):
                yield chosen


def reference_masked_attention(
    x: np.ndarray,
    mask: np.ndarray,
    wq: np.ndarray,
    bq: np.ndarray,
    wk: np.ndarray,
    bk: np.ndarray,
    wv: np.ndarray,
    bv: np.ndarray,
    wo: np.ndarray,
    bo: np.ndarray,
    heads: int,
) -> np.ndarray:
    """Scalar-loop multi-head masked attention straight from the definition."""
    l, d = x.shape
    dh = d // heads
    q = x @ wq + bq
    k = x @ wk + bk
    v = x @ wv + bv
    ctx = np.zeros((l, d))
    for head in range(heads):
        sl = slice(head * dh, (head + 1) * dh)
        for i in range(l):
            scores = np.empty(l)
            for j in range(l):
                scores[j] = float(np.dot(q[i, sl], k[j, sl])) / np.sqrt(dh) + mask[i, j]
            scores -= scores.max()
            weights = np.exp(scores)
            weights /= weights.sum()
            for j in range(l):
                ctx[i, sl] += weights[j] * v[j, sl]
    return ctx @ wo + bo


def shortest_path_relations(
    topics: list[int],
    answer: int,
    triples: list[tuple[int, int, int]],
) -> list[set[int]]:
    """Relations usable at each step of some shortest topic-to-answer path,
    found by enumerating all simple paths of the shortest length."""
    dist = entity_distances(topics, triples)
    if answer not in dist or dist[answer] == 0:
        return []
    length = dist[answer]

    per_hop: list[set[int]] = [set() for _ in range(length)]

    def walk(entity: int, depth: int, used: list[int]) -> None:
        if depth == length:
            if entity == answer:
                for hop, rel in enumerate(used):
                    per_hop[hop].add(rel)
            return
        for h, r, t in triples:
            for a, b in ((h, t), (t, h)):
                if a == entity:
                    walk(b, depth + 1, used + [r])

    for topic in topics:
        walk(topic, 0, [])
    return per_hop


def reference_f1(predicted: set[int], gold: set[int]) -> tuple[float, float, float]:
    tp = len(predicted & gold)
    precision = tp / len(predicted) if predicted else 0.0
    recall = tp / len(gold) if gold else 0.0
    if precision + recall == 0:
        return precision, recall, 0.0
    return precision, recall, 2 * precision * recall / (precision + recall)
