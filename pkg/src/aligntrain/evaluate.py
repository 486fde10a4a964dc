"""Bidirectional retrieval metrics and embedding export.

Recall@K counts the queries whose true partner ranks within the top K of the
full candidate pool; ranks are deterministic, with score ties broken by lower
candidate index.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .linalg import Matrix, as_matrix, pca_project_2d

DIRECTIONS = ("i2t", "t2i")


@dataclass
class RetrievalReport:
    """Recall percentages keyed by (direction, K), plus run metadata."""

    r_at: dict[tuple[str, int], float]
    query_count: int
    strategy: str = ""
    seed: int = -1
    scenario: str = ""

    @property
    def ks(self) -> tuple[int, ...]:
        return tuple(sorted({k for _, k in self.r_at}))

    def get(self, direction: str, k: int) -> float:
        return self.r_at[(direction, k)]


def _ranks(s: Matrix) -> tuple[np.ndarray, np.ndarray]:
    """1-based rank of the diagonal entry within its row (i2t) and column (t2i).

    rank = 1 + #{strictly greater} + #{equal with lower index}.
    """
    diag = np.diag(s)
    greater_rows = (s > diag[:, None]).sum(axis=1)
    eq_rows = s == diag[:, None]
    ties_rows = np.tril(eq_rows, k=-1).sum(axis=1)  # columns j < i
    rank_i2t = 1 + greater_rows + ties_rows

    greater_cols = (s > diag[None, :]).sum(axis=0)
    eq_cols = s == diag[None, :]
    ties_cols = np.triu(eq_cols, k=1).sum(axis=0)  # rows j < i for column i
    rank_t2i = 1 + greater_cols + ties_cols
    return rank_i2t, rank_t2i


def recall_at_k(
    emb_img: Matrix,
    emb_txt: Matrix,
    ks: tuple[int, ...] = (1, 5, 10),
    strategy: str = "",
    seed: int = -1,
    scenario: str = "",
) -> RetrievalReport:
    """Recall@K for both retrieval directions over the full pool."""
    emb_img = as_matrix(emb_img)
    emb_txt = as_matrix(emb_txt)
    if emb_img.shape != emb_txt.shape:
        raise ValueError(f"embedding shapes differ: {emb_img.shape} vs {emb_txt.shape}")
    q = emb_img.shape[0]
    if q == 0:
        raise ValueError("no queries to evaluate")
    for k in ks:
        if k < 1 or k > q:
            raise ValueError(f"K={k} out of range for a pool of {q}")
    s = emb_img @ emb_txt.T
    rank_i2t, rank_t2i = _ranks(s)
    r_at = {}
    for k in ks:
        r_at[("i2t", k)] = 100.0 * float((rank_i2t <= k).mean())
        r_at[("t2i", k)] = 100.0 * float((rank_t2i <= k).mean())
    return RetrievalReport(r_at, q, strategy, seed, scenario)


def relative_drop(clean: RetrievalReport, noisy: RetrievalReport, direction: str, k: int) -> float:
    """Percentage drop of the noisy value relative to the clean one."""
    c = clean.get(direction, k)
    n = noisy.get(direction, k)
    if c == 0:
        raise ValueError(f"clean {direction} R@{k} is zero; relative drop undefined")
    return 100.0 * (c - n) / c


def export_embeddings(
    emb_img: Matrix,
    emb_txt: Matrix,
    ids: list[str],
    path: str | Path,
) -> tuple[Path, Path]:
    """Write the full embedding CSV plus a companion 2-D principal-component
    projection of the concatenated image and text rows.

    Returns (full_path, path_2d); the 2-D file sits next to the full one with
    a ``_2d`` suffix.
    """
    emb_img = as_matrix(emb_img)
    emb_txt = as_matrix(emb_txt)
    if emb_img.shape != emb_txt.shape or emb_img.shape[0] != len(ids):
        raise ValueError("embeddings and ids must agree on the number of pairs")
    path = Path(path)
    d = emb_img.shape[1]
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["id", "modality"] + [f"e{j}" for j in range(d)])
        for block, modality in ((emb_img, "image"), (emb_txt, "text")):
            for i, row in enumerate(block):
                writer.writerow([ids[i], modality] + [format(v, ".17g") for v in row])

    coords, _ = pca_project_2d(np.vstack([emb_img, emb_txt]))
    path_2d = path.with_name(path.stem + "_2d" + path.suffix)
    with open(path_2d, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["id", "modality", "x", "y"])
        q = emb_img.shape[0]
        for i in range(q):
            writer.writerow(
                [ids[i], "image", format(coords[i, 0], ".17g"), format(coords[i, 1], ".17g")]
            )
        for i in range(q):
            writer.writerow(
                [ids[i], "text", format(coords[q + i, 0], ".17g"), format(coords[q + i, 1], ".17g")]
            )
    return path, path_2d


METRICS_FIELDS = ["run", "strategy", "seed", "scenario", "direction", "k", "recall"]


def write_metrics_csv(path: str | Path, reports: list[RetrievalReport]) -> None:
    """One row per (run, scenario, direction, K)."""
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(METRICS_FIELDS)
        for rep in reports:
            run = f"{rep.strategy}-seed{rep.seed}-{rep.scenario}"
            for direction in DIRECTIONS:
                for k in rep.ks:
                    writer.writerow(
                        [run, rep.strategy, rep.seed, rep.scenario, direction, k,
                         repr(rep.get(direction, k))]
                    )
