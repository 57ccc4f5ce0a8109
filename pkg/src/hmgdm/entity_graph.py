"""Pixel-space entity graph construction from RGB image patches.

An image is partitioned into superpixel regions; each region becomes a
vertex tile, each pair of touching regions an edge tile cut around their
shared boundary. The output is a deterministic graph bundle that any
re-implementation must reproduce byte for byte, so every floating-point
step below is pinned: float32 element ops round one at a time, reductions
over pixel sets are exact integer sums divided once in float64.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np
from scipy import ndimage
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

BACKGROUND = (255, 255, 255)
BUNDLE_MAGIC = b"HMG1"
BUNDLE_VERSION = 1


@dataclass(frozen=True)
class GraphParams:
    """Construction parameters; defaults follow the reference configuration."""

    n_regions: int = 500
    compactness: float = 10.0
    iterations: int = 10
    tile: int = 64
    dilation_radius: int = 2


@dataclass
class LabelMap:
    labels: np.ndarray  # (h, w) int32, values 0..n_regions-1, each region 4-connected
    n_regions: int


@dataclass
class EntityGraph:
    vertex_tiles: np.ndarray  # (N_V, a, a, 3) uint8
    edge_tiles: np.ndarray  # (N_E, a, a, 3) uint8
    edge_index: np.ndarray  # (N_E, 2) uint32, i < j, lexicographically sorted
    centroids: np.ndarray  # (N_V, 2) float32, (row, col)
    degrees: np.ndarray  # (N_V,) int64

    @property
    def n_vertices(self) -> int:
        return int(self.vertex_tiles.shape[0])

    @property
    def n_edges(self) -> int:
        return int(self.edge_tiles.shape[0])


def _validate_image(image: np.ndarray) -> None:
    if not isinstance(image, np.ndarray) or image.size == 0:
        raise ValueError("invalid input: image must be a non-empty array")
    if image.ndim != 3 or image.shape[2] != 3:
        raise ValueError("invalid input: image must be h x w x 3 RGB")
    if image.dtype != np.uint8:
        raise ValueError("invalid input: image must be uint8")


def _box_blur(image: np.ndarray) -> np.ndarray:
    """3x3 box blur with border-clamped windows.

    Integer window sums divided once in float64, stored as float32; this
    keeps the result independent of summation order.
    """
    h, w, _ = image.shape
    padded = np.zeros((h + 2, w + 2, 3), dtype=np.int32)
    padded[1:-1, 1:-1] = image
    sums = np.zeros((h, w, 3), dtype=np.int32)
    for dr in (0, 1, 2):
        for dc in (0, 1, 2):
            sums += padded[dr : dr + h, dc : dc + w]
    ones = np.zeros((h + 2, w + 2), dtype=np.int32)
    ones[1:-1, 1:-1] = 1
    counts = np.zeros((h, w), dtype=np.int32)
    for dr in (0, 1, 2):
        for dc in (0, 1, 2):
            counts += ones[dr : dr + h, dc : dc + w]
    return (sums.astype(np.float64) / counts[:, :, None]).astype(np.float32)


def _gradient_map(blurred: np.ndarray) -> np.ndarray:
    """Squared L2 norm of forward RGB differences, clamped at the far border."""
    right = np.concatenate([blurred[:, 1:], blurred[:, -1:]], axis=1)
    down = np.concatenate([blurred[1:], blurred[-1:]], axis=0)
    gx = right - blurred
    gy = down - blurred
    # f32 rounding after every elementwise op; the batch kernel mirrors this.
    acc = gx[:, :, 0] * gx[:, :, 0]
    acc = acc + gx[:, :, 1] * gx[:, :, 1]
    acc = acc + gx[:, :, 2] * gx[:, :, 2]
    acc2 = gy[:, :, 0] * gy[:, :, 0]
    acc2 = acc2 + gy[:, :, 1] * gy[:, :, 1]
    acc2 = acc2 + gy[:, :, 2] * gy[:, :, 2]
    return acc + acc2


def _seed_grid(h: int, w: int, n_regions: int) -> tuple[np.ndarray, int, int]:
    """Evenly spaced seed positions, about n_regions of them, row-major order."""
    n_rows = int(np.floor(np.sqrt(n_regions * h / w) + 0.5))
    n_rows = min(max(n_rows, 1), h)
    n_cols = int(np.ceil(n_regions / n_rows))
    n_cols = min(max(n_cols, 1), w)
    rows = ((2 * np.arange(n_rows, dtype=np.int64) + 1) * h) // (2 * n_rows)
    cols = ((2 * np.arange(n_cols, dtype=np.int64) + 1) * w) // (2 * n_cols)
    seeds = np.stack(
        [np.repeat(rows, n_cols), np.tile(cols, n_rows)], axis=1
    ).astype(np.int64)
    return seeds, n_rows, n_cols


def _perturb_seeds(seeds: np.ndarray, gradient: np.ndarray) -> np.ndarray:
    """Move each seed to the strictly lowest-gradient pixel of its 3x3 patch.

    Row-major scan, strict improvement only, so the seed itself wins ties.
    """
    h, w = gradient.shape
    out = seeds.copy()
    for k in range(seeds.shape[0]):
        r, c = int(seeds[k, 0]), int(seeds[k, 1])
        best_r, best_c = r, c
        best_g = gradient[r, c]
        for nr in range(max(0, r - 1), min(h - 1, r + 1) + 1):
            for nc in range(max(0, c - 1), min(w - 1, c + 1) + 1):
                if gradient[nr, nc] < best_g:
                    best_g = gradient[nr, nc]
                    best_r, best_c = nr, nc
        out[k, 0], out[k, 1] = best_r, best_c
    return out


def _connected_components(labels: np.ndarray) -> tuple[np.ndarray, int]:
    """4-connected components of equal-label pixels, numbered by first
    row-major occurrence."""
    h, w = labels.shape
    idx = np.arange(h * w, dtype=np.int64).reshape(h, w)
    same_h = labels[:, :-1] == labels[:, 1:]
    same_v = labels[:-1, :] == labels[1:, :]
    src = np.concatenate([idx[:, :-1][same_h], idx[:-1, :][same_v]])
    dst = np.concatenate([idx[:, 1:][same_h], idx[1:, :][same_v]])
    graph = coo_matrix(
        (np.ones(len(src), dtype=np.int8), (src, dst)), shape=(h * w, h * w)
    )
    n_comp, comp = connected_components(graph, directed=False)
    comp = comp.reshape(h, w)
    return _renumber_first_occurrence(comp), n_comp


def _renumber_first_occurrence(labels: np.ndarray) -> np.ndarray:
    flat = labels.ravel()
    uniq, first = np.unique(flat, return_index=True)
    order = np.argsort(first, kind="stable")
    remap = np.empty(uniq.max() + 1, dtype=np.int32)
    remap[uniq[order]] = np.arange(len(uniq), dtype=np.int32)
    return remap[flat].reshape(labels.shape)


def _enforce_connectivity(labels: np.ndarray, step: int) -> np.ndarray:
    """Merge each 4-connected fragment smaller than step^2/4 into the
    adjacent label with the largest boundary contact (ties to the lowest
    label), processing fragments in first-occurrence order.

    Fragments attach to a specific neighboring component via union-find, so
    an absorbed fragment follows its host through later merges instead of
    being stranded. Remaining same-label components are split at the end.
    """
    h, w = labels.shape
    comp, n_comp = _connected_components(labels)
    flat_comp = comp.ravel()
    flat_labels = labels.ravel()
    sizes = np.bincount(flat_comp, minlength=n_comp)
    order = np.argsort(flat_comp, kind="stable")
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    # first pixel of each component in row-major order carries its label
    comp_label = flat_labels[order[offsets[:-1]]].astype(np.int64)
    parent = np.arange(n_comp, dtype=np.int64)

    def find(c: int) -> int:
        root = c
        while parent[root] != root:
            root = parent[root]
        while parent[c] != root:
            parent[c], c = root, parent[c]
        return root

    threshold = step * step
    for cid in range(n_comp):
        if 4 * sizes[cid] >= threshold:
            continue
        pix = order[offsets[cid] : offsets[cid + 1]]
        own_label = comp_label[find(cid)]
        rr, cc = pix // w, pix % w
        label_contact: dict[int, int] = {}
        root_contact: dict[int, int] = {}
        for dr, dc in ((-1, 0), (1, 0), (0, -1), (0, 1)):
            nr, nc = rr + dr, cc + dc
            ok = (nr >= 0) & (nr < h) & (nc >= 0) & (nc < w)
            for q in flat_comp[nr[ok] * w + nc[ok]]:
                root = find(int(q))
                lab = int(comp_label[root])
                if lab == own_label:
                    continue
                label_contact[lab] = label_contact.get(lab, 0) + 1
                root_contact[root] = root_contact.get(root, 0) + 1
        if not label_contact:
            continue
        best_label = max(label_contact.items(), key=lambda kv: (kv[1], -kv[0]))[0]
        target = min(
            (r for r in root_contact if comp_label[r] == best_label),
            key=lambda r: (-root_contact[r], r),
        )
        parent[find(cid)] = target

    roots = np.array([find(c) for c in range(n_comp)], dtype=np.int64)
    merged_flat = comp_label[roots[flat_comp]]
    merged, _ = _connected_components(merged_flat.reshape(h, w).astype(np.int32))
    return merged


def segment_superpixels(
    image: np.ndarray,
    n_regions: int,
    compactness: float = 10.0,
    iterations: int = 10,
) -> LabelMap:
    """Deterministic SLIC-style segmentation in RGB space.

    Assignment distance is sqrt(d_rgb^2 + (d_xy/S)^2 * m^2) evaluated in
    float32 with a fixed operation order; ties go to the lower candidate
    label. Cluster means use exact integer sums. A connectivity pass merges
    undersized fragments and renumbers labels by first row-major occurrence.
    """
    _validate_image(image)
    if n_regions < 1:
        raise ValueError("invalid parameter: n_regions must be >= 1")
    h, w, _ = image.shape
    if n_regions > h * w:
        raise ValueError("invalid parameter: n_regions exceeds pixel count")
    if compactness <= 0:
        raise ValueError("invalid parameter: compactness must be positive")
    if iterations < 1:
        raise ValueError("invalid parameter: iterations must be >= 1")

    step = int(np.floor(np.sqrt((h * w) / n_regions)))
    step = max(step, 1)
    seeds, n_rows, n_cols = _seed_grid(h, w, n_regions)
    gradient = _gradient_map(_box_blur(image))
    seeds = _perturb_seeds(seeds, gradient)
    n_centers = seeds.shape[0]

    img32 = image.astype(np.float32)
    rows32 = np.arange(h, dtype=np.float32)
    cols32 = np.arange(w, dtype=np.float32)
    centers_pos = seeds.astype(np.float32)  # (K, 2) row, col
    centers_rgb = img32[seeds[:, 0], seeds[:, 1]].copy()  # (K, 3)

    inv = np.float32(compactness) / np.float32(step)
    coef = inv * inv

    # Coverage fallback: start from the seed-grid cell id so a pixel outside
    # every search window keeps a valid label.
    row_cell = (np.arange(h, dtype=np.int64) * n_rows) // h
    col_cell = (np.arange(w, dtype=np.int64) * n_cols) // w
    labels = (row_cell[:, None] * n_cols + col_cell[None, :]).astype(np.int32)

    flat_r = np.repeat(np.arange(h, dtype=np.float64), w)
    flat_c = np.tile(np.arange(w, dtype=np.float64), h)
    chan64 = [image[:, :, ch].ravel().astype(np.float64) for ch in range(3)]

    for _ in range(iterations):
        dist = np.full((h, w), np.inf, dtype=np.float32)
        for k in range(n_centers):
            cy, cx = centers_pos[k, 0], centers_pos[k, 1]
            cr, cg, cb = centers_rgb[k]
            r0 = max(0, int(np.floor(cy)) - step)
            r1 = min(h - 1, int(np.floor(cy)) + step)
            c0 = max(0, int(np.floor(cx)) - step)
            c1 = min(w - 1, int(np.floor(cx)) + step)
            if r0 > r1 or c0 > c1:
                continue
            win = img32[r0 : r1 + 1, c0 : c1 + 1]
            dr = win[:, :, 0] - cr
            dg = win[:, :, 1] - cg
            db = win[:, :, 2] - cb
            color = dr * dr
            color = color + dg * dg
            color = color + db * db
            dy = rows32[r0 : r1 + 1] - cy
            dx = cols32[c0 : c1 + 1] - cx
            spatial = (dy * dy)[:, None] + (dx * dx)[None, :]
            d = np.sqrt(color + spatial * coef)
            view = dist[r0 : r1 + 1, c0 : c1 + 1]
            better = d < view  # strict: earlier (lower) center keeps ties
            view[better] = d[better]
            labels[r0 : r1 + 1, c0 : c1 + 1][better] = k

        flat = labels.ravel()
        counts = np.bincount(flat, minlength=n_centers).astype(np.float64)
        sum_r = np.bincount(flat, weights=flat_r, minlength=n_centers)
        sum_c = np.bincount(flat, weights=flat_c, minlength=n_centers)
        sums_rgb = [
            np.bincount(flat, weights=chan64[ch], minlength=n_centers)
            for ch in range(3)
        ]
        occupied = counts > 0
        safe = np.where(occupied, counts, 1.0)
        new_pos = np.stack([sum_r / safe, sum_c / safe], axis=1).astype(np.float32)
        new_rgb = np.stack([s / safe for s in sums_rgb], axis=1).astype(np.float32)
        centers_pos = np.where(occupied[:, None], new_pos, centers_pos)
        centers_rgb = np.where(occupied[:, None], new_rgb, centers_rgb)

    final = _enforce_connectivity(labels, step)
    return LabelMap(labels=final.astype(np.int32), n_regions=int(final.max()) + 1)


def build_adjacency(label_map: LabelMap) -> tuple[np.ndarray, np.ndarray]:
    """Region adjacency under 4-connectivity.

    Returns (edge_index, degrees) with unique pairs (i, j), i < j, sorted
    lexicographically. A single region yields an empty edge set.
    """
    labels = label_map.labels
    a_h = labels[:, :-1][labels[:, :-1] != labels[:, 1:]]
    b_h = labels[:, 1:][labels[:, :-1] != labels[:, 1:]]
    a_v = labels[:-1, :][labels[:-1, :] != labels[1:, :]]
    b_v = labels[1:, :][labels[:-1, :] != labels[1:, :]]
    lo = np.concatenate([np.minimum(a_h, b_h), np.minimum(a_v, b_v)])
    hi = np.concatenate([np.maximum(a_h, b_h), np.maximum(a_v, b_v)])
    if len(lo) == 0:
        edge_index = np.zeros((0, 2), dtype=np.uint32)
    else:
        pairs = np.unique(np.stack([lo, hi], axis=1), axis=0)
        edge_index = pairs.astype(np.uint32)
    degrees = np.zeros(label_map.n_regions, dtype=np.int64)
    for col in (0, 1):
        np.add.at(degrees, edge_index[:, col].astype(np.int64), 1)
    return edge_index, degrees


def _region_centroids(labels: np.ndarray, n_regions: int) -> np.ndarray:
    """Per-region mean pixel coordinate: exact integer sums, one float64
    division, stored float32."""
    h, w = labels.shape
    flat = labels.ravel()
    counts = np.bincount(flat, minlength=n_regions).astype(np.float64)
    sum_r = np.bincount(
        flat, weights=np.repeat(np.arange(h, dtype=np.float64), w), minlength=n_regions
    )
    sum_c = np.bincount(
        flat, weights=np.tile(np.arange(w, dtype=np.float64), h), minlength=n_regions
    )
    return np.stack([sum_r / counts, sum_c / counts], axis=1).astype(np.float32)


def _window_origin(center: float, side: int, limit: int) -> int:
    """Top-left of a side-length window centered (round half-up) on `center`,
    shifted to stay inside [0, limit)."""
    c = int(np.floor(np.float64(center) + 0.5))
    origin = c - side // 2
    return min(max(origin, 0), limit - side)


def extract_vertex_tiles(
    image: np.ndarray, label_map: LabelMap, a: int
) -> tuple[np.ndarray, np.ndarray]:
    """Cut an a x a window around each region centroid; pixels outside the
    region are painted the background color. Returns (tiles, centroids)."""
    if a < 1:
        raise ValueError("invalid parameter: tile side must be >= 1")
    h, w, _ = image.shape
    if h < a or w < a:
        raise ValueError("invalid input: image smaller than the tile window")
    labels = label_map.labels
    centroids = _region_centroids(labels, label_map.n_regions)
    tiles = np.empty((label_map.n_regions, a, a, 3), dtype=np.uint8)
    bg = np.array(BACKGROUND, dtype=np.uint8)
    for s in range(label_map.n_regions):
        r0 = _window_origin(centroids[s, 0], a, h)
        c0 = _window_origin(centroids[s, 1], a, w)
        crop = image[r0 : r0 + a, c0 : c0 + a]
        member = labels[r0 : r0 + a, c0 : c0 + a] == s
        tiles[s] = np.where(member[:, :, None], crop, bg)
    return tiles, centroids


def _boundary_pixels_per_edge(
    labels: np.ndarray, edge_index: np.ndarray
) -> list[np.ndarray]:
    """For each adjacent region pair, the set of pixels of either region that
    are 4-adjacent to the other. Returned as unique flat indices per edge."""
    h, w = labels.shape
    idx = np.arange(h * w, dtype=np.int64).reshape(h, w)
    pix_a, pix_b = [], []
    m = labels[:, :-1] != labels[:, 1:]
    pix_a.append(idx[:, :-1][m])
    pix_b.append(idx[:, 1:][m])
    m = labels[:-1, :] != labels[1:, :]
    pix_a.append(idx[:-1, :][m])
    pix_b.append(idx[1:, :][m])
    pa = np.concatenate(pix_a)
    pb = np.concatenate(pix_b)
    flat = labels.ravel()
    la, lb = flat[pa], flat[pb]
    lo = np.minimum(la, lb).astype(np.int64)
    hi = np.maximum(la, lb).astype(np.int64)
    n = int(labels.max()) + 1
    key = lo * n + hi
    edge_key = edge_index[:, 0].astype(np.int64) * n + edge_index[:, 1].astype(np.int64)
    # edge_key is sorted (lexicographic pairs), so searchsorted maps pair keys
    # to edge positions.
    eid = np.searchsorted(edge_key, np.concatenate([key, key]))
    combined = np.unique(eid * np.int64(labels.size) + np.concatenate([pa, pb]))
    eids = combined // labels.size
    pix = combined % labels.size
    cuts = np.searchsorted(eids, np.arange(1, len(edge_index)))
    return np.split(pix, cuts)


def extract_edge_tiles(
    image: np.ndarray,
    label_map: LabelMap,
    edge_index: np.ndarray,
    a: int,
    dilation_radius: int = 2,
) -> np.ndarray:
    """One a x a tile per region pair, centered on the boundary pixel set.

    The member mask is the boundary set dilated by a square element of the
    given radius, intersected with the union of the two regions; everything
    else is painted background.
    """
    if dilation_radius < 0:
        raise ValueError("invalid parameter: dilation_radius must be >= 0")
    h, w, _ = image.shape
    labels = label_map.labels
    boundary = _boundary_pixels_per_edge(labels, edge_index)
    tiles = np.empty((len(edge_index), a, a, 3), dtype=np.uint8)
    bg = np.array(BACKGROUND, dtype=np.uint8)
    rad = dilation_radius
    structure = np.ones((2 * rad + 1, 2 * rad + 1), dtype=bool)
    for e, (i, j) in enumerate(edge_index):
        pix = boundary[e]
        if len(pix) == 0:
            raise AssertionError("internal invariant: adjacent pair with no boundary")
        rr, cc = pix // w, pix % w
        cy = np.float32(rr.sum(dtype=np.float64) / len(pix))
        cx = np.float32(cc.sum(dtype=np.float64) / len(pix))
        r0 = _window_origin(cy, a, h)
        c0 = _window_origin(cx, a, w)
        # Dilation computed on a crop extended by the radius: boundary pixels
        # farther out cannot reach the window.
        er0, ec0 = max(0, r0 - rad), max(0, c0 - rad)
        er1, ec1 = min(h, r0 + a + rad), min(w, c0 + a + rad)
        mask = np.zeros((er1 - er0, ec1 - ec0), dtype=bool)
        inside = (rr >= er0) & (rr < er1) & (cc >= ec0) & (cc < ec1)
        mask[rr[inside] - er0, cc[inside] - ec0] = True
        if rad > 0:
            mask = ndimage.binary_dilation(mask, structure=structure)
        win_mask = mask[r0 - er0 : r0 - er0 + a, c0 - ec0 : c0 - ec0 + a]
        win_labels = labels[r0 : r0 + a, c0 : c0 + a]
        member = win_mask & ((win_labels == i) | (win_labels == j))
        crop = image[r0 : r0 + a, c0 : c0 + a]
        tiles[e] = np.where(member[:, :, None], crop, bg)
    return tiles


def build_entity_graph(
    image: np.ndarray, params: GraphParams, with_label_map: bool = False
):
    """Full pipeline: segment, build adjacency, cut vertex and edge tiles."""
    label_map = segment_superpixels(
        image, params.n_regions, params.compactness, params.iterations
    )
    edge_index, degrees = build_adjacency(label_map)
    vertex_tiles, centroids = extract_vertex_tiles(image, label_map, params.tile)
    edge_tiles = extract_edge_tiles(
        image, label_map, edge_index, params.tile, params.dilation_radius
    )
    graph = EntityGraph(
        vertex_tiles=vertex_tiles,
        edge_tiles=edge_tiles,
        edge_index=edge_index,
        centroids=centroids,
        degrees=degrees,
    )
    if with_label_map:
        return graph, label_map
    return graph


def bundle_bytes(graph: EntityGraph) -> bytes:
    """Serialize to the little-endian graph bundle format (.hmgg)."""
    a = graph.vertex_tiles.shape[1]
    header = BUNDLE_MAGIC + struct.pack(
        "<IIIIB", BUNDLE_VERSION, graph.n_vertices, graph.n_edges, a, 3
    )
    parts = [
        header,
        graph.vertex_tiles.astype(np.uint8).tobytes(),
        graph.edge_tiles.astype(np.uint8).tobytes(),
        graph.edge_index.astype("<u4").tobytes(),
        graph.centroids.astype("<f4").tobytes(),
    ]
    return b"".join(parts)


def write_bundle(path, graph: EntityGraph) -> None:
    with open(path, "wb") as fh:
        fh.write(bundle_bytes(graph))


def read_bundle(path) -> EntityGraph:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != BUNDLE_MAGIC:
        raise ValueError(f"invalid bundle: bad magic in {path}")
    version, n_v, n_e, a, channels = struct.unpack_from("<IIIIB", raw, 4)
    if version != BUNDLE_VERSION or channels != 3:
        raise ValueError(f"invalid bundle: unsupported version/channels in {path}")
    off = 4 + 17
    vt_len = n_v * a * a * 3
    et_len = n_e * a * a * 3
    ei_len = n_e * 2 * 4
    ce_len = n_v * 2 * 4
    if len(raw) != off + vt_len + et_len + ei_len + ce_len:
        raise ValueError(f"invalid bundle: truncated payload in {path}")
    vertex_tiles = np.frombuffer(raw, dtype=np.uint8, count=vt_len, offset=off)
    vertex_tiles = vertex_tiles.reshape(n_v, a, a, 3).copy()
    off += vt_len
    edge_tiles = np.frombuffer(raw, dtype=np.uint8, count=et_len, offset=off)
    edge_tiles = edge_tiles.reshape(n_e, a, a, 3).copy()
    off += et_len
    edge_index = (
        np.frombuffer(raw, dtype="<u4", count=n_e * 2, offset=off)
        .reshape(n_e, 2)
        .astype(np.uint32)
    )
    off += ei_len
    centroids = (
        np.frombuffer(raw, dtype="<f4", count=n_v * 2, offset=off)
        .reshape(n_v, 2)
        .astype(np.float32)
    )
    degrees = np.zeros(n_v, dtype=np.int64)
    for col in (0, 1):
        np.add.at(degrees, edge_index[:, col].astype(np.int64), 1)
    return EntityGraph(
        vertex_tiles=vertex_tiles,
        edge_tiles=edge_tiles,
        edge_index=edge_index,
        centroids=centroids,
        degrees=degrees,
    )
