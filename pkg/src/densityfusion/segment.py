"""Classical thermal segmentation: breast region, hotspots, vessels, areolae.

Everything here is deterministic and works per body side.  Hotspots are
pixels warmer than ``mean + k * std`` of their own side's mask; vessels come
from a multiscale Frangi-style Hessian ridge filter followed by hysteresis,
thinning and a skeleton graph.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import ndimage as ndi
from skimage.filters import apply_hysteresis_threshold
from skimage.morphology import skeletonize

from .core import BreastMask, GraphEdge, GraphNode, Hotspot, HotspotMap, Side, ThermalFrame, VascularGraph
from .errors import LandmarkOutsideMaskError, NoForegroundError, RangeError

_FOUR = ndi.generate_binary_structure(2, 1)
_EIGHT = ndi.generate_binary_structure(2, 2)


@dataclass(frozen=True)
class SegmentationParams:
    hotspot_k: float = 1.5
    min_hotspot_area: int = 20
    vesselness_scales: tuple = (1.0, 2.0, 3.0)
    vessel_hysteresis: tuple = (90.0, 97.0)
    areola_radius: int = 12
    ambient_cutoff: float = 28.0
    # Frangi blob/structure sensitivities (structure in degC, scale-normalised)
    frangi_beta: float = 0.5
    frangi_c: float = 0.5
    # absolute vesselness floors under the percentile thresholds
    vessel_floor: tuple = (0.15, 0.3)
    spur_length: int = 5
    areola_smoothing: float = 2.0
    areola_prominence: float = 0.1

    def __post_init__(self):
        object.__setattr__(self, "vesselness_scales", tuple(float(s) for s in self.vesselness_scales))
        object.__setattr__(self, "vessel_hysteresis", tuple(float(s) for s in self.vessel_hysteresis))
        object.__setattr__(self, "vessel_floor", tuple(float(s) for s in self.vessel_floor))
        if self.hotspot_k <= 0:
            raise RangeError("hotspot_k must be > 0")
        lo, hi = self.vessel_hysteresis
        if not lo < hi:
            raise RangeError("vessel_hysteresis needs low < high")
        if not self.vesselness_scales or min(self.vesselness_scales) < 0.5:
            raise RangeError("vesselness scales must be >= 0.5 px")
        if self.min_hotspot_area < 0 or self.areola_radius < 1:
            raise RangeError("min_hotspot_area >= 0 and areola_radius >= 1 required")


# ---------------------------------------------------------------------------
# breast region
# ---------------------------------------------------------------------------

def _largest_component(mask: np.ndarray, structure=_FOUR) -> np.ndarray:
    labels, n = ndi.label(mask, structure=structure)
    if n == 0:
        return np.zeros_like(mask)
    sizes = np.bincount(labels.ravel())[1:]
    return labels == (int(np.argmax(sizes)) + 1)


def segment_breast(frame: ThermalFrame, cutoff: float = 28.0) -> BreastMask:
    """Split the above-ambient foreground at the body midline.

    The midline is the column centroid of the foreground.  Comparisons are
    done in integers (``col * n`` against the column sum) so mirroring the
    frame swaps the two masks exactly.
    """
    fg = frame.temps >= cutoff
    n = int(fg.sum())
    if n == 0:
        raise NoForegroundError(f"no pixel at or above {cutoff} C")
    cols = np.broadcast_to(np.arange(frame.width, dtype=np.int64), fg.shape)
    col_sum = int(cols[fg].sum())
    scaled = cols * n
    left = _largest_component(fg & (scaled < col_sum))
    right = _largest_component(fg & (scaled > col_sum))
    if not left.any() or not right.any():
        raise NoForegroundError("foreground does not extend to both sides of the midline")
    return BreastMask(left, right)


# ---------------------------------------------------------------------------
# hotspots
# ---------------------------------------------------------------------------

def hotspot_candidates(frame: ThermalFrame, side_mask: np.ndarray, k: float):
    """Pixels strictly above ``mean + k*std`` of ``side_mask``; also returns the mean."""
    vals = frame.temps[side_mask]
    if vals.size == 0:
        return np.zeros_like(side_mask), 0.0
    mu = float(vals.mean())
    if vals.max() == vals.min():
        return np.zeros_like(side_mask), mu
    sd = float(vals.std())
    return side_mask & (frame.temps > mu + k * sd), mu


def _hotspot_map(frame, side_mask, p: SegmentationParams, side) -> HotspotMap:
    cand, mu = hotspot_candidates(frame, side_mask, p.hotspot_k)
    labels, n = ndi.label(cand, structure=_EIGHT)
    out = np.zeros(labels.shape, dtype=np.int32)
    spots = []
    for lab in range(1, n + 1):
        pix = labels == lab
        area = int(pix.sum())
        if area < p.min_hotspot_area:
            continue
        new = len(spots) + 1
        out[pix] = new
        rows, cols = np.nonzero(pix)
        spots.append(Hotspot(new, area, float(frame.temps[pix].max()),
                             (float(rows.mean()), float(cols.mean()))))
    return HotspotMap(out, spots, side=side, baseline=mu)


def detect_hotspots(frame: ThermalFrame, mask: BreastMask, p: SegmentationParams = SegmentationParams()) -> dict:
    """Label hotspot components per side; returns ``{Side: HotspotMap}``."""
    return {side: _hotspot_map(frame, mask.side(side), p, side) for side in (Side.LEFT, Side.RIGHT)}


# ---------------------------------------------------------------------------
# vessels
# ---------------------------------------------------------------------------

def hessian_eigenvalues(image: np.ndarray, sigma: float):
    """Scale-normalised Hessian eigenvalues ordered so that ``|l1| <= |l2|``."""
    s2 = sigma * sigma
    hrr = s2 * ndi.gaussian_filter(image, sigma, order=(2, 0), mode="nearest")
    hcc = s2 * ndi.gaussian_filter(image, sigma, order=(0, 2), mode="nearest")
    hrc = s2 * ndi.gaussian_filter(image, sigma, order=(1, 1), mode="nearest")
    half_trace = 0.5 * (hrr + hcc)
    root = np.sqrt((0.5 * (hrr - hcc)) ** 2 + hrc ** 2)
    a, b = half_trace + root, half_trace - root
    swap = np.abs(a) > np.abs(b)
    l1 = np.where(swap, b, a)
    l2 = np.where(swap, a, b)
    return l1, l2


def vesselness(image: np.ndarray, scales=(1.0, 2.0, 3.0), beta: float = 0.5, c: float = 0.5) -> np.ndarray:
    """Frangi vesselness for bright (warm) ridges, maximised over ``scales``."""
    out = np.zeros(image.shape, dtype=np.float64)
    for sigma in scales:
        l1, l2 = hessian_eigenvalues(image, sigma)
        rb2 = (l1 / np.where(l2 == 0, 1.0, l2)) ** 2
        s2 = l1 ** 2 + l2 ** 2
        v = np.exp(-rb2 / (2 * beta * beta)) * (1.0 - np.exp(-s2 / (2 * c * c)))
        v[l2 >= 0] = 0.0
        np.maximum(out, v, out=out)
    return out


def vessel_footprint(frame: ThermalFrame, mask: BreastMask, p: SegmentationParams = SegmentationParams()):
    """Vessel pixels inside the breast masks, before thinning.

    Returns the binary footprint and the finest-scale ridge eigenvalue
    ``l2`` whose zero level set bounds it.  Coarser scales widen the
    hysteresis region, so only the finest scale decides the footprint width.
    """
    temps = frame.temps
    body = mask.union
    # keep clear of the silhouette step, which would dominate the Hessian
    margin = 4.0 * max(p.vesselness_scales) + 1.0
    interior = ndi.distance_transform_edt(body) > margin
    _, l2 = hessian_eigenvalues(temps, min(p.vesselness_scales))
    if not interior.any():
        return np.zeros_like(body), l2
    v = vesselness(temps, p.vesselness_scales, p.frangi_beta, p.frangi_c)
    v[~interior] = 0.0
    lo_pct, hi_pct = np.percentile(v[interior], p.vessel_hysteresis)
    lo = max(float(lo_pct), p.vessel_floor[0])
    hi = max(float(hi_pct), p.vessel_floor[1])
    region = apply_hysteresis_threshold(v, lo, hi)
    return region & (l2 < 0) & interior, l2


def medial_distance(footprint: np.ndarray, ridge: np.ndarray, factor: int = 5) -> np.ndarray:
    """Sub-pixel distance from each footprint pixel to the footprint boundary.

    The footprint is resampled ``factor`` (odd, so each coarse pixel centre
    falls on a fine cell centre) times finer, with the boundary
    placed on the zero crossing of the bilinearly interpolated ``ridge``
    field, and the fine Euclidean distance transform is maximised over a
    one-pixel neighbourhood so thinning that lands off-centre still reads
    the medial value.
    """
    out = np.zeros(footprint.shape)
    if not footprint.any():
        return out
    rows, cols = np.nonzero(footprint)
    pad = 3
    r0, r1 = max(rows.min() - pad, 0), min(rows.max() + pad + 1, footprint.shape[0])
    c0, c1 = max(cols.min() - pad, 0), min(cols.max() + pad + 1, footprint.shape[1])
    fr = (np.arange((r1 - r0) * factor) + 0.5) / factor - 0.5 + r0
    fc = (np.arange((c1 - c0) * factor) + 0.5) / factor - 0.5 + c0
    gr, gc = np.meshgrid(fr, fc, indexing="ij")
    fine_ridge = ndi.map_coordinates(ridge, [gr, gc], order=1, mode="nearest")
    near = footprint[np.clip(np.rint(gr).astype(int), 0, footprint.shape[0] - 1),
                     np.clip(np.rint(gc).astype(int), 0, footprint.shape[1] - 1)]
    # grow the coarse membership by one pixel so the ridge crossing, not the
    # pixel grid, decides where the footprint ends
    grown = ndi.binary_dilation(near, iterations=factor) & (fine_ridge < 0)
    fine = ndi.distance_transform_edt(grown) / factor - 0.5 / factor
    fine = ndi.maximum_filter(fine, size=2 * factor + 1)
    # sample at the fine cells nearest each coarse pixel centre
    idx_r = (np.arange(r0, r1) - r0) * factor + factor // 2
    idx_c = (np.arange(c0, c1) - c0) * factor + factor // 2
    out[r0:r1, c0:c1] = fine[np.ix_(idx_r, idx_c)]
    return out * footprint


_NEIGHBOURS = [(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)]


def _neighbour_count(skel: np.ndarray) -> np.ndarray:
    k = np.ones((3, 3), dtype=np.int32)
    k[1, 1] = 0
    return ndi.convolve(skel.astype(np.int32), k, mode="constant") * skel


def _trace_graph(skel: np.ndarray):
    """Decompose an 8-connected skeleton into nodes and pixel-path edges.

    Junction pixels (>= 3 neighbours) that touch each other form one node;
    endpoints are nodes of their own.  Closed loops without any node get a
    synthetic node on their first pixel.
    """
    counts = _neighbour_count(skel)
    junction = skel & (counts >= 3)
    endpoint = skel & (counts <= 1)
    node_lab, n_junc = ndi.label(junction, structure=_EIGHT)
    node_id = node_lab.astype(np.int64) - 1  # -1 = not a node
    ends = np.argwhere(endpoint)
    for i, (r, c) in enumerate(ends):
        node_id[r, c] = n_junc + i
    n_nodes = n_junc + len(ends)

    h, w = skel.shape

    def nbrs(r, c):
        for dr, dc in _NEIGHBOURS:
            rr, cc = r + dr, c + dc
            if 0 <= rr < h and 0 <= cc < w and skel[rr, cc]:
                yield rr, cc

    visited = np.zeros_like(skel)
    edges = []  # (node_a, node_b, [pixels])
    seen_links = set()
    node_pixels = [[] for _ in range(n_nodes)]
    for r, c in np.argwhere(node_id >= 0):
        node_pixels[node_id[r, c]].append((int(r), int(c)))

    for a in range(n_nodes):
        for (r0, c0) in node_pixels[a]:
            for (r1, c1) in nbrs(r0, c0):
                b = node_id[r1, c1]
                if b == a:
                    continue
                if b >= 0:
                    key = tuple(sorted(((r0, c0), (r1, c1))))
                    if key not in seen_links:
                        seen_links.add(key)
                        edges.append((a, int(b), [(r0, c0), (r1, c1)]))
                    continue
                if visited[r1, c1]:
                    continue
                path = [(r0, c0), (r1, c1)]
                visited[r1, c1] = True
                prev, cur = (r0, c0), (r1, c1)
                end = None
                while end is None:
                    step = None
                    for q in nbrs(*cur):
                        if q == prev or q in path[-3:]:
                            continue
                        if node_id[q] >= 0 and node_id[q] != -1:
                            if node_id[q] == a and len(path) <= 2:
                                continue
                            end = int(node_id[q])
                            path.append(q)
                            break
                        if not visited[q]:
                            step = q
                    if end is not None:
                        break
                    if step is None:
                        end = -1
                        break
                    visited[step] = True
                    path.append(step)
                    prev, cur = cur, step
                if end >= 0:
                    edges.append((a, end, path))

    # loops made only of degree-2 pixels
    rest = skel & ~visited & (node_id < 0)
    loop_lab, n_loops = ndi.label(rest, structure=_EIGHT)
    for i in range(1, n_loops + 1):
        pix = [tuple(map(int, p)) for p in np.argwhere(loop_lab == i)]
        node_pixels.append([pix[0]])
        edges.append((n_nodes, n_nodes, pix))
        n_nodes += 1
    return node_pixels, edges


def _prune_spurs(skel: np.ndarray, spur_length: int) -> np.ndarray:
    skel = skel.copy()
    while True:
        node_pixels, edges = _trace_graph(skel)
        degree = np.zeros(len(node_pixels), dtype=int)
        for a, b, _ in edges:
            degree[a] += 1
            degree[b] += 1
        removed = False
        for a, b, path in edges:
            if len(path) >= spur_length or a == b:
                continue
            da, db = degree[a], degree[b]
            if min(da, db) == 1 and max(da, db) >= 3:
                # spur: drop everything except the junction end
                keep = set(node_pixels[a] if da >= 3 else node_pixels[b])
                for q in path:
                    if q not in keep:
                        skel[q] = False
                removed = True
            elif da == 1 and db == 1:
                for q in path:
                    skel[q] = False
                removed = True
        if not removed:
            return skel
        # re-thin so junction pixels left behind by a removed spur go too
        skel = skeletonize(skel)


def _merge_through_nodes(node_pixels, edges):
    """Join the two edges meeting at any node of degree exactly 2."""
    edges = [list(e) for e in edges]
    while True:
        degree = {}
        for i, (a, b, _) in enumerate(edges):
            if a == b:
                continue
            degree.setdefault(a, []).append(i)
            degree.setdefault(b, []).append(i)
        node = next((n for n, inc in degree.items() if len(inc) == 2 and inc[0] != inc[1]), None)
        if node is None:
            return node_pixels, [tuple(e) for e in edges]
        i, j = degree[node]
        a1, b1, p1 = edges[i]
        a2, b2, p2 = edges[j]
        # orient both paths so they meet at ``node``
        if a1 == node:
            a1, b1, p1 = b1, a1, p1[::-1]
        if b2 == node:
            a2, b2, p2 = b2, a2, p2[::-1]
        joined = p1 + [q for q in p2 if q not in set(p1)]
        merged = [a1, b2, joined]
        edges = [e for k, e in enumerate(edges) if k not in (i, j)] + [merged]


def skeleton_graph(skel: np.ndarray, dist: np.ndarray, side: Side, spur_length: int = 5) -> VascularGraph:
    """Build a pruned :class:`VascularGraph` from a 1-px skeleton.

    ``dist`` holds the distance to the vessel boundary per pixel; an edge's
    caliber is twice its mean over the edge's skeleton pixels.
    """
    skel = _prune_spurs(skel.astype(bool), spur_length)
    node_pixels, raw_edges = _merge_through_nodes(*_trace_graph(skel))
    degree = np.zeros(len(node_pixels), dtype=int)
    for a, b, _ in raw_edges:
        degree[a] += 1
        degree[b] += 1
    used = sorted({a for a, _, _ in raw_edges} | {b for _, b, _ in raw_edges})
    remap = {old: new for new, old in enumerate(used)}
    nodes = []
    for old in used:
        pts = np.array(node_pixels[old], dtype=float)
        nodes.append(GraphNode(float(pts[:, 0].mean()), float(pts[:, 1].mean()), int(degree[old])))
    edges = []
    for a, b, path in raw_edges:
        d = np.array([max(dist[q], 0.5) for q in path])
        edges.append(GraphEdge(tuple(path), float(2.0 * d.mean()), (remap[a], remap[b])))
    return VascularGraph(skel, nodes, edges, side)


def _flip_graph(g: VascularGraph, width: int) -> VascularGraph:
    nodes = [GraphNode(n.row, width - 1 - n.col, n.degree) for n in g.nodes]
    edges = [GraphEdge(tuple((r, width - 1 - c) for r, c in e.pixels), e.caliber, e.nodes) for e in g.edges]
    return VascularGraph(g.skeleton[:, ::-1], nodes, edges, g.side)


def extract_vascular_map(frame: ThermalFrame, mask: BreastMask, p: SegmentationParams = SegmentationParams()) -> dict:
    """Vessel graphs per side: ``{Side: VascularGraph}``.

    The right side is thinned and traced in mirrored orientation, so a
    horizontally flipped frame yields exactly the flipped graphs with sides
    swapped (thinning itself is not reflection-equivariant).
    """
    footprint, ridge = vessel_footprint(frame, mask, p)
    dist = medial_distance(footprint, ridge)
    out = {}
    for side in (Side.LEFT, Side.RIGHT):
        fp = footprint & mask.side(side)
        if side is Side.RIGHT:
            g = skeleton_graph(skeletonize(fp[:, ::-1]), dist[:, ::-1], side, p.spur_length)
            out[side] = _flip_graph(g, frame.width)
        else:
            out[side] = skeleton_graph(skeletonize(fp), dist, side, p.spur_length)
    return out


# ---------------------------------------------------------------------------
# areolae
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AreolarRegions:
    landmarks: dict  # Side -> (row, col)
    regions: dict  # Side -> bool array

    def region(self, side: Side) -> np.ndarray:
        return self.regions[side]


def _disk(shape, center, radius) -> np.ndarray:
    rr, cc = np.ogrid[0:shape[0], 0:shape[1]]
    return (rr - center[0]) ** 2 + (cc - center[1]) ** 2 <= radius * radius


def estimate_landmark(frame: ThermalFrame, side_mask: np.ndarray, p: SegmentationParams = SegmentationParams()):
    """In-mask local temperature extremum closest to the mask centroid."""
    smooth = ndi.gaussian_filter(frame.temps, p.areola_smoothing, mode="nearest")
    size = 2 * p.areola_radius + 1
    local_mean = ndi.uniform_filter(smooth, size=size, mode="nearest")
    is_max = smooth == ndi.maximum_filter(smooth, size=size, mode="nearest")
    is_min = smooth == ndi.minimum_filter(smooth, size=size, mode="nearest")
    prominent = np.abs(smooth - local_mean) >= p.areola_prominence
    inner = ndi.binary_erosion(side_mask, structure=_EIGHT, iterations=p.areola_radius // 2)
    cand = (is_max | is_min) & prominent & inner
    rows, cols = np.nonzero(side_mask)
    centroid = (rows.mean(), cols.mean())
    if not cand.any():
        return int(round(centroid[0])), int(round(centroid[1]))
    cr, cc = np.nonzero(cand)
    d2 = (cr - centroid[0]) ** 2 + (cc - centroid[1]) ** 2
    i = int(np.lexsort((cc, cr, d2))[0])
    return int(cr[i]), int(cc[i])


def locate_areolar_regions(frame: ThermalFrame, mask: BreastMask, p: SegmentationParams = SegmentationParams(),
                           landmarks: Optional[dict] = None) -> AreolarRegions:
    """Disk of ``p.areola_radius`` around each side's nipple landmark, clipped to the mask."""
    marks, regions = {}, {}
    for side in (Side.LEFT, Side.RIGHT):
        side_mask = mask.side(side)
        if landmarks and landmarks.get(side) is not None:
            r, c = (int(round(v)) for v in landmarks[side])
            inside = 0 <= r < side_mask.shape[0] and 0 <= c < side_mask.shape[1] and side_mask[r, c]
            if not inside:
                raise LandmarkOutsideMaskError(f"{side.value} landmark ({r}, {c}) outside breast mask")
        else:
            r, c = estimate_landmark(frame, side_mask, p)
        marks[side] = (r, c)
        regions[side] = _disk(side_mask.shape, (r, c), p.areola_radius) & side_mask
    return AreolarRegions(marks, regions)
