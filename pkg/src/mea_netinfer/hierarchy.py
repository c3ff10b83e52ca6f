"""
Two-level inference over spatial regions of the array.

Level 1 runs the sampler separately on each region. Level 2 collapses every
region into one super-electrode and runs the same sampler on the collapsed
train to estimate region-to-region connectivity. Regions may overlap so that
edges near a border are seen by both neighbours; their estimates are
averaged when region posteriors are merged back into one matrix.
"""
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import rng as rngmod
from .analysis import summarize_chain
from .errors import ConfigError, DataError
from .sampler import run_gibbs
from .spikedata import SpikeTrain

logger = logging.getLogger(__name__)

__all__ = [
    "RegionLayout",
    "plan_split",
    "aggregate_regions",
    "infer_hierarchical",
    "HierarchicalResult",
    "MergedSummary",
    "merge_region_posteriors",
    "parse_grid_split",
    "within_region_mask",
]

ANY_SPIKE = "any-spike"


@dataclass(frozen=True)
class RegionLayout:
    """Assignment of electrodes to (possibly overlapping) regions.

    Attributes
    ----------
    regions : tuple of tuple of int
        Sorted electrode indices of each region.
    overlap_count : int
        Electrodes shared by each adjacent pair (0 for a disjoint split).
    overlap_pairs : tuple of (int, int, tuple of int)
        Adjacent region pairs and the electrodes they share.
    aggregation : str or float
        ``"any-spike"`` or a mean threshold in (0, 1]: a super-electrode
        fires in a bin when the fraction of member electrodes firing is at
        least the threshold.
    """

    regions: tuple
    overlap_count: int = 0
    overlap_pairs: tuple = ()
    aggregation: object = ANY_SPIKE

    def __post_init__(self):
        regions = tuple(tuple(sorted(int(i) for i in r)) for r in self.regions)
        if not regions or any(len(r) == 0 for r in regions):
            raise DataError("layout needs at least one region and no empty regions")
        if any(len(set(r)) != len(r) for r in regions):
            raise DataError("a region lists an electrode twice")
        pairs = tuple((int(i), int(j), tuple(sorted(int(e) for e in s))) for i, j, s in self.overlap_pairs)
        for i, j, s in pairs:
            if not (0 <= i < len(regions) and 0 <= j < len(regions)):
                raise DataError(f"overlap pair ({i}, {j}) names a missing region")
            if not set(s) <= set(regions[i]) & set(regions[j]):
                raise DataError(f"overlap of regions {i} and {j} is not contained in both")
        agg = self.aggregation
        if agg != ANY_SPIKE:
            agg = float(agg)
            if not 0 < agg <= 1:
                raise DataError(f"mean threshold must lie in (0, 1], got {agg}")
        object.__setattr__(self, "regions", regions)
        object.__setattr__(self, "overlap_pairs", pairs)
        object.__setattr__(self, "aggregation", agg)

    @property
    def k_regions(self):
        return len(self.regions)

    def validate(self, n_electrodes):
        covered = set().union(*map(set, self.regions))
        if covered != set(range(n_electrodes)):
            missing = sorted(set(range(n_electrodes)) - covered)
            extra = sorted(covered - set(range(n_electrodes)))
            raise DataError(f"layout does not match {n_electrodes} electrodes "
                            f"(missing {missing[:5]}, unknown {extra[:5]})")
        if self.overlap_count == 0:
            seen = set()
            for r in self.regions:
                if seen & set(r):
                    raise DataError("regions of a non-overlapping layout must be disjoint")
                seen |= set(r)

    def to_json(self):
        agg = ANY_SPIKE if self.aggregation == ANY_SPIKE else {"mean-threshold": self.aggregation}
        return {
            "regions": [list(r) for r in self.regions],
            "overlap_pairs": [[i, j, list(s)] for i, j, s in self.overlap_pairs],
            "aggregation": agg,
            "overlap_count": self.overlap_count,
        }

    @classmethod
    def from_json(cls, obj):
        try:
            agg = obj.get("aggregation", ANY_SPIKE)
            if isinstance(agg, dict):
                agg = float(agg["mean-threshold"])
            elif agg != ANY_SPIKE:
                raise DataError(f"unknown aggregation {agg!r}")
            pairs = obj.get("overlap_pairs", [])
            n_o = obj.get("overlap_count", len(pairs[0][2]) if pairs else 0)
            return cls(tuple(obj["regions"]), int(n_o), tuple(pairs), agg)
        except (KeyError, TypeError, ValueError, IndexError) as exc:
            raise DataError(f"invalid layout: {exc}") from None

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh, indent=1)
            fh.write("\n")

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            try:
                obj = json.load(fh)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}: {exc}") from None
        return cls.from_json(obj)


def parse_grid_split(text):
    """Parse ``"KxL"`` into ``(K, L)``."""
    try:
        kr, kc = (int(v) for v in str(text).lower().split("x"))
    except ValueError:
        raise ConfigError(f"grid split must look like KxL, got {text!r}") from None
    if kr < 1 or kc < 1:
        raise ConfigError(f"grid split factors must be positive, got {text!r}")
    return kr, kc


def _best_grid(k, n_rows, n_cols):
    best = None
    for kr in range(1, k + 1):
        if k % kr:
            continue
        kc = k // kr
        if kr > n_rows or kc > n_cols:
            continue
        score = abs(np.log((n_rows / kr) / (n_cols / kc)))
        if best is None or score < best[0] - 1e-12:
            best = (score, kr, kc)
    if best is None:
        raise DataError(f"cannot cut a {n_rows}x{n_cols} grid into {k} rectangular blocks")
    return best[1], best[2]


def plan_split(geometry, k_regions, overlap=0, grid_shape=None, aggregation=ANY_SPIKE):
    """Cut the array into ``k_regions`` contiguous rectangular blocks.

    Grid rows and columns are divided into near-equal bands. With
    ``overlap = N_o > 0`` each pair of blocks sharing a border also shares
    ``N_o`` electrodes: the ``N_o / 2`` electrodes of each block nearest the
    border are added to its neighbour.

    Parameters
    ----------
    geometry : ndarray (N, 2)
        ``(row, col)`` coordinates.
    k_regions : int
    overlap : int
        Even, or zero.
    grid_shape : (int, int), optional
        Force ``(row bands, column bands)``; otherwise the factorisation of
        ``k_regions`` giving the squarest blocks is used.
    """
    geom = np.asarray(geometry, dtype=float)
    n = geom.shape[0]
    if k_regions < 1:
        raise DataError("k_regions must be at least 1")
    if k_regions > n:
        raise DataError(f"cannot split {n} electrodes into {k_regions} regions")
    if overlap < 0 or overlap % 2:
        raise DataError(f"overlap must be even and non-negative, got {overlap}")

    row_vals, row_rank = np.unique(geom[:, 0], return_inverse=True)
    col_vals, col_rank = np.unique(geom[:, 1], return_inverse=True)
    n_rows, n_cols = len(row_vals), len(col_vals)
    if grid_shape is None:
        kr, kc = _best_grid(k_regions, n_rows, n_cols)
    else:
        kr, kc = grid_shape
        if kr * kc != k_regions:
            raise DataError(f"grid {kr}x{kc} does not give {k_regions} regions")
        if kr > n_rows or kc > n_cols:
            raise DataError(f"grid {kr}x{kc} is finer than the {n_rows}x{n_cols} array")
    row_band = row_rank * kr // n_rows
    col_band = col_rank * kc // n_cols
    region_of = row_band * kc + col_band
    base = [np.flatnonzero(region_of == r) for r in range(k_regions)]
    if any(len(r) == 0 for r in base):
        raise DataError("split produced an empty region; the geometry is too sparse for this grid")

    regions = [set(r.tolist()) for r in base]
    pairs = []
    if overlap:
        half = overlap // 2
        if half > min(len(r) for r in base):
            raise DataError(f"overlap {overlap} exceeds the smallest region ({min(len(r) for r in base)})")
        for i in range(k_regions):
            bi_r, bi_c = divmod(i, kc)
            for j in range(i + 1, k_regions):
                bj_r, bj_c = divmod(j, kc)
                if bi_r == bj_r and bj_c == bi_c + 1:
                    rank = col_rank
                elif bi_c == bj_c and bj_r == bi_r + 1:
                    rank = row_rank
                else:
                    continue
                # i lies before the border along `rank`, j after it
                edge_i = rank[base[i]].max()
                edge_j = rank[base[j]].min()
                near_i = sorted(base[i], key=lambda e: (edge_i - rank[e], e))[:half]
                near_j = sorted(base[j], key=lambda e: (rank[e] - edge_j, e))[:half]
                regions[i] |= set(near_j)
                regions[j] |= set(near_i)
                pairs.append((i, j, tuple(sorted(near_i + near_j))))
    layout = RegionLayout(tuple(tuple(sorted(r)) for r in regions), int(overlap), tuple(pairs), aggregation)
    layout.validate(n)
    return layout


def within_region_mask(layout, n_electrodes):
    """Boolean N x N mask of edges every region inference can see.

    ``mask[m, n]`` holds when each region containing target ``n`` also
    contains source ``m``. For a disjoint layout this is the block-diagonal
    pattern; with overlaps, electrodes in a shared band only receive input
    from that band.
    """
    mask = np.ones((n_electrodes, n_electrodes), dtype=bool)
    for r in layout.regions:
        inside = np.zeros(n_electrodes, dtype=bool)
        inside[list(r)] = True
        mask[np.ix_(~inside, inside)] = False
    return mask


def aggregate_regions(train, layout):
    """Collapse each region into one super-electrode.

    Per bin the fraction of member electrodes firing is binarised:
    ``any-spike`` fires when any member fires, a numeric threshold fires
    when the fraction reaches it. Super-electrodes sit at their region's
    centroid.
    """
    layout.validate(train.n_electrodes)
    x = np.asarray(train.data, dtype=float)
    cols = []
    for r in layout.regions:
        frac = x[:, list(r)].mean(axis=1)
        if layout.aggregation == ANY_SPIKE:
            cols.append(frac > 0)
        else:
            cols.append(frac >= layout.aggregation - 1e-12)
    data = np.column_stack(cols).astype(np.uint8)
    centroids = np.array([train.geometry[list(r)].mean(axis=0) for r in layout.regions])
    if len({tuple(c) for c in centroids}) != len(centroids):
        logger.warning("region centroids coincide; placing super-electrodes on a line")
        centroids = np.column_stack([np.zeros(len(centroids)), np.arange(len(centroids))])
    ids = tuple(f"R{i}" for i in range(layout.k_regions))
    return SpikeTrain(data, bin_ms=train.bin_ms, geometry=centroids, ids=ids)


@dataclass
class HierarchicalResult:
    region_chains: list
    regional_chain: object
    layout: RegionLayout
    region_seeds: list = field(default_factory=list)


def region_config(cfg, index):
    """Sampler config of region ``index``; the regional level uses ``index = k``."""
    return replace(cfg, seed=rngmod.derive_seed(cfg.seed, rngmod.REGION, index))


def infer_hierarchical(train, layout, hp, cfg, jobs=1, regional=True):
    """Level-1 chains for every region and the level-2 regional chain.

    Regions run as independent jobs (up to ``jobs`` at once); each region's
    chain carries the ids of its electrodes. Seeds are derived from
    ``cfg.seed`` and the region index, so results do not depend on ``jobs``.
    """
    layout.validate(train.n_electrodes)
    k = layout.k_regions
    cfgs = [region_config(cfg, r) for r in range(k + 1)]
    if k == 1:
        # a single region is plain inference on the whole array
        cfgs[0] = cfg

    def level1(r):
        return run_gibbs(train.subset(layout.regions[r]), hp, cfgs[r])

    if jobs > 1 and k > 1:
        with ThreadPoolExecutor(jobs) as pool:
            chains = list(pool.map(level1, range(k)))
    else:
        chains = [level1(r) for r in range(k)]
    reg = run_gibbs(aggregate_regions(train, layout), hp, cfgs[k]) if regional else None
    return HierarchicalResult(chains, reg, layout, [c.seed for c in cfgs])


@dataclass
class MergedSummary:
    """Full-size view of region posteriors.

    ``estimated[m, n]`` is False for pairs no single region contains; those
    entries are NaN in ``edge_prob`` and ``mean_weight`` and are covered only
    by the regional matrix. ``coverage`` counts the regions estimating each
    pair.
    """

    edge_prob: np.ndarray
    mean_weight: np.ndarray
    estimated: np.ndarray
    coverage: np.ndarray


def merge_region_posteriors(chains, layout, electrode_ids=None):
    """Assemble per-region posterior means into N x N matrices.

    Pairs estimated by several overlapping regions get the arithmetic mean
    of the estimates.
    """
    if len(chains) != layout.k_regions:
        raise DataError(f"{len(chains)} chains for {layout.k_regions} regions")
    n = max(max(r) for r in layout.regions) + 1
    prob = np.zeros((n, n))
    weight = np.zeros((n, n))
    cover = np.zeros((n, n), dtype=np.int64)
    for r, (chain, members) in enumerate(zip(chains, layout.regions)):
        if chain.n_electrodes != len(members):
            raise DataError(f"chain {r} has {chain.n_electrodes} electrodes, region has {len(members)}")
        if electrode_ids is not None:
            expect = tuple(electrode_ids[i] for i in members)
            if tuple(chain.electrode_ids) != expect:
                raise DataError(f"chain {r} electrode ids do not match region {r}")
        s = summarize_chain(chain)
        ix = np.ix_(members, members)
        prob[ix] += s.edge_prob
        weight[ix] += s.mean_weight
        cover[ix] += 1
    est = cover > 0
    with np.errstate(invalid="ignore", divide="ignore"):
        prob = np.where(est, prob / np.maximum(cover, 1), np.nan)
        weight = np.where(est, weight / np.maximum(cover, 1), np.nan)
    return MergedSummary(prob, weight, est, cover)
