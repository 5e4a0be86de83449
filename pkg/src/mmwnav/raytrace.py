"""Deterministic image-method 2D ray tracer.

Produces per-link multipath components (complex gain, AoA/AoD azimuth, delay,
interaction list) plus ground-truth link-state labels.  Specular reflections
are found by mirroring the source across wall lines and validating the
unfolded straight segments; first-order corner diffraction radiates only into
the shadow region of the diffracting wall.  Gains are referenced to isotropic
0 dBi antennas; array directivity is applied downstream.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from enum import IntEnum

import numpy as np

from .geometry import (EPS, MAT_STRUCTURAL, Environment, Material, RxGrid,
                       segments_intersect)

# speed of light in m/ns
C_M_PER_NS = 0.299792458

# obstruction legs are shrunk at reflection/diffraction endpoints so the
# interaction's own wall does not self-block
_SHRINK = 1e-8


class MisalignedInput(Exception):
    pass


class LinkState(IntEnum):
    LOS = 0
    FIRST_ORDER_NLOS = 1
    HIGHER_ORDER_NLOS = 2
    OUTAGE = 3


@dataclass(frozen=True)
class PathComponent:
    """One ray: complex gain at isotropic reference, azimuths in degrees,
    delay in ns, and the ordered interaction list (('R'|'D'|'T'), id)."""

    gain: complex
    aoa_deg: float
    aod_deg: float
    delay_ns: float
    interactions: tuple = ()

    @property
    def order(self) -> int:
        return len(self.interactions)

    @property
    def power_dbm(self) -> float:
        """Received power for a 0 dBm transmit at 0 dBi antennas."""
        return 20.0 * math.log10(abs(self.gain)) if self.gain != 0 else -math.inf


@dataclass
class LinkRecord:
    tx_id: int
    rx_cell: tuple          # (ix, iy) grid indices
    paths: list             # sorted by |gain| descending, truncated to L_max
    true_state: LinkState

    L_MAX = 25


def fresnel_reflection(material: Material, incidence_deg: float):
    """TE Fresnel reflection coefficient; incidence measured from the normal."""
    theta = np.deg2rad(incidence_deg)
    eps = material.complex_permittivity
    ct = np.cos(theta)
    root = np.sqrt(eps - np.sin(theta) ** 2)
    return (ct - root) / (ct + root)


def label_link(paths, snr_per_path_db, threshold_db: float = 5.0) -> LinkState:
    """Four-way link state from ground-truth paths and per-path RX SNRs."""
    if len(paths) != len(snr_per_path_db):
        raise MisalignedInput(
            f"{len(paths)} paths vs {len(snr_per_path_db)} SNR values")
    strong = [p for p, s in zip(paths, snr_per_path_db) if s >= threshold_db]
    if not strong:
        return LinkState.OUTAGE
    if any(p.order == 0 for p in strong):
        return LinkState.LOS
    if any(p.order == 1 for p in strong):
        return LinkState.FIRST_ORDER_NLOS
    return LinkState.HIGHER_ORDER_NLOS


# ---------------------------------------------------------------------------
# image tracer
# ---------------------------------------------------------------------------

def _mirror(p: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    d = b - a
    d = d / np.linalg.norm(d)
    ap = p - a
    return a + 2.0 * (ap @ d) * d - ap


@dataclass
class _Node:
    seq: tuple        # wall indices in propagation order
    images: tuple     # I_1..I_k, I_m = mirror of I_{m-1} across wall seq[m-1]


class ImageTracer:
    """Image-method tracer over a fixed environment.

    The per-TX image tree is pruned with exact visibility tests (facing side,
    collinearity, and the angular wedge through the previous wall segment);
    pruning never removes a geometrically valid sequence.  Candidate sequences
    are validated per receiver point with vectorized unfolding.
    """

    def __init__(self, env: Environment, max_reflections: int = 3,
                 enable_diffraction: bool = True, diffraction_loss_db: float = 20.0,
                 diffraction_slope_db_per_deg: float = 1.0,
                 enable_transmission: bool = False, transmission_loss_db: float = 10.0,
                 max_transmissions: int = 1,
                 carrier_hz: float = 28e9, max_range_m: float = np.inf):
        if max_reflections > 3:
            raise ValueError("max_reflections must be <= 3")
        self.env = env
        self.max_reflections = max_reflections
        self.enable_diffraction = enable_diffraction
        self.diffraction_loss_db = diffraction_loss_db
        self.diffraction_slope = diffraction_slope_db_per_deg
        self.enable_transmission = enable_transmission
        self.max_transmissions = max_transmissions
        self.transmission_amp = 10.0 ** (-transmission_loss_db / 20.0)
        self.carrier_hz = carrier_hz
        self.lambda_m = 299792458.0 / carrier_hz
        self.max_range_m = max_range_m

        w = env.walls
        self.wa = w[:, 0:2]
        self.wb = w[:, 2:4]
        d = self.wb - self.wa
        ln = np.linalg.norm(d, axis=1)
        self.wdir = d / ln[:, None]
        self.wlen = ln
        self.wnorm = np.stack([-self.wdir[:, 1], self.wdir[:, 0]], axis=1)
        # structural walls never pass a signal; partitions may, when enabled
        self.opaque = env.wall_materials == MAT_STRUCTURAL
        self._corners = self._find_corners()
        self._trees: dict = {}
        self._arrival_cache: dict = {}

    # -- corners: wall endpoints with exactly one incident wall ------------
    def _find_corners(self):
        pts = np.vstack([self.wa, self.wb])
        owner = np.concatenate([np.arange(len(self.wa)), np.arange(len(self.wa))])
        corners = []
        for i, p in enumerate(pts):
            # walls passing through p (distance of p to the closed segment)
            da = p[None, :] - self.wa
            t = np.einsum("wk,wk->w", da, self.wdir)
            t = np.clip(t, 0.0, self.wlen)
            close = self.wa + t[:, None] * self.wdir
            dist = np.linalg.norm(p[None, :] - close, axis=1)
            if (dist < EPS).sum() == 1:
                corners.append((p, int(owner[i])))
        return corners

    # -- image tree ---------------------------------------------------------
    def _tree(self, tx: np.ndarray):
        key = (round(float(tx[0]), 12), round(float(tx[1]), 12), self.max_reflections)
        if key not in self._trees:
            self._trees[key] = self._build_tree(np.asarray(tx, dtype=np.float64))
        return self._trees[key]

    def _build_tree(self, tx: np.ndarray):
        nodes: list[_Node] = []
        if self.max_reflections < 1:
            return nodes
        level = []
        for w in range(self.env.n_walls):
            if abs((tx - self.wa[w]) @ self.wnorm[w]) < EPS:
                continue
            img = _mirror(tx, self.wa[w], self.wb[w])
            level.append(_Node(seq=(w,), images=(img,)))
        nodes.extend(level)
        for _ in range(1, self.max_reflections):
            nxt = []
            for node in level:
                last = node.seq[-1]
                src = node.images[-1]
                for w2 in self._visible_walls(src, last):
                    img = _mirror(src, self.wa[w2], self.wb[w2])
                    nxt.append(_Node(seq=node.seq + (w2,), images=node.images + (img,)))
            nodes.extend(nxt)
            level = nxt
        return nodes

    def _visible_walls(self, src: np.ndarray, through: int):
        """Walls possibly reachable by rays from image `src` through wall
        `through`'s segment.  Conservative (never prunes a valid wall)."""
        out = []
        e1, e2 = self.wa[through], self.wb[through]
        n = self.wnorm[through]
        s_src = (src - e1) @ n
        for w2 in range(self.env.n_walls):
            if w2 == through:
                continue
            a, b = self.wa[w2], self.wb[w2]
            # collinear with the previous mirror line: unreachable
            if abs((a - e1) @ n) < EPS and abs((b - e1) @ n) < EPS:
                continue
            # must have a point strictly on the far side of the mirror line
            sa = (a - e1) @ n
            sb = (b - e1) @ n
            if s_src > 0 and max(-sa, -sb) < EPS:
                continue
            if s_src < 0 and max(sa, sb) < EPS:
                continue
            if not self._wedge_overlap(src, e1, e2, a, b, n, s_src):
                continue
            out.append(w2)
        return out

    @staticmethod
    def _wedge_overlap(src, e1, e2, a, b, n, s_src) -> bool:
        """Does segment (a,b) meet the wedge from src through segment (e1,e2),
        on the far side of the (e1,e2) line?  Interval clipping in the segment
        parameter t; conservative by EPS slack."""
        lo, hi = 0.0, 1.0
        d = b - a

        def clip(f0, f1, keep_nonneg, lo, hi):
            # keep t where f(t) = f0 + t (f1-f0) has the requested sign
            df = f1 - f0
            if abs(df) < 1e-15:
                if (f0 >= -1e-9) != keep_nonneg and abs(f0) > 1e-9:
                    return 1.0, 0.0
                return lo, hi
            t_cross = -f0 / df
            if keep_nonneg:
                if df > 0:
                    lo = max(lo, t_cross)
                else:
                    hi = min(hi, t_cross)
            else:
                if df > 0:
                    hi = min(hi, t_cross)
                else:
                    lo = max(lo, t_cross)
            return lo, hi

        # far side of the mirror line: sign opposite to s_src
        f0 = (a - e1) @ n
        f1 = (b - e1) @ n
        lo, hi = clip(f0, f1, keep_nonneg=(s_src < 0), lo=lo, hi=hi)
        if lo > hi + 1e-9:
            return False
        # inside the cone spanned by rays src->e1 and src->e2
        v1 = e1 - src
        v2 = e2 - src
        sign = v1[0] * v2[1] - v1[1] * v2[0]
        for v, want in ((v1, sign >= 0), (v2, sign < 0)):
            g0 = v[0] * (a - src)[1] - v[1] * (a - src)[0]
            g1 = v[0] * (b - src)[1] - v[1] * (b - src)[0]
            lo, hi = clip(g0, g1, keep_nonneg=want, lo=lo, hi=hi)
            if lo > hi + 1e-9:
                return False
        return True

    # -- obstruction --------------------------------------------------------
    def _blocked_or_loss(self, p: np.ndarray, q: np.ndarray,
                         shrink_p: bool, shrink_q: bool):
        """For legs p->q (both (P,2)): boolean blocked mask, or with
        transmission enabled an (opaque-blocked, crossing hits, count)
        triple counting only penetrable partition walls."""
        d = q - p
        ln = np.linalg.norm(d, axis=1, keepdims=True)
        ln = np.where(ln < EPS, 1.0, ln)
        u = d / ln
        pp = p + (_SHRINK * u if shrink_p else 0.0)
        qq = q - (_SHRINK * u if shrink_q else 0.0)
        hits = segments_intersect(pp, qq, self.env.walls)
        if not self.enable_transmission:
            return hits.any(axis=1)
        blocked = hits[:, self.opaque].any(axis=1)
        thits = hits & ~self.opaque[None, :]
        return blocked, thits, thits.sum(axis=1)

    # -- main entry ---------------------------------------------------------
    def trace_points(self, tx: np.ndarray, pts: np.ndarray):
        """All paths from tx to each point; returns list of path lists."""
        tx = np.asarray(tx, dtype=np.float64)
        pts = np.atleast_2d(np.asarray(pts, dtype=np.float64))
        P = pts.shape[0]
        out: list[list[PathComponent]] = [[] for _ in range(P)]

        self._add_direct(tx, pts, out)
        for node in self._tree(tx):
            self._add_reflection(tx, pts, node, out)
        if self.enable_diffraction:
            self._add_diffraction(tx, pts, out)
        return out

    def _path_amp(self, dist):
        return self.lambda_m / (4.0 * np.pi * dist)

    def _phase(self, delay_ns):
        return np.exp(-2j * np.pi * self.carrier_hz * delay_ns * 1e-9)

    def _add_direct(self, tx, pts, out):
        res = self._blocked_or_loss(np.broadcast_to(tx, pts.shape), pts, False, False)
        if self.enable_transmission:
            blocked, hits, count = res
            alive = ~blocked & (count <= self.max_transmissions)
        else:
            alive = ~res
            hits = count = None
        d = np.linalg.norm(pts - tx, axis=1)
        alive &= d > EPS
        alive &= d <= self.max_range_m
        ao = np.degrees(np.arctan2(pts[:, 1] - tx[1], pts[:, 0] - tx[0]))
        for i in np.nonzero(alive)[0]:
            delay = d[i] / C_M_PER_NS
            amp = self._path_amp(d[i])
            inter = ()
            if self.enable_transmission and count[i] > 0:
                amp *= self.transmission_amp ** count[i]
                inter = tuple(("T", int(w)) for w in np.nonzero(hits[i])[0])
            gain = amp * self._phase(delay)
            out[i].append(PathComponent(
                gain=complex(gain), aoa_deg=_wrap_deg(ao[i] + 180.0),
                aod_deg=float(ao[i]), delay_ns=float(delay), interactions=inter))

    def _add_reflection(self, tx, pts, node: _Node, out):
        k = len(node.seq)
        I_last = node.images[-1]
        total_d = np.linalg.norm(pts - I_last, axis=1)
        alive = (total_d > EPS) & (total_d <= self.max_range_m)
        if not alive.any():
            return
        idx = np.nonzero(alive)[0]
        target = pts[idx]
        coef = np.ones(len(idx), dtype=np.complex128)
        first_hit = np.empty_like(target)
        last_hit = np.empty_like(target)
        legs = []  # (p, q, shrink_p, shrink_q) recorded for obstruction pass

        # geometric unfolding with compaction; obstruction tested afterwards
        for m in range(k - 1, -1, -1):
            w = node.seq[m]
            img = node.images[m]
            n = self.wnorm[w]
            denom = (target - img) @ n
            s_img = (self.wa[w] - img) @ n
            with np.errstate(divide="ignore", invalid="ignore"):
                t = s_img / denom
            keep = np.isfinite(t) & (t > EPS) & (t < 1.0 - EPS)
            if not keep.any():
                return
            idx, target, coef, t = idx[keep], target[keep], coef[keep], t[keep]
            first_hit, last_hit = first_hit[keep], last_hit[keep]
            legs = [(p[keep], q[keep], sp, sq) for p, q, sp, sq in legs]
            h = img + t[:, None] * (target - img)
            s = (h - self.wa[w]) @ self.wdir[w]
            keep = (s >= -EPS) & (s <= self.wlen[w] + EPS)
            if not keep.any():
                return
            idx, target, coef, h = idx[keep], target[keep], coef[keep], h[keep]
            first_hit, last_hit = first_hit[keep], last_hit[keep]
            legs = [(p[keep], q[keep], sp, sq) for p, q, sp, sq in legs]
            legs.append((h, target, True, m < k - 1))
            # Fresnel coefficient at this bounce
            dirs = target - img
            ct = np.abs((dirs / np.linalg.norm(dirs, axis=1, keepdims=True)) @ n)
            inc = np.degrees(np.arccos(np.clip(ct, 0.0, 1.0)))
            coef = coef * fresnel_reflection(self.env.material_of(w), inc)
            if m == k - 1:
                last_hit = h.copy()
            first_hit = h
            target = h

        legs.append((np.broadcast_to(tx, target.shape), target, False, True))
        trans: list[list] = [[] for _ in range(len(idx))] if self.enable_transmission else None
        total_crossings = np.zeros(len(idx), dtype=np.int64) if self.enable_transmission else None
        li = 0
        while li < len(legs):
            p, q, sp, sq = legs[li]
            res = self._blocked_or_loss(p, q, sp, sq)
            if self.enable_transmission:
                blocked, hits, count = res
                total_crossings = total_crossings + count
                keep = ~blocked & (total_crossings <= self.max_transmissions)
                if not keep.any():
                    return
                for r in np.nonzero((count > 0) & keep)[0]:
                    trans[r].extend(("T", int(x)) for x in np.nonzero(hits[r])[0])
                coef = coef * self.transmission_amp ** count
                if not keep.all():
                    idx, coef, total_crossings = idx[keep], coef[keep], total_crossings[keep]
                    first_hit, last_hit = first_hit[keep], last_hit[keep]
                    trans = [t for t, k in zip(trans, keep) if k]
                    legs = [(pl[keep], ql[keep], spl, sql) for pl, ql, spl, sql in legs]
            else:
                keep = ~res
                if not keep.any():
                    return
                if not keep.all():
                    idx, coef = idx[keep], coef[keep]
                    first_hit, last_hit = first_hit[keep], last_hit[keep]
                    legs = [(pl[keep], ql[keep], spl, sql) for pl, ql, spl, sql in legs]
            li += 1

        aod = np.degrees(np.arctan2(first_hit[:, 1] - tx[1], first_hit[:, 0] - tx[0]))
        rxs = pts[idx]
        aoa = np.degrees(np.arctan2(last_hit[:, 1] - rxs[:, 1], last_hit[:, 0] - rxs[:, 0]))
        base_inter = tuple(("R", int(w)) for w in node.seq)
        for r in range(len(idx)):
            i = idx[r]
            delay = total_d[i] / C_M_PER_NS
            amp = self._path_amp(total_d[i]) * coef[r]
            inter = base_inter
            if self.enable_transmission and trans[r]:
                inter = inter + tuple(trans[r])
            gain = amp * self._phase(delay)
            out[i].append(PathComponent(
                gain=complex(gain), aoa_deg=_wrap_deg(aoa[r]),
                aod_deg=_wrap_deg(aod[r]), delay_ns=float(delay), interactions=inter))

    def _corner_arrivals(self, tx):
        """Ways the signal reaches each corner: direct and via reflections.

        Returns per corner a list of (virtual source, path length to the
        corner, complex coefficient, AoD, interaction prefix).  The virtual
        source (TX or the last mirror image) drives the shadow test exactly
        as the TX does for the plain corner-diffraction path.  Capped to the
        strongest few arrivals so map-scale tracing stays linear; cached per
        TX position.
        """
        key = (round(float(tx[0]), 12), round(float(tx[1]), 12))
        if key in self._arrival_cache:
            return self._arrival_cache[key]
        arrivals = [[] for _ in self._corners]
        cpts = np.array([c for c, _ in self._corners]).reshape(-1, 2)
        if not len(cpts):
            return arrivals
        # direct TX -> corner legs
        res = self._blocked_or_loss(np.broadcast_to(tx, cpts.shape), cpts, False, True)
        clear = (~res[0] & (res[2] == 0)) if self.enable_transmission else ~res
        for ci in np.nonzero(clear)[0]:
            d = float(np.linalg.norm(cpts[ci] - tx))
            if d < EPS:
                continue
            aod = math.degrees(math.atan2(cpts[ci][1] - tx[1], cpts[ci][0] - tx[0]))
            arrivals[ci].append((tx, d, 1.0 + 0.0j, aod, ()))
        # reflected arrivals, up to max order - 1 bounces before the corner
        max_pre = min(self.max_reflections, 2)
        for node in self._tree(tx):
            if len(node.seq) > max_pre:
                continue
            found = self._validate_to_points(tx, cpts, node)
            for ci, (length, coef, aod) in found.items():
                arrivals[ci].append((node.images[-1], length, coef, aod,
                                     tuple(("R", int(w)) for w in node.seq)))
        for ci in range(len(arrivals)):
            arrivals[ci].sort(key=lambda a: -abs(a[2]) / max(a[1], EPS))
            arrivals[ci] = arrivals[ci][:4]
        self._arrival_cache[key] = arrivals
        return arrivals

    def _validate_to_points(self, tx, cpts, node):
        """Reflection-path validation of one wall sequence toward target
        points; returns {point index: (length, fresnel coefficient, aod)}."""
        k = len(node.seq)
        I_last = node.images[-1]
        total_d = np.linalg.norm(cpts - I_last, axis=1)
        idx = np.nonzero((total_d > EPS) & (total_d <= self.max_range_m))[0]
        if not len(idx):
            return {}
        target = cpts[idx]
        coef = np.ones(len(idx), dtype=np.complex128)
        first_hit = np.empty_like(target)
        legs = []
        for m in range(k - 1, -1, -1):
            w = node.seq[m]
            img = node.images[m]
            n = self.wnorm[w]
            denom = (target - img) @ n
            s_img = (self.wa[w] - img) @ n
            with np.errstate(divide="ignore", invalid="ignore"):
                t = s_img / denom
            keep = np.isfinite(t) & (t > EPS) & (t < 1.0 - EPS)
            if not keep.any():
                return {}
            idx, target, coef, t = idx[keep], target[keep], coef[keep], t[keep]
            first_hit = first_hit[keep]
            legs = [(p[keep], q[keep], sp, sq) for p, q, sp, sq in legs]
            h = img + t[:, None] * (target - img)
            s = (h - self.wa[w]) @ self.wdir[w]
            keep = (s >= -EPS) & (s <= self.wlen[w] + EPS)
            if not keep.any():
                return {}
            idx, target, coef, h = idx[keep], target[keep], coef[keep], h[keep]
            first_hit = first_hit[keep]
            legs = [(p[keep], q[keep], sp, sq) for p, q, sp, sq in legs]
            legs.append((h, target, True, True))  # corner end also shrinks
            dirs = target - img
            ct = np.abs((dirs / np.linalg.norm(dirs, axis=1, keepdims=True)) @ n)
            inc = np.degrees(np.arccos(np.clip(ct, 0.0, 1.0)))
            coef = coef * fresnel_reflection(self.env.material_of(w), inc)
            first_hit = h
            target = h
        legs.append((np.broadcast_to(tx, target.shape), target, False, True))
        li = 0
        while li < len(legs):
            p, q, sp, sq = legs[li]
            res = self._blocked_or_loss(p, q, sp, sq)
            blocked = (res[0] | (res[2] > 0)) if self.enable_transmission else res
            keep = ~blocked
            if not keep.any():
                return {}
            if not keep.all():
                idx, coef = idx[keep], coef[keep]
                first_hit = first_hit[keep]
                legs = [(pl[keep], ql[keep], spl, sql) for pl, ql, spl, sql in legs]
            li += 1
        I_last_d = np.linalg.norm(cpts[idx] - I_last, axis=1)
        aod = np.degrees(np.arctan2(first_hit[:, 1] - tx[1], first_hit[:, 0] - tx[0]))
        return {int(i): (float(d), complex(cf), float(a))
                for i, d, cf, a in zip(idx, I_last_d, coef, aod)}

    def _add_diffraction(self, tx, pts, out):
        arrivals = self._corner_arrivals(tx)
        for cid, (c, wall) in enumerate(self._corners):
            for source, d_in, coef_in, aod, prefix in arrivals[cid]:
                if len(prefix) + 1 > self.max_reflections + 1:
                    continue
                # shadow of the diffracting wall relative to the arriving
                # ray's (virtual) source: the straight continuation is blocked
                shadow = segments_intersect(np.broadcast_to(np.asarray(source, float),
                                                            pts.shape), pts,
                                            self.env.walls[wall:wall + 1])[:, 0]
                if not shadow.any():
                    continue
                idx = np.nonzero(shadow)[0]
                res2 = self._blocked_or_loss(np.broadcast_to(c, pts[idx].shape),
                                             pts[idx], True, False)
                clear = (~res2[0] & (res2[2] == 0)) if self.enable_transmission else ~res2
                leg2_d = np.linalg.norm(pts[idx] - c, axis=1)
                total = d_in + leg2_d
                okm = clear & (leg2_d > EPS) & (total <= self.max_range_m)
                if not okm.any():
                    continue
                aoa = np.degrees(np.arctan2(c[1] - pts[idx][:, 1], c[0] - pts[idx][:, 0]))
                # loss grows with the angle into the shadow, measured between
                # the arriving ray's continuation and corner->rx
                u_sb = (c - np.asarray(source, float))
                u_sb = u_sb / np.linalg.norm(u_sb)
                cosd = ((pts[idx] - c) / leg2_d[:, None]) @ u_sb
                shadow_deg = np.degrees(np.arccos(np.clip(cosd, -1.0, 1.0)))
                loss_db = self.diffraction_loss_db + self.diffraction_slope * shadow_deg
                inter = prefix + (("D", cid),)
                for r in np.nonzero(okm)[0]:
                    i = idx[r]
                    delay = total[r] / C_M_PER_NS
                    # pi phase shift at the edge
                    amp = -self._path_amp(total[r]) * coef_in \
                        * 10.0 ** (-loss_db[r] / 20.0)
                    gain = amp * self._phase(delay)
                    out[i].append(PathComponent(
                        gain=complex(gain), aoa_deg=_wrap_deg(aoa[r]),
                        aod_deg=_wrap_deg(aod), delay_ns=float(delay),
                        interactions=inter))


def _wrap_deg(a):
    return float((a + 180.0) % 360.0 - 180.0)


# ---------------------------------------------------------------------------
# functional API
# ---------------------------------------------------------------------------

def trace_link(env: Environment, tx, rx, max_reflections: int = 3,
               enable_diffraction: bool = True, **kwargs):
    """All paths between a single TX and RX."""
    tracer = ImageTracer(env, max_reflections=max_reflections,
                         enable_diffraction=enable_diffraction, **kwargs)
    return tracer.trace_points(np.asarray(tx, float), np.asarray(rx, float)[None, :])[0]


def trace_map(env: Environment, tx_id: int, grid: RxGrid, snr_db_fn,
              threshold_db: float = 5.0, cells=None, tracer: ImageTracer = None):
    """LinkRecords for grid cells (all valid cells unless `cells` given).

    snr_db_fn maps a path list to per-path best-beamformed RX SNRs in dB and
    is supplied by the caller (it needs the array model and power budget).
    """
    if tracer is None:
        tracer = ImageTracer(env)
    if cells is None:
        cells = grid.valid_cells()
    cells = np.asarray(cells)
    centers = grid.cell_center(cells[:, 0], cells[:, 1])
    path_lists = tracer.trace_points(env.tx[tx_id], centers)
    records = []
    for (ix, iy), paths in zip(cells, path_lists):
        paths = sorted(paths, key=lambda p: -abs(p.gain))[:LinkRecord.L_MAX]
        snrs = snr_db_fn(paths)
        state = label_link(paths, snrs, threshold_db)
        records.append(LinkRecord(tx_id=tx_id, rx_cell=(int(ix), int(iy)),
                                  paths=paths, true_state=state))
    return records


# ---------------------------------------------------------------------------
# path-map persistence (newline-delimited JSON)
# ---------------------------------------------------------------------------

def record_to_json(rec: LinkRecord) -> str:
    return json.dumps({
        "tx_id": rec.tx_id,
        "cell_ix": rec.rx_cell[0],
        "cell_iy": rec.rx_cell[1],
        "state": int(rec.true_state),
        "paths": [{
            "gain_db": 20.0 * math.log10(abs(p.gain)),
            "phase_rad": math.atan2(p.gain.imag, p.gain.real),
            "aoa_deg": p.aoa_deg,
            "aod_deg": p.aod_deg,
            "delay_ns": p.delay_ns,
            "order": p.order,
        } for p in rec.paths],
    })


def record_from_json(line: str) -> LinkRecord:
    d = json.loads(line)
    paths = []
    for p in d["paths"]:
        amp = 10.0 ** (p["gain_db"] / 20.0)
        gain = amp * complex(math.cos(p["phase_rad"]), math.sin(p["phase_rad"]))
        # interaction detail is not serialized; keep the order via padding
        inter = tuple(("R", -1) for _ in range(p["order"]))
        paths.append(PathComponent(gain=gain, aoa_deg=p["aoa_deg"], aod_deg=p["aod_deg"],
                                   delay_ns=p["delay_ns"], interactions=inter))
    return LinkRecord(tx_id=d["tx_id"], rx_cell=(d["cell_ix"], d["cell_iy"]),
                      paths=paths, true_state=LinkState(d["state"]))
