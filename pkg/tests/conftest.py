"""Shared fixtures and brute-force reference implementations.

The brute-force helpers here are deliberately naive and share no code with
the package, so they can serve as independent oracles.
"""
import math
from collections import deque

import numpy as np
import pytest


def brute_edt(m: np.ndarray) -> np.ndarray:
    """Distance to the nearest background pixel, off-image pixels included."""
    h, w = m.shape
    out = np.zeros((h, w))
    bg = [(r, c) for r in range(h) for c in range(w) if not m[r, c]]
    for r in range(h):
        for c in range(w):
            if not m[r, c]:
                continue
            # nearest off-image pixel is straight across the nearest border
            best = min(r + 1, c + 1, h - r, w - c)
            for br, bc in bg:
                d = math.hypot(r - br, c - bc)
                if d < best:
                    best = d
            out[r, c] = best
    return out


def exhaustive_edt(m: np.ndarray) -> np.ndarray:
    """Same answer as ``brute_edt``, vectorised.

    Nearest background in each column by exhaustive row search, then an
    exhaustive search over columns. The off-image ring is background.
    """
    h, w = m.shape
    bg = np.pad(~m, 1, constant_values=True)  # (h+2, w+2), index shifted by 1
    rows = np.arange(-1, h + 1)
    # col_gap[r, c'] = min |r - r'| over background r' in padded column c'
    dr = np.abs(np.arange(h)[:, None] - rows[None, :])  # (h, h+2)
    gap = np.where(bg.T[None, :, :], dr[:, None, :], 10 ** 6).min(axis=2)  # (h, w+2)
    cols = np.arange(-1, w + 1)
    dc = (np.arange(w)[:, None] - cols[None, :]) ** 2  # (w, w+2)
    d2 = (dc[None, :, :] + gap[:, None, :] ** 2).min(axis=2)
    return np.where(m, np.sqrt(d2.astype(np.float64)), 0.0)


def brute_boundary(m: np.ndarray) -> list[tuple[int, int]]:
    h, w = m.shape
    pts = []
    for r in range(h):
        for c in range(w):
            if not m[r, c]:
                continue
            for dr, dc in ((-1, 0), (1, 0), (0, -1), (0, 1)):
                rr, cc = r + dr, c + dc
                if not (0 <= rr < h and 0 <= cc < w) or not m[rr, cc]:
                    pts.append((r, c))
                    break
    return pts


def brute_boundary_f(pred, gt, tol) -> float:
    pb = np.array(brute_boundary(pred), dtype=float).reshape(-1, 2)
    gb = np.array(brute_boundary(gt), dtype=float).reshape(-1, 2)
    if len(pb) == 0 and len(gb) == 0:
        return 1.0
    if len(pb) == 0 or len(gb) == 0:
        return 0.0
    d = np.sqrt(((pb[:, None, :] - gb[None, :, :]) ** 2).sum(-1))
    precision = np.mean(d.min(axis=1) <= tol)
    recall = np.mean(d.min(axis=0) <= tol)
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


def brute_components(m: np.ndarray, connectivity: int = 8) -> list[set]:
    """Flood-fill components, in row-major order of their first pixel."""
    h, w = m.shape
    if connectivity == 8:
        steps = [(dr, dc) for dr in (-1, 0, 1) for dc in (-1, 0, 1) if (dr, dc) != (0, 0)]
    else:
        steps = [(-1, 0), (1, 0), (0, -1), (0, 1)]
    seen = np.zeros_like(m, dtype=bool)
    comps = []
    for r in range(h):
        for c in range(w):
            if m[r, c] and not seen[r, c]:
                comp = set()
                q = deque([(r, c)])
                seen[r, c] = True
                while q:
                    pr, pc = q.popleft()
                    comp.add((pr, pc))
                    for dr, dc in steps:
                        rr, cc = pr + dr, pc + dc
                        if 0 <= rr < h and 0 <= cc < w and m[rr, cc] and not seen[rr, cc]:
                            seen[rr, cc] = True
                            q.append((rr, cc))
                comps.append(comp)
    return comps


def random_mask(rng: np.random.Generator, h: int, w: int) -> np.ndarray:
    """Random blobby mask: thresholded smoothed noise, sometimes empty/full."""
    kind = rng.integers(10)
    if kind == 0:
        return np.zeros((h, w), bool)
    if kind == 1:
        return np.ones((h, w), bool)
    noise = rng.random((h + 4, w + 4))
    smooth = sum(
        noise[i:i + h, j:j + w] for i in range(3) for j in range(3)
    ) / 9
    return smooth > rng.uniform(0.35, 0.65)


def block(h, w, r0, c0, r1, c1):
    m = np.zeros((h, w), bool)
    m[r0:r1, c0:c1] = True
    return m


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


class RefBank:
    """List-based model of the memory bank, holding frame indices only."""

    def __init__(self, n_recent, n_prompted):
        self.n_recent, self.n_prompted = n_recent, n_prompted
        self.recent, self.prompted, self.pointers = [], [], []
        self.pinned = None

    def push_unprompted(self, t):
        self.recent = (self.recent + [t])[-self.n_recent:]
        self.pointers = (self.pointers + [t])[-(self.n_recent + self.n_prompted):]

    def push_prompted(self, t):
        if t not in self.prompted:
            if self.pinned is None:
                self.pinned = t
            self.prompted.append(t)
            if len(self.prompted) > self.n_prompted:
                victim = next(f for f in self.prompted if f != self.pinned)
                self.prompted.remove(victim)
        self.pointers = (self.pointers + [t])[-(self.n_recent + self.n_prompted):]


def run_bank_interleaving(rng, n_ops, n_recent, n_prompted):
    """Drive the real bank and the model with the same random pushes.

    Returns the number of invariant violations observed.
    """
    from pvseval.mask_core import RleMask
    from pvseval.memory_bank import MemoryBank, MemoryEntry, ObjectPointer
    from pvseval.prompt_sim import Click, Prompt

    bank = MemoryBank(n_recent, n_prompted)
    ref = RefBank(n_recent, n_prompted)
    mask = RleMask(1, 1, (1,))
    violations = 0
    for t in range(n_ops):
        ptr = ObjectPointer(t, np.zeros(4))
        if rng.random() < 0.2:
            # revisit an earlier frame now and then to exercise replacement
            f = int(rng.integers(0, t + 1)) if rng.random() < 0.3 else t
            entry = MemoryEntry(f, mask, is_prompted=True, prompts=(Prompt(f, Click(0, 0)),))
            bank.push_prompted(entry, ObjectPointer(f, np.zeros(4)))
            ref.push_prompted(f)
        else:
            bank.push_unprompted(MemoryEntry(t, mask), ptr)
            ref.push_unprompted(t)
        got_recent = [e.frame_idx for e in bank.recent]
        got_prompted = [e.frame_idx for e in bank.prompted]
        got_ptr = [p.frame_idx for p in bank.pointers]
        ok = (
            got_recent == ref.recent
            and got_prompted == ref.prompted
            and got_ptr == ref.pointers
            and len(got_recent) <= n_recent
            and len(got_prompted) <= n_prompted
            and len(got_ptr) <= n_recent + n_prompted
            and (ref.pinned is None or ref.pinned in got_prompted)
            and bank.pinned == ref.pinned
        )
        violations += not ok
    return violations


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
