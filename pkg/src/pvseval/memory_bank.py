"""Per-object streaming memory.

Three FIFOs: recent unprompted frame memories (capacity N), prompted frame
memories (capacity M, the first prompted entry is pinned and never evicted),
and object pointers (capacity N + M). Features and pointer vectors are
opaque to the bank.
"""
from __future__ import annotations

import base64
import json
from collections import deque
from dataclasses import dataclass

import numpy as np

from .mask_core import RleMask
from .prompt_sim import Prompt


@dataclass(frozen=True)
class MemoryEntry:
    frame_idx: int
    mask: RleMask
    feature: np.ndarray | None = None
    occluded: bool = False
    is_prompted: bool = False
    prompts: tuple = ()

    def __post_init__(self):
        if self.frame_idx < 0:
            raise ValueError("frame_idx must be >= 0")
        if self.is_prompted and not self.prompts:
            raise ValueError("a prompted memory must carry its prompts")


@dataclass(frozen=True)
class ObjectPointer:
    frame_idx: int
    vector: np.ndarray


@dataclass(frozen=True)
class ConditioningSet:
    prompted: list[MemoryEntry]
    recent: list[tuple[MemoryEntry, int]]  # (entry, temporal offset)
    pointers: list[ObjectPointer]

    def __len__(self) -> int:
        return len(self.prompted) + len(self.recent)

    def entries(self) -> list[MemoryEntry]:
        return list(self.prompted) + [e for e, _ in self.recent]


class MemoryBank:
    def __init__(self, n_recent: int = 6, n_prompted: int = 8, pointer_dim: int | None = None):
        if n_recent < 1 or n_prompted < 1:
            raise ValueError("capacities must be >= 1")
        self.n_recent = n_recent
        self.n_prompted = n_prompted
        self.pointer_dim = pointer_dim
        self.recent: deque[MemoryEntry] = deque()
        self.prompted: deque[MemoryEntry] = deque()
        self.pointers: deque[ObjectPointer] = deque()
        self.pinned: int | None = None  # frame index of the pinned prompted entry

    @property
    def pointer_capacity(self) -> int:
        return self.n_recent + self.n_prompted

    def _push_pointer(self, pointer: ObjectPointer | None) -> None:
        if pointer is None:
            return
        dim = int(np.asarray(pointer.vector).size)
        if self.pointer_dim is None:
            self.pointer_dim = dim
        elif dim != self.pointer_dim:
            raise ValueError(f"pointer dim {dim} != bank pointer dim {self.pointer_dim}")
        self.pointers.append(pointer)
        while len(self.pointers) > self.pointer_capacity:
            self.pointers.popleft()

    def push_unprompted(self, entry: MemoryEntry, pointer: ObjectPointer | None = None) -> "MemoryBank":
        if entry.is_prompted:
            raise ValueError("push_unprompted got a prompted entry")
        self.recent.append(entry)
        while len(self.recent) > self.n_recent:
            self.recent.popleft()
        self._push_pointer(pointer)
        return self

    def push_prompted(self, entry: MemoryEntry, pointer: ObjectPointer | None = None) -> "MemoryBank":
        """Store a prompted memory.

        A second prompted memory for a frame already held replaces it in
        place (refinement of the same frame).
        """
        if not entry.is_prompted:
            raise ValueError("push_prompted got an unprompted entry")
        for i, held in enumerate(self.prompted):
            if held.frame_idx == entry.frame_idx:
                self.prompted[i] = entry
                self._push_pointer(pointer)
                return self
        if self.pinned is None:
            self.pinned = entry.frame_idx
        self.prompted.append(entry)
        if len(self.prompted) > self.n_prompted:
            for i, held in enumerate(self.prompted):
                if held.frame_idx != self.pinned:
                    del self.prompted[i]
                    break
        self._push_pointer(pointer)
        return self

    def context_for(self, current_frame: int) -> ConditioningSet:
        prompted = sorted(self.prompted, key=lambda e: e.frame_idx)
        recent = [(e, current_frame - e.frame_idx) for e in reversed(self.recent)]
        return ConditioningSet(prompted, recent, list(self.pointers))

    def __len__(self) -> int:
        return len(self.recent) + len(self.prompted)

    # snapshot / restore

    def snapshot(self) -> dict:
        return {
            "n_recent": self.n_recent,
            "n_prompted": self.n_prompted,
            "pointer_dim": self.pointer_dim,
            "pinned": self.pinned,
            "recent": [_entry_json(e) for e in self.recent],
            "prompted": [_entry_json(e) for e in self.prompted],
            "pointers": [
                {"frame": p.frame_idx, "vector": _encode_array(p.vector)} for p in self.pointers
            ],
        }

    def snapshot_bytes(self) -> bytes:
        return json.dumps(self.snapshot(), sort_keys=True, separators=(",", ":")).encode()

    @classmethod
    def restore(cls, snap: dict) -> "MemoryBank":
        bank = cls(snap["n_recent"], snap["n_prompted"], snap["pointer_dim"])
        bank.pinned = snap["pinned"]
        bank.recent.extend(_entry_from_json(e) for e in snap["recent"])
        bank.prompted.extend(_entry_from_json(e) for e in snap["prompted"])
        bank.pointers.extend(
            ObjectPointer(p["frame"], _decode_array(p["vector"])) for p in snap["pointers"]
        )
        return bank


def _encode_array(a: np.ndarray | None) -> dict | None:
    if a is None:
        return None
    a = np.ascontiguousarray(a)
    return {
        "dtype": a.dtype.str,
        "shape": list(a.shape),
        "b64": base64.b64encode(a.tobytes()).decode("ascii"),
    }


def _decode_array(obj: dict | None) -> np.ndarray | None:
    if obj is None:
        return None
    raw = base64.b64decode(obj["b64"])
    return np.frombuffer(raw, dtype=np.dtype(obj["dtype"])).reshape(obj["shape"]).copy()


def _entry_json(e: MemoryEntry) -> dict:
    return {
        "frame": e.frame_idx,
        "mask": e.mask.to_json(),
        "feature": _encode_array(e.feature),
        "occluded": e.occluded,
        "prompted": e.is_prompted,
        "prompts": [p.to_json(0) for p in e.prompts],
    }


def _entry_from_json(obj: dict) -> MemoryEntry:
    return MemoryEntry(
        frame_idx=obj["frame"],
        mask=RleMask.from_json(obj["mask"]),
        feature=_decode_array(obj["feature"]),
        occluded=obj["occluded"],
        is_prompted=obj["prompted"],
        prompts=tuple(Prompt.from_json(p)[0] for p in obj["prompts"]),
    )
