"""Single-writer file store for all persisted system state.

Layout under the store root:

    .lock                         writer ownership (pid)
    .seq                          last issued sequence number
    users/<user>/profile.json     whole-document, replaced atomically
    users/<user>/meals/<date>.log append-only meal log, one JSON line each
    users/<user>/plans/<date>.json current plan document
    users/<user>/plans/audit/     previous plan versions, bounded retention

Every mutation is serialized through one writer lock, stamped with a
monotonically increasing sequence number, and applied with write-temp +
atomic rename so readers never observe a torn document. Meal-log bytes are
never rewritten once appended.
"""

from __future__ import annotations

import datetime as dt
import hashlib
import json
import os
import threading
from pathlib import Path

from .dri import DriReference
from .errors import (
    IdempotencyError,
    IntegrityError,
    NotFoundError,
    StoreLockedError,
)
from .nutrients import NutrientSchema
from .records import DailyPlan, MealRecord, UserProfile, validate_profile

AUDIT_RETENTION = 30


class FileStateStore:
    """Sole writer and administrator of the on-disk system state."""

    _open_roots: set[Path] = set()
    _registry_lock = threading.Lock()

    def __init__(self, root: str | Path, schema: NutrientSchema, ref: DriReference,
                 audit_retention: int = AUDIT_RETENTION):
        self.root = Path(root).resolve()
        self.schema = schema
        self.ref = ref
        self.audit_retention = audit_retention
        self.root.mkdir(parents=True, exist_ok=True)
        self._mutex = threading.RLock()
        self._rename = os.replace  # patchable seam for crash-fault tests
        self._closed = False
        self._acquire_lock()
        self._seq = self._load_seq()

    # -- writer ownership ---------------------------------------------------

    def _lock_path(self) -> Path:
        return self.root / ".lock"

    def _acquire_lock(self) -> None:
        with FileStateStore._registry_lock:
            if self.root in FileStateStore._open_roots:
                raise StoreLockedError(f"store root {self.root} already has a writer")
            lock = self._lock_path()
            if lock.exists():
                try:
                    owner = int(lock.read_text().strip() or "0")
                except ValueError:
                    owner = 0
                if owner != os.getpid() and _pid_alive(owner):
                    raise StoreLockedError(
                        f"store root {self.root} is locked by live pid {owner}"
                    )
                # Stale lock from a crashed writer; safe to take over.
                lock.unlink()
            fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
            with os.fdopen(fd, "w") as f:
                f.write(str(os.getpid()))
            FileStateStore._open_roots.add(self.root)

    def close(self) -> None:
        if self._closed:
            return
        self._closed = True
        with FileStateStore._registry_lock:
            FileStateStore._open_roots.discard(self.root)
        try:
            self._lock_path().unlink()
        except FileNotFoundError:
            pass

    def __enter__(self) -> "FileStateStore":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    # -- sequence numbers ---------------------------------------------------

    def _load_seq(self) -> int:
        seq_path = self.root / ".seq"
        if seq_path.exists():
            return int(seq_path.read_text().strip() or "0")
        return 0

    def _next_seq(self) -> int:
        self._seq += 1
        self._atomic_write(self.root / ".seq", str(self._seq))
        return self._seq

    # -- low-level file ops ---------------------------------------------------

    def _atomic_write(self, path: Path, text: str) -> None:
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_name(path.name + ".tmp")
        with open(tmp, "w", encoding="utf-8") as f:
            f.write(text)
            f.flush()
            os.fsync(f.fileno())
        self._rename(tmp, path)

    def _user_dir(self, user_id: str) -> Path:
        return self.root / "users" / user_id

    def _meal_log_path(self, user_id: str, date: dt.date) -> Path:
        return self._user_dir(user_id) / "meals" / f"{date.isoformat()}.log"

    def _plan_path(self, user_id: str, date: dt.date) -> Path:
        return self._user_dir(user_id) / "plans" / f"{date.isoformat()}.json"

    # -- profiles -------------------------------------------------------------

    def write_profile(self, profile: UserProfile) -> int:
        report = validate_profile(profile, self.ref)
        if not report.ok:
            raise IntegrityError(f"invalid profile: {'; '.join(report.violations)}")
        with self._mutex:
            seq = self._next_seq()
            path = self._user_dir(profile.user_id) / "profile.json"
            self._atomic_write(path, json.dumps(profile.to_dict(), indent=2))
            return seq

    def read_profile(self, user_id: str) -> UserProfile:
        path = self._user_dir(user_id) / "profile.json"
        if not path.exists():
            raise NotFoundError(f"no profile for user {user_id!r}")
        return UserProfile.from_dict(json.loads(path.read_text()))

    def has_user(self, user_id: str) -> bool:
        return (self._user_dir(user_id) / "profile.json").exists()

    # -- meal log -------------------------------------------------------------

    def append_meal(self, record: MealRecord) -> int:
        try:
            tz = self.read_profile(record.user_id).tzinfo()
        except NotFoundError:
            tz = None
        record.validate(tz)
        with self._mutex:
            existing = {m.meal_id for m in self.read_meals(record.user_id, record.date)}
            if record.meal_id in existing:
                raise IdempotencyError(
                    f"meal {record.meal_id} already logged for "
                    f"{record.user_id}/{record.date}"
                )
            seq = self._next_seq()
            doc = record.to_dict()
            doc["seq"] = seq
            line = json.dumps(doc) + "\n"
            path = self._meal_log_path(record.user_id, record.date)
            path.parent.mkdir(parents=True, exist_ok=True)
            with open(path, "a", encoding="utf-8") as f:
                f.write(line)
                f.flush()
                os.fsync(f.fileno())
            return seq

    def read_meals(self, user_id: str, date: dt.date) -> list[MealRecord]:
        path = self._meal_log_path(user_id, date)
        if not path.exists():
            return []
        records: list[MealRecord] = []
        lines = path.read_text().splitlines()
        for i, line in enumerate(lines):
            if not line.strip():
                continue
            try:
                doc = json.loads(line)
            except json.JSONDecodeError:
                if i == len(lines) - 1:
                    # Torn final append from a crash; the write never completed.
                    continue
                raise IntegrityError(f"corrupt meal log line {i + 1} in {path}")
            records.append(MealRecord.from_dict(self.schema, doc))
        return records

    # -- plans ------------------------------------------------------------------

    def update_plan_status(self, plan: DailyPlan) -> int:
        if not plan.identity_holds():
            raise IntegrityError(
                "plan rejected: remaining != targets - consumed for "
                f"{plan.user_id}/{plan.date}"
            )
        with self._mutex:
            seq = self._next_seq()
            path = self._plan_path(plan.user_id, plan.date)
            doc = json.dumps(plan.to_dict(), indent=2)
            self._atomic_write(path, doc)
            audit_dir = path.parent / "audit"
            audit_dir.mkdir(parents=True, exist_ok=True)
            (audit_dir / f"{plan.date.isoformat()}.{seq:08d}.json").write_text(doc)
            self._prune_audit(audit_dir, plan.date)
            return seq

    def _prune_audit(self, audit_dir: Path, date: dt.date) -> None:
        snapshots = sorted(audit_dir.glob(f"{date.isoformat()}.*.json"))
        for old in snapshots[: -self.audit_retention]:
            old.unlink()

    def read_plan(self, user_id: str, date: dt.date) -> DailyPlan:
        path = self._plan_path(user_id, date)
        if not path.exists():
            raise NotFoundError(f"no plan for {user_id!r} on {date.isoformat()}")
        return DailyPlan.from_dict(self.schema, json.loads(path.read_text()))

    def has_plan(self, user_id: str, date: dt.date) -> bool:
        return self._plan_path(user_id, date).exists()

    def list_plan_dates(self, user_id: str) -> list[dt.date]:
        plans_dir = self._user_dir(user_id) / "plans"
        if not plans_dir.exists():
            return []
        return sorted(
            dt.date.fromisoformat(p.stem) for p in plans_dir.glob("*.json")
        )

    def read_day_summary(self, user_id: str, date: dt.date) -> tuple[DailyPlan, list[MealRecord]]:
        """Snapshot-consistent (plan, meals) pair for one day."""
        with self._mutex:
            plan = self.read_plan(user_id, date)
            meals = self.read_meals(user_id, date)
            return plan, meals

    # -- image blobs ------------------------------------------------------------

    def put_blob(self, data: bytes) -> str:
        """Store an uploaded image under its content address (idempotent)."""
        ref = "blob-" + hashlib.sha256(data).hexdigest()[:16]
        path = self.root / "blobs" / ref
        if not path.exists():
            with self._mutex:
                path.parent.mkdir(parents=True, exist_ok=True)
                tmp = path.with_name(path.name + ".tmp")
                tmp.write_bytes(data)
                self._rename(tmp, path)
        return ref

    def get_blob(self, ref: str) -> bytes | None:
        path = self.root / "blobs" / ref
        if not path.exists():
            return None
        return path.read_bytes()


def _pid_alive(pid: int) -> bool:
    if pid <= 0:
        return False
    try:
        os.kill(pid, 0)
    except ProcessLookupError:
        return False
    except PermissionError:
        return True
    return True
