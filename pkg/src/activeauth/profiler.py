"""Time-slot frequency templates for WiFi, GPS and app-usage events."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Iterable, Mapping

from .data import BehaviorEvent, ChannelId, local_date, slot_of

DEFAULT_SLOTS_PER_DAY = 48


@dataclass(frozen=True)
class BehaviorTemplate:
    channel: ChannelId
    slots_per_day: int
    # (event_id, slot) -> number of distinct training days with a detection
    entries: Mapping[tuple[str, int], int]
    n_days: int = 0
    timezone: str = "UTC"

    def frequency(self, event_id: str, slot: int) -> int:
        return self.entries.get((event_id, slot), 0)

    def to_json(self) -> dict[str, Any]:
        return {
            "channel": self.channel.value,
            "slots_per_day": self.slots_per_day,
            "n_days": self.n_days,
            "timezone": self.timezone,
            "entries": [[e, s, f] for (e, s), f in sorted(self.entries.items())],
        }

    @classmethod
    def from_json(cls, doc: Mapping[str, Any]) -> "BehaviorTemplate":
        return cls(
            channel=ChannelId.parse(doc["channel"]),
            slots_per_day=int(doc["slots_per_day"]),
            entries={(str(e), int(s)): int(f) for e, s, f in doc["entries"]},
            n_days=int(doc.get("n_days", 0)),
            timezone=doc.get("timezone", "UTC"),
        )


def build_template(
    train_events: Iterable[BehaviorEvent],
    slots_per_day: int = DEFAULT_SLOTS_PER_DAY,
    tz: str = "UTC",
    channel: ChannelId = ChannelId.APPS,
) -> BehaviorTemplate:
    """Count, per (event, slot), the distinct days the event was seen there.

    Repeats of the same event in the same slot on the same day count once.
    """
    if slots_per_day < 1:
        raise ValueError("slots_per_day must be >= 1")
    seen: set[tuple[str, int, int]] = set()
    days: set[int] = set()
    for ev in train_events:
        day = local_date(ev.timestamp, tz).toordinal()
        days.add(day)
        seen.add((ev.event_id, slot_of(ev.timestamp, slots_per_day, tz), day))
    entries: dict[tuple[str, int], int] = {}
    for event_id, slot, _ in seen:
        entries[(event_id, slot)] = entries.get((event_id, slot), 0) + 1
    return BehaviorTemplate(channel, slots_per_day, entries, n_days=len(days), timezone=tz)


def score_session(
    template: BehaviorTemplate,
    test_events: Iterable[BehaviorEvent],
    count_test_duplicates: bool = False,
) -> int:
    """Sum of squared template frequencies over matched (event, slot) pairs.

    By default each (event, slot) pair of the test session contributes once;
    ``count_test_duplicates`` adds every occurrence instead.
    """
    pairs = [(ev.event_id, slot_of(ev.timestamp, template.slots_per_day, template.timezone)) for ev in test_events]
    if not count_test_duplicates:
        pairs = list(dict.fromkeys(pairs))
    score = 0
    for pair in pairs:
        f = template.entries.get(pair, 0)
        score += f * f
    return score
