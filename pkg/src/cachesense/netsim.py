"""In-process network simulator for cache-to-cache message exchange.

Synchronous rounds with barrier semantics: every directed neighbor edge must
carry exactly one message per round, delivery is lossless and in order, and
every scalar moved is accounted for. The full-consensus payload (ambient
dimension N*W) is kept alongside so reports can state the saving from
exchanging anchor observations only.
"""

from __future__ import annotations

from dataclasses import dataclass, field


class ProtocolError(RuntimeError):
    """A round violated the exchange protocol (missing or stray message)."""


@dataclass
class MessageLog:
    full_payload: int
    entries: list = field(default_factory=list)  # (round, sender, receiver, scalars)
    rounds: int = 0
    total_messages: int = 0
    total_scalars: int = 0

    def record_round(self, messages):
        for (sender, receiver), payload in sorted(messages.items()):
            self.entries.append((self.rounds, sender, receiver, payload.size))
            self.total_messages += 1
            self.total_scalars += payload.size
        self.rounds += 1

    def rows(self):
        """Per-message rows (round, sender, receiver, scalars) for export."""
        return list(self.entries)


@dataclass
class CacheNetwork:
    layout: object
    full_payload: int

    def __post_init__(self):
        self.log = MessageLog(full_payload=self.full_payload)
        self._edges = {
            (c, int(cp))
            for c in range(self.layout.n_caches)
            for cp in self.layout.neighbors[c]
        }

    def exchange_round(self, outboxes):
        """Deliver one synchronous round.

        outboxes maps (sender, receiver) to a payload vector; exactly the
        directed neighbor edges must be present. Returns the inbox view keyed
        (receiver, sender) with the payload arrays passed through unchanged.
        """
        sent = set(outboxes)
        missing = self._edges - sent
        if missing:
            raise ProtocolError(f"missing messages for edges {sorted(missing)}")
        stray = sent - self._edges
        if stray:
            raise ProtocolError(f"messages for non-neighbor edges {sorted(stray)}")
        self.log.record_round(outboxes)
        return {(receiver, sender): v for (sender, receiver), v in outboxes.items()}


def comm_report(log):
    """Totals plus the reduction ratio against full-consensus exchange."""
    full_total = log.total_messages * log.full_payload
    ratio = full_total / log.total_scalars if log.total_scalars else None
    return {
        "rounds": log.rounds,
        "messages": log.total_messages,
        "scalars_total": log.total_scalars,
        "full_consensus_scalars": full_total,
        "reduction_ratio": ratio,
    }
