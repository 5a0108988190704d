import json
import logging
from typing import Any, Iterable, Iterator, List, Set

from src.errors import DisclosureError, ProtocolError
from src.protocol import KIND_VALUES, SCHEMA_KEYS

logger = logging.getLogger(__name__)


def _strings(node: Any) -> Iterator[str]:
    """Every string in free positions; schema field names and kind values are skipped."""
    if isinstance(node, str):
        yield node
    elif isinstance(node, dict):
        for k, v in node.items():
            if k not in SCHEMA_KEYS:
                yield str(k)
            elif k == "kind" and v in KIND_VALUES:
                continue
            yield from _strings(v)
    elif isinstance(node, list):
        for v in node:
            yield from _strings(v)


class DisclosureGuard:
    """
    Enforces the information-protection policy on outgoing messages:
    no string in a free position of a payload (token keys included) may be
    a surface form of the sender's entities or relations.
    """
    def __init__(self, surface_forms: Iterable[str], party: str = ""):
        self.surface_forms: Set[str] = set(surface_forms)
        self.party = party
        self.checked = 0
        shared = sorted(self.surface_forms & (SCHEMA_KEYS | KIND_VALUES))
        if shared:
            logger.warning(f"{party or 'party'}: surface forms {shared} coincide with protocol words; "
                           f"those positions are not scanned")

    def leaked(self, payload: bytes) -> List[str]:
        try:
            data = json.loads(payload.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as e:
            raise ProtocolError(f"Outgoing payload is not JSON: {e}")
        return sorted({s for s in _strings(data) if s in self.surface_forms})

    def validate_payload(self, payload: bytes, label: str) -> bytes:
        """
        Final gate before a payload leaves the party.
        Returns the payload unchanged or raises DisclosureError.
        """
        self.checked += 1
        hits = self.leaked(payload)
        if hits:
            logger.warning(f"Blocking {label} from {self.party or 'party'}: {len(hits)} surface form(s) found")
            raise DisclosureError(f"{label} would disclose {len(hits)} surface form(s), e.g. {hits[0]!r}")
        return payload
