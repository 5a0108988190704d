import json
import logging
import os
from datetime import datetime
from typing import Dict, Any, Optional

logger = logging.getLogger(__name__)

class AuditLogger:
    def __init__(self, log_file: str = "audit_log.jsonl"):
        self.log_file = log_file

    @classmethod
    def in_workdir(cls, workdir: str) -> "AuditLogger":
        os.makedirs(workdir, exist_ok=True)
        return cls(os.path.join(workdir, "audit_log.jsonl"))

    def log_event(self, stage: str, party: Optional[str] = None, details: Optional[Dict[str, Any]] = None,
                  status: str = "ok"):
        """
        Log an event to the audit log file (JSONL format).
        """
        entry = {
            "timestamp": datetime.now().isoformat(),
            "stage": stage,
            "party": party,
            "details": details or {},
            "status": status
        }

        try:
            with open(self.log_file, 'a', encoding="utf-8") as f:
                f.write(json.dumps(entry, default=str) + "\n")
        except Exception as e:
            logger.error(f"Failed to write to audit log: {e}")
