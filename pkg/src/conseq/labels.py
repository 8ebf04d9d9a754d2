"""The five consequence categories, in their fixed reporting order."""

LABELS = ("availability", "access_control", "confidentiality", "integrity", "other")
LABEL_TITLES = ("Availability", "Access Control", "Confidentiality", "Integrity", "Other")
NUM_LABELS = len(LABELS)

# Scope strings that map onto a named category (compared case-insensitively).
# Every other non-empty scope falls into "other".
NAMED_SCOPES = {
    "availability": "availability",
    "access control": "access_control",
    "confidentiality": "confidentiality",
    "integrity": "integrity",
}
