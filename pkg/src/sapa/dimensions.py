"""Canonical names for the seven latent attitudes and their trip-context pairings."""

LATENT_DIMENSIONS = (
    "time_sensitivity",
    "cost_sensitivity",
    "tech_affinity",
    "pro_car_attitude",
    "environmental_concern",
    "convenience_comfort",
    "spontaneity",
)

# Display names as they appear in the scoring prompt, in prompt order.
PROMPT_NAMES = {
    "time_sensitivity": "Time Sensitivity",
    "cost_sensitivity": "Cost Sensitivity",
    "tech_affinity": "Tech Affinity",
    "pro_car_attitude": "Pro Car Attitude",
    "environmental_concern": "Environmental Concern",
    "convenience_comfort": "Convenience/Comfort Seeking",
    "spontaneity": "Spontaneity",
}

# Alternate spellings seen in tables/definitions and in model outputs.
_ALIASES = {
    "time_sensitivity": ["Time Sensitivity", "time sensitivity", "time_sensitivity"],
    "cost_sensitivity": ["Cost Sensitivity", "cost_sensitivity"],
    "tech_affinity": ["Tech Affinity", "Technology Affinity", "tech_affinity", "technology_affinity"],
    "pro_car_attitude": ["Pro Car Attitude", "Pro-Car Attitude", "Pro‐Car Attitude", "pro_car_attitude", "pro_car"],
    "environmental_concern": ["Environmental Concern", "environmental_concern"],
    "convenience_comfort": [
        "Convenience/Comfort Seeking",
        "Convenience & Comfort",
        "Convenience and Comfort",
        "convenience_comfort",
        "convenience_comfort_seeking",
    ],
    "spontaneity": ["Spontaneity", "spontaneity"],
}


def _norm(name):
    return "".join(ch for ch in name.lower() if ch.isalnum())


ALIAS_TO_KEY = {_norm(alias): key for key, aliases in _ALIASES.items() for alias in aliases}


def canonical_dimension(name):
    """Map any known spelling of a dimension to its canonical key, else None."""
    return ALIAS_TO_KEY.get(_norm(str(name)))


# (interaction column, latent dimension, trip operand)
INTERACTIONS = (
    ("interaction_time", "time_sensitivity", "traveltime"),
    ("interaction_cost", "cost_sensitivity", "fare"),
    ("interaction_procar", "pro_car_attitude", "household_vehicles"),
    ("interaction_convenience", "convenience_comfort", "distance"),
    ("interaction_env", "environmental_concern", "is_mandatory"),
    ("interaction_spont", "spontaneity", "is_weekend"),
)
INTERACTION_COLUMNS = tuple(name for name, _, _ in INTERACTIONS)
PROPENSITY_COLUMN = "propensity_score"

FEATURE_CATEGORIES = ("observables", "propensity", "latent", "interactions")


def feature_category(column):
    if column == PROPENSITY_COLUMN:
        return "propensity"
    if column in LATENT_DIMENSIONS:
        return "latent"
    if column in INTERACTION_COLUMNS:
        return "interactions"
    return "observables"
