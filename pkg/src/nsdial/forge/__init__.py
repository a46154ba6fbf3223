"""Synthetic dialogue datasets and unseen-entity splits."""

from .generator import (
    Audit,
    Dataset,
    Dialogue,
    DomainSpec,
    ForgeError,
    InfeasibleHopMix,
    QATemplate,
    Turn,
    World,
    audit_dialogues,
    base_kb,
    build_world,
    entity_types,
    extend_kb_with_hierarchy,
    generate_dataset,
    instantiate_template,
    load_domains,
    load_places,
    load_templates,
    pronominalize,
    sample_skeleton,
)
from .split import UnreachableOverlap, UnseenSplit, entity_overlap, make_unseen_split, response_entities

__all__ = [
    "Audit", "Dataset", "Dialogue", "DomainSpec", "ForgeError", "InfeasibleHopMix", "QATemplate", "Turn",
    "World", "audit_dialogues", "base_kb", "build_world", "entity_types", "extend_kb_with_hierarchy",
    "generate_dataset", "instantiate_template", "load_domains", "load_places", "load_templates",
    "pronominalize", "sample_skeleton", "UnreachableOverlap", "UnseenSplit", "entity_overlap", "make_unseen_split",
    "response_entities",
]
