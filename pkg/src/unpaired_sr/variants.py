"""Ablation variants: which UBCDTN components accompany the SR network."""
from __future__ import annotations

from dataclasses import dataclass

from .sesrn import SR_TERMS

COMPONENTS = ("SESRN", "G_A", "G_B", "D_B", "D_A", "FE_A", "FE_B")
B_READINGS = ("strict", "forward_cycle")


@dataclass(frozen=True)
class AblationVariant:
    id: str
    components: frozenset

    def has(self, component: str) -> bool:
        return component in self.components

    @property
    def uses_ubcdtn(self) -> bool:
        return self.has("G_A")

    @property
    def backward_module(self) -> bool:
        return self.has("G_B")


VARIANTS = {
    "A": AblationVariant("A", frozenset({"SESRN"})),
    "B": AblationVariant("B", frozenset({"SESRN", "G_A", "D_B"})),
    "C": AblationVariant("C", frozenset({"SESRN", "G_A", "G_B", "FE_B", "FE_A"})),
    "D": AblationVariant("D", frozenset({"SESRN", "G_A", "G_B", "D_B", "D_A"})),
    "E": AblationVariant("E", frozenset(COMPONENTS)),
}


def get_variant(variant_id) -> AblationVariant:
    if isinstance(variant_id, AblationVariant):
        return variant_id
    try:
        return VARIANTS[str(variant_id).upper()]
    except KeyError:
        raise ValueError(f"unknown ablation variant {variant_id!r}; expected one of {sorted(VARIANTS)}") from None


def built_networks(variant: AblationVariant, b_reading: str = "strict") -> frozenset:
    """Networks actually instantiated for ``variant``.

    Under the ``forward_cycle`` reading, variant B keeps an auxiliary
    ``G_B`` so the forward cycle and identity losses can be computed; it
    still has no backward module of its own.
    """
    if b_reading not in B_READINGS:
        raise ValueError(f"b_reading must be one of {B_READINGS}")
    nets = set(variant.components)
    if variant.id == "B" and b_reading == "forward_cycle":
        nets.add("G_B")
    return frozenset(nets)


def active_terms(variant, b_reading: str = "strict") -> frozenset:
    """Generator-side loss terms a variant optimizes."""
    variant = get_variant(variant)
    nets = built_networks(variant, b_reading)
    terms = set(SR_TERMS)
    if "G_A" in nets:
        if "D_B" in nets:
            terms.add("adv_G_A")
        if "G_B" in nets:
            terms |= {"cyc_G_B", "idt_degraded"}
            if "FE_A" in nets:
                terms.add("percep_FE_A")
    if variant.backward_module:
        if "D_A" in nets:
            terms.add("adv_G_B")
        terms |= {"cyc_G_A", "idt_real"}
        if "FE_B" in nets:
            terms.add("percep_FE_B")
    return frozenset(terms)
