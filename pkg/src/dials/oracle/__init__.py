from .model import (
    StructureError,
    TabularFposg,
    Variable,
    coupled_toy,
    independent_toy,
    load_model,
    random_toy,
    save_model,
)
from .policies import (
    JointPolicy,
    RandomHistoryPolicy,
    RandomReactivePolicy,
    UniformPolicy,
)
from .influence import (
    ExactInfluence,
    UnreachableHistory,
    brute_force_influence,
    compute_exact_influence,
    mc_influence_frequencies,
    random_influence_like,
)
from .qvalue import IalmTree, compute_exact_q, influence_distance
from .verify import (
    verify_corollary1,
    verify_lemma1,
    verify_lemma2,
    verify_lemma_a3,
    verify_theorem2,
)

__all__ = [name for name in dir() if not name.startswith("_")]
