"""privlm: identifier blacklists from multi-patient text, privacy-preserving
masked/causal language-modeling plans, a tiny trainable language model with
exact gradients, and audits for identifier regurgitation and membership
inference, all at desk scale.
"""

from .corpus import Corpus, Document, Vocabulary, build_vocabulary, ingest_corpus, segment, tokenize
from .identify import (
    Blacklist,
    DirectTag,
    IdentifierCategory,
    TaggerRules,
    build_bipartite_graph,
    build_blacklist,
    identifier_stats,
    indirect_identifiers,
    pseudonymize,
    tag_direct,
)
from .maskplan import MaskPlan, Objective, Protection, Scheme, apply_plan, plan_causal, plan_masked
from .tinylm import Checkpoint, ModelConfig, TrainConfig, generate, grad_check, init_model, predict_masked, train
from .evalmetrics import audit_causal, audit_masked, bleu, privacy_scores, rouge
from .attacks import MembershipSplit, identifier_mia, k_extractability, loss_mia, roc_curve
from .synthcorpus import SynthSpec
from .synthcorpus import generate as generate_synthetic_corpus

__version__ = "0.1.0"
