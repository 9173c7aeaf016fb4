"""Signature volatility models: weighted tensor algebra, Brownian signatures,
stochastic-exponential simulation, Riccati transform flows and GKW hedging."""

from .algebra import (
    DualElement,
    GradedTensor,
    Weight,
    Word,
    antipode,
    concat_product,
    dual_pairing,
    format_tensor,
    format_word,
    parse_tensor,
    parse_word,
    project_leq,
    shuffle_product,
    weight_check,
    weighted_norms,
)
from .hedging import (
    DegenerateGram,
    GKWResult,
    HedgeBasis,
    build_design,
    depth_scan,
    gkw_project,
    kappa_tail,
    payoff,
    simulate_hedge_dataset,
)
from .models import ModelPreset, kernel_expansion, preset
from .riccati import (
    FlowOutcome,
    GeneratorTable,
    RiccatiExplosion,
    RiccatiState,
    build_generator,
    integrate_flow,
    mc_transform,
    projection_compatibility,
    riccati_rhs,
    scalar_explosion_bound,
    transform_value,
)
from .sde import (
    PriceBatch,
    PricePath,
    SigVolParams,
    check_H1,
    estimate_H3,
    martingale_check,
    simulate_price,
    volatility_path,
)
from .signature import (
    BatchSignature,
    BrownianBatch,
    PathGrid,
    SignatureStream,
    load_paths,
    moment_bound,
    save_paths,
    segment_exponential,
    signature_of_function,
    signature_piecewise_linear,
    simulate_brownian_grid,
)

__version__ = "0.1.0"
