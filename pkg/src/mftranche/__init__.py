"""Multi-factor credit-correlation engine for portfolio tranche pricing and risk.

Builds arbitrage-free expected-tranche-loss curves for bespoke credit
portfolios from per-index market factors: each factor's marginal law is
calibrated to that index's tranche ETLs, factors are coupled by a Gaussian
copula, and every issuer links to the factors through a calibrated
conditional default probability.  Pricing runs a low-dimensional
semi-analytic Monte Carlo with pathwise single-name deltas, an exact
comonotone control variate, fixed-recovery handling and a two-pass
cross-currency adjustment; a full default-time simulation ships as the
validation oracle.
"""

__version__ = "0.2.0"

from .calibration import (CalibConfig, CalibrationReport, EtlTargetSurface,
                          InfeasibleTargetsError, calibrate_marginals, model_etl_grid)
from .factors import (ComonotoneReduction, FactorCopula, FactorDraw, MarginalFactorLaw,
                      comonotone_path, default_support, expectation, joint_atoms,
                      reduce_if_comonotone, sample_joint)
from .linkage import (CalibrationError, LinkageCalibration, LinkageSpec, calibrate_b,
                      conditional_default_probability, idiosyncratic_factor,
                      systemic_fraction)
from .loss import (ConditionalMoments, SubPortfolioCache, aggregate_moments, build_cache,
                   conditional_moments, normal_etl)
from .market import (Constituent, CreditCurve, EtlCurve, Portfolio, RecoverySpec,
                     TrancheSpec, cumulative_hazard, default_probability,
                     portfolio_expected_loss, quarterly_grid)
from .model import PricingModel
from .oracle import DefaultScenario, etl_from_scenarios, oracle_etl, simulate_scenarios
from .pricer import (DeltaReport, IndexDelta, SamcConfig, comonotone_etl_exact,
                     index_model_delta, pathwise_single_name_deltas, price_etl_curve,
                     price_fixed_recovery, price_with_control_variate)
from .quanto import (FxSpec, LossGapLaw, QuantoResult, build_loss_gap_law,
                     conditional_loss_gap, quanto_etl)
