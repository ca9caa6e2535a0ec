"""Exact computational tools for p-group module theory: unipotent linear
algebra over F_p, explicit p-group enumeration, offender and characteristic
subgroup machinery, abelian-subgroup replacement engines, and a corpus of
standard instances with a reporting CLI.
"""

__version__ = "1.0"

from .errors import (
    CapExceeded,
    ClassTooHigh,
    ClosureFailure,
    DimensionMismatch,
    HypothesisFailed,
    InputFormatError,
    LogDomain,
    NoProductMaximal,
    NoQuadraticInOmega1ZN,
    NonAbelianBracket,
    NonCommutingConjugates,
    NotPGroup,
    NotUnipotent,
    OliverError,
    PreconditionFailed,
    TheoremViolation,
    UnsupportedInstance,
)
from .linalg import (
    FieldSpec,
    FpMatrix,
    Subspace,
    is_unipotent,
    kernel,
    matrix_exp,
    matrix_log,
    nilpotence_index,
    nullspace,
    row_space,
    rref,
    unipotent_index,
)
from .groups import (
    DEFAULT_CAP,
    CentralSeries,
    ExplicitGroup,
    SubgroupHandle,
    all_subgroups,
    baumann_subgroup,
    center,
    centralizer,
    close,
    commutator_subgroup,
    enumerate_abelian_subgroups,
    is_normal_in,
    iterated_bracket_is_trivial,
    lower_central_series,
    maximal_elementary_abelian,
    nilpotence_class,
    normal_closure,
    normalizer,
    omega1,
    thompson_subgroup,
    upper_central_series,
)
from .action import (
    ModuleSeries,
    Offender,
    ProductSubgroup,
    SemidirectContext,
    SeriesProfile,
    default_series,
    enumerate_A_times,
    find_offenders,
    fixed_space,
    is_ps_module,
    is_quadratic,
    module_bracket,
    ps_degree,
    select_max,
)
from .characteristic import (
    ChainVerification,
    ConjectureReport,
    JeReduction,
    MonitorOutcome,
    OliverChain,
    check_conjecture,
    class_bound,
    compute_Baum,
    compute_Je,
    compute_Xk,
    monitors_fired,
    run_monitors,
    verify_chain,
    x3_le_centralizer_of_W,
)
from .replacement import (
    DerivationData,
    DescentWitness,
    ExpansionReport,
    GlaubcorReport,
    LieRing,
    build_lie_ring,
    descent_step,
    elementary_replacement_dichotomy,
    expansion_identity,
    glauberman_replace,
    in_BA,
    normalW,
    thompson_step,
    two_subnormal_offender,
    verify_glaubcor,
)
from .corpus import (
    CORPUS,
    CandidateModule,
    InstanceSpec,
    WreathGroup,
    candidate_modules_for_wreath3,
    direct_sum_contexts,
    extraspecial_exponent_p,
    get_instance,
    instance_names,
    jordan_block_module,
    unitriangular,
    unitriangular_context,
    wreath_cp_cp,
)
