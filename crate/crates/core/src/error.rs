use thiserror::Error;

/// Failure modes shared by every stage of the simulator and the inversion.
#[derive(Debug, Error)]
pub enum Error {
    #[error("frequency {omega} outside tabulated band [{lo}, {hi}]")]
    OutOfBand { omega: f64, lo: f64, hi: f64 },
    #[error("square root branch ambiguous: 1 + chi = {0} lies on the negative real axis")]
    BranchAmbiguity(num_complex::Complex64),
    #[error("degenerate background: 1 + chi vanishes")]
    DegenerateBackground,
    #[error("degenerate interface: n_a + n_b vanishes")]
    DegenerateInterface,
    #[error("two-port series diverges: |r_b r_t p^2| = {ratio}")]
    SeriesDiverges { ratio: f64 },
    #[error("series did not reach tolerance within {terms} terms")]
    MaxTermsExceeded { terms: usize },
    #[error("geometry violated: {0}")]
    GeometryViolated(String),
    #[error("pole hit: compressed index equals the negative of its neighbour")]
    PoleHit,
    #[error("boundary ordering violated at delta = {delta}: {detail}")]
    OrderingViolated { delta: f64, detail: String },
    #[error("Green's function evaluated at the origin")]
    OriginSingularity,
    #[error("observation point lies inside a scattering ball")]
    InsideBall,
    #[error("reference fields are collinear with the origin")]
    CollinearReferences,
    #[error("intensities are inconsistent: circle residual {residual:e} exceeds {tol:e}")]
    InconsistentIntensities { residual: f64, tol: f64 },
    #[error("incident spectrum vanishes at omega = {omega}")]
    ZeroSpectrum { omega: f64 },
    #[error("time gating requires a uniform frequency grid")]
    NonuniformGrid,
    #[error("time gating requires at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("Moebius lift degenerate: no index contrast and no compression rate")]
    DegenerateLift,
    #[error("phase unwrapping aliased: 2 d_omega z_max / c = {0} >= pi")]
    UnwrapAliased(f64),
    #[error("no frequency with Im n' > 0; decay-order hypothesis violated")]
    DecayHypothesisViolated,
    #[error("iteration did not converge: {0}")]
    NoConvergence(String),
    #[error("contrast assumption fails: n'/n = nu'/nu")]
    ContrastDegenerate,
    #[error("non-physical density {0}")]
    NonPhysicalDensity(num_complex::Complex64),
    #[error("recovered sublayer does not shrink under compression (Z' = {bottom_rate}, zeta' = {top_rate})")]
    ShrinkConditionViolated { top_rate: f64, bottom_rate: f64 },
    #[error("gating windows overlap: {0}")]
    GatingOverlap(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Short machine-readable tag, used by the command line front end.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::OutOfBand { .. } => "OutOfBand",
            Error::BranchAmbiguity(_) => "BranchAmbiguity",
            Error::DegenerateBackground => "DegenerateBackground",
            Error::DegenerateInterface => "DegenerateInterface",
            Error::SeriesDiverges { .. } => "SeriesDiverges",
            Error::MaxTermsExceeded { .. } => "MaxTermsExceeded",
            Error::GeometryViolated(_) => "GeometryViolated",
            Error::PoleHit => "PoleHit",
            Error::OrderingViolated { .. } => "OrderingViolated",
            Error::OriginSingularity => "OriginSingularity",
            Error::InsideBall => "InsideBall",
            Error::CollinearReferences => "CollinearReferences",
            Error::InconsistentIntensities { .. } => "InconsistentIntensities",
            Error::ZeroSpectrum { .. } => "ZeroSpectrum",
            Error::NonuniformGrid => "NonuniformGrid",
            Error::TooFewSamples { .. } => "TooFewSamples",
            Error::DegenerateLift => "DegenerateLift",
            Error::UnwrapAliased(_) => "UnwrapAliased",
            Error::DecayHypothesisViolated => "DecayHypothesisViolated",
            Error::NoConvergence(_) => "NoConvergence",
            Error::ContrastDegenerate => "ContrastDegenerate",
            Error::NonPhysicalDensity(_) => "NonPhysicalDensity",
            Error::ShrinkConditionViolated { .. } => "ShrinkConditionViolated",
            Error::GatingOverlap(_) => "GatingOverlap",
            Error::InvalidInput(_) => "InvalidInput",
            Error::Io(_) => "Io",
            Error::Json(_) => "Json",
            Error::Csv(_) => "Csv",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
