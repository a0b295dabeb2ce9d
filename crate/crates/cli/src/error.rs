use thiserror::Error;

/// Process exit codes.
pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad flags or configuration; nothing was computed.
    #[error("configuration error: {0}")]
    Usage(String),
    /// Missing or malformed input, or an unwritable output.
    #[error("data error: {0}")]
    Data(String),
    /// A solver failed on well-formed input.
    #[error("numeric failure: {0}")]
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Data(_) => EXIT_DATA,
            CliError::Numeric(_) => EXIT_NUMERIC,
        }
    }
}

impl From<spinekin::io::IoError> for CliError {
    fn from(e: spinekin::io::IoError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<spinekin::skeleton::SkeletonError> for CliError {
    fn from(e: spinekin::skeleton::SkeletonError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<spinekin::synth::SynthError> for CliError {
    fn from(e: spinekin::synth::SynthError) -> Self {
        use spinekin::synth::SynthError;
        match e {
            SynthError::InvalidScenario(_) | SynthError::AmplitudeExceedsLimits { .. } => {
                CliError::Usage(e.to_string())
            }
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<spinekin::ik::IkError> for CliError {
    fn from(e: spinekin::ik::IkError) -> Self {
        use spinekin::ik::IkError;
        match e {
            IkError::InvalidConfig(_) => CliError::Usage(e.to_string()),
            IkError::Skeleton(_) => CliError::Data(e.to_string()),
            _ => CliError::Numeric(e.to_string()),
        }
    }
}

impl From<spinekin::triangulation::TriangulationError> for CliError {
    fn from(e: spinekin::triangulation::TriangulationError) -> Self {
        use spinekin::triangulation::TriangulationError;
        match e {
            TriangulationError::InvalidConfig(_) => CliError::Usage(e.to_string()),
            TriangulationError::UnknownView(_) | TriangulationError::InvalidObservation(_) => {
                CliError::Data(e.to_string())
            }
            _ => CliError::Numeric(e.to_string()),
        }
    }
}

impl From<spinekin::temporal::TemporalError> for CliError {
    fn from(e: spinekin::temporal::TemporalError) -> Self {
        use spinekin::temporal::TemporalError;
        match e {
            TemporalError::InvalidSpec(_) => CliError::Usage(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<spinekin::analytics::AnalyticsError> for CliError {
    fn from(e: spinekin::analytics::AnalyticsError) -> Self {
        use spinekin::analytics::AnalyticsError;
        match e {
            AnalyticsError::DegenerateSagittalProjection { .. } => CliError::Numeric(e.to_string()),
            AnalyticsError::InvalidTrim(_) => CliError::Usage(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<spinekin::metrics::MetricsError> for CliError {
    fn from(e: spinekin::metrics::MetricsError) -> Self {
        CliError::Data(e.to_string())
    }
}
