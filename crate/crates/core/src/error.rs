use std::fmt;

/// Errors raised anywhere in the meshing, FEM and I/O pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// An argument outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),
    /// A precondition on the input data did not hold.
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("parse error at {location}: {message}")]
    Parse { location: String, message: String },
    #[error("config error: {0}")]
    Config(String),
    #[error("classification error: {0}")]
    Classification(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("solver error: {0}")]
    Solver(String),
    /// A peer rank failed while this rank was waiting on it.
    #[error("rank {rank} failed: {message}")]
    Rank { rank: usize, message: String },
    #[error("[{stage}] {source}")]
    Stage {
        stage: Stage,
        #[source]
        source: Box<Error>,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Pipeline stage label attached to errors surfaced by the drivers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Config,
    Geometry,
    Mesh,
    Nodes,
    Assembly,
    Solve,
    Output,
    Checkpoint,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Stage::Config => "config",
            Stage::Geometry => "geometry",
            Stage::Mesh => "mesh",
            Stage::Nodes => "nodes",
            Stage::Assembly => "assembly",
            Stage::Solve => "solve",
            Stage::Output => "output",
            Stage::Checkpoint => "checkpoint",
        };
        f.write_str(s)
    }
}

impl Error {
    pub fn parse(location: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse {
            location: location.into(),
            message: message.into(),
        }
    }

    /// The error beneath any stage labels.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            other => other,
        }
    }

    /// The stage label of the outermost staged error, if any.
    pub fn stage(&self) -> Option<Stage> {
        match self {
            Error::Stage { stage, .. } => Some(*stage),
            _ => None,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

/// Attach a stage label to an error result.
pub trait StageExt<T> {
    fn stage(self, stage: Stage) -> Result<T>;
}

impl<T> StageExt<T> for Result<T> {
    fn stage(self, stage: Stage) -> Result<T> {
        self.map_err(|e| match e {
            staged @ Error::Stage { .. } => staged,
            other => Error::Stage {
                stage,
                source: Box::new(other),
            },
        })
    }
}
