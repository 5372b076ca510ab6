use std::io::Write;
use std::path::Path;

use qswitch::Error;

pub const EXIT_FAILED_CHECKS: u8 = 1;
pub const EXIT_PARSE: u8 = 2;
pub const EXIT_SOLVER: u8 = 3;
pub const EXIT_CERTIFICATE: u8 = 4;
pub const EXIT_IO: u8 = 5;

#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn new(code: u8, message: impl Into<String>) -> Self {
        Self { code, message: message.into() }
    }

    pub fn parse(message: impl Into<String>) -> Self {
        Self::new(EXIT_PARSE, message)
    }
}

pub fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Io(_) => EXIT_IO,
        Error::SolverNotConverged { .. } | Error::NonFinite => EXIT_SOLVER,
        Error::NonContractive { .. }
        | Error::TailNotConverged { .. }
        | Error::ProductBudget { .. }
        | Error::CertificateMismatch { .. } => EXIT_CERTIFICATE,
        _ => EXIT_PARSE,
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = exit_code(&e);
        let mut message = e.to_string();
        if let Error::NonContractive { .. } = e {
            message.push_str("; the certified rate plus epsilon must stay below 1: lower --epsilon, raise --depth, use --norm inf or a smaller --alpha");
        }
        Failure { code, message }
    }
}

pub type CliResult<T = ()> = Result<T, Failure>;

/// Loads an MDP, reporting unreadable files as I/O and malformed ones as parse failures.
pub fn load_mdp(path: &Path) -> CliResult<qswitch::Mdp> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::new(EXIT_IO, format!("cannot read {}: {e}", path.display())))?;
    qswitch::Mdp::from_json_str(&text).map_err(|e| Failure::parse(format!("{}: {e}", path.display())))
}

/// Writes through a temporary file in the target directory, then renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> CliResult {
    let io = |e: std::io::Error| Failure::new(EXIT_IO, format!("cannot write {}: {e}", path.display()));
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io)?;
    tmp.write_all(bytes).map_err(io)?;
    tmp.as_file().sync_all().map_err(io)?;
    tmp.persist(path).map_err(|e| io(e.error))?;
    Ok(())
}

pub fn write_json(path: &Path, value: &impl serde::Serialize) -> CliResult {
    let text = serde_json::to_string_pretty(value).map_err(|e| Failure::new(EXIT_IO, e.to_string()))?;
    write_atomic(path, text.as_bytes())
}

pub fn check_alpha(alpha: f64) -> CliResult {
    qswitch::switching::check_alpha(alpha).map_err(Failure::from)
}

/// Comma-separated decimal numbers.
pub fn parse_vector(text: &str, len: usize, what: &str) -> CliResult<qswitch::DVector<f64>> {
    let values: Vec<f64> = text
        .split(',')
        .map(|v| v.trim().parse::<f64>().map_err(|e| Failure::parse(format!("--{what}: `{}`: {e}", v.trim()))))
        .collect::<CliResult<_>>()?;
    if values.len() != len {
        return Err(Failure::parse(format!("--{what} has {} entries, expected {len}", values.len())));
    }
    Ok(qswitch::DVector::from_vec(values))
}

pub fn fmt_vec(v: impl IntoIterator<Item = f64>) -> String {
    v.into_iter().map(|x| format!("{x:.6}")).collect::<Vec<_>>().join(" ")
}
