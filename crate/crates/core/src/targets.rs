//! Deterministic execution oracles: in-process synthetic programs with
//! explicit edge labels, plus a file-based harness for external commands.
//!
//! The synthetic targets realize byte-coupling phenomena on purpose: a type
//! field whose value gates independent edge clusters, and a deep edge that
//! only appears when several byte conditions hold at once. Constraint
//! constants are documented next to the code and mirrored in tests.

use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use crate::coverage::{EdgeId, EdgeSet};
use crate::error::{Error, Result};

/// Outcome of one target execution.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExecutionResult {
    pub edges: EdgeSet,
    pub verdict: Verdict,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Ok,
    CrashMarker,
}

/// Static description of a target.
#[derive(Debug, Clone)]
pub struct TargetSpec {
    pub name: &'static str,
    pub min_input_len: usize,
    pub edge_universe_size: u32,
}

/// An execution oracle. Implementations must be deterministic for
/// identical input bytes.
pub trait Target {
    fn spec(&self) -> TargetSpec;
    fn run(&self, input: &[u8]) -> Result<ExecutionResult>;
}

// ---------------------------------------------------------------------------
// coupled_checker
//
// Constraint table (16-byte minimum input, all values chosen to avoid
// trivially-interesting bytes where possible):
//
//   edge 0   always (entry)
//   edge 1   len >= 16
//   reserved bytes {0,1,2,3,6,7,10,11,13,14} must stay zero; any nonzero
//   reserved byte rejects the header and nothing below fires
//   type     u16 little-endian at bytes [4..6]
//   edges 10,11,12   type == 0x0001  (cluster A)
//   edges 20,21,22   type == 0x0002  (cluster B)
//   edge 23  b[8]  & 0xF0 == 0x40
//   edge 24  b[9]  & 0x0F == 0x0C
//   edge 25  b[12] & 0x0F == (b[4] ^ 0x33) & 0x0F   (depends on type field)
//   edge 40+p  b[p] != 0, for p in {4, 8, 9, 12}  (touch edges)
//   edge 30  edges 23, 24 and 25 all hold (deep edge)
//   edge 31 + crash   deep edge, type == 0x0002, b[15] == 0x5A
//
// The same type field gates both clusters (indirect coupling: one set of
// bytes, two program logics) and feeds the deep edge's third condition
// (direct coupling). The touch edges mark each sensitive byte the first
// time it goes nonzero, the way a branch on a header field fires as soon
// as the field is populated at all. The reserved-byte check models strict
// header validation: an input that disturbs structural bytes is rejected
// before any interesting logic runs. From the all-zero seed the deep edge
// needs changes at bytes 8, 9 and 12 simultaneously, so no single-byte
// mutation reaches it.
// ---------------------------------------------------------------------------

pub const COUPLED_TYPE_A: u16 = 0x0001;
pub const COUPLED_TYPE_B: u16 = 0x0002;
pub const COUPLED_CRASH_BYTE: u8 = 0x5A;
pub const COUPLED_XOR_KEY: u8 = 0x33;
pub const COUPLED_SENSITIVE_POSITIONS: [usize; 4] = [4, 8, 9, 12];
pub const COUPLED_RESERVED_POSITIONS: [usize; 10] = [0, 1, 2, 3, 6, 7, 10, 11, 13, 14];

#[derive(Debug, Clone, Copy, Default)]
pub struct CoupledChecker;

impl CoupledChecker {
    fn type_field(input: &[u8]) -> u16 {
        u16::from_le_bytes([input[4], input[5]])
    }
}

impl Target for CoupledChecker {
    fn spec(&self) -> TargetSpec {
        TargetSpec {
            name: "coupled_checker",
            min_input_len: 16,
            edge_universe_size: 64,
        }
    }

    fn run(&self, input: &[u8]) -> Result<ExecutionResult> {
        let mut edges = EdgeSet::new();
        edges.insert(EdgeId(0));
        if input.len() < 16 {
            return Ok(ExecutionResult {
                edges,
                verdict: Verdict::Ok,
            });
        }
        edges.insert(EdgeId(1));

        if COUPLED_RESERVED_POSITIONS.iter().any(|&p| input[p] != 0) {
            return Ok(ExecutionResult {
                edges,
                verdict: Verdict::Ok,
            });
        }

        let ty = Self::type_field(input);
        if ty == COUPLED_TYPE_A {
            edges.insert(EdgeId(10));
            edges.insert(EdgeId(11));
            edges.insert(EdgeId(12));
        }
        if ty == COUPLED_TYPE_B {
            edges.insert(EdgeId(20));
            edges.insert(EdgeId(21));
            edges.insert(EdgeId(22));
        }

        for p in COUPLED_SENSITIVE_POSITIONS {
            if input[p] != 0 {
                edges.insert(EdgeId(40 + p as u32));
            }
        }

        let cond8 = input[8] & 0xF0 == 0x40;
        let cond9 = input[9] & 0x0F == 0x0C;
        let cond12 = input[12] & 0x0F == (input[4] ^ COUPLED_XOR_KEY) & 0x0F;
        if cond8 {
            edges.insert(EdgeId(23));
        }
        if cond9 {
            edges.insert(EdgeId(24));
        }
        if cond12 {
            edges.insert(EdgeId(25));
        }

        let mut verdict = Verdict::Ok;
        if cond8 && cond9 && cond12 {
            edges.insert(EdgeId(30));
            if ty == COUPLED_TYPE_B && input[15] == COUPLED_CRASH_BYTE {
                edges.insert(EdgeId(31));
                verdict = Verdict::CrashMarker;
            }
        }

        Ok(ExecutionResult { edges, verdict })
    }
}

/// Edge label of the coupled checker's deep edge.
pub const COUPLED_DEEP_EDGE: EdgeId = EdgeId(30);

// ---------------------------------------------------------------------------
// magic_chain: strictly nested magic-byte ladder. Edge i (i = 0..7) is
// emitted iff bytes [0..=i] all match the magic prefix.
// ---------------------------------------------------------------------------

pub const MAGIC_PREFIX: [u8; 8] = [0x4A, 0xB7, 0x19, 0xE3, 0x5D, 0x2C, 0x91, 0x6F];

#[derive(Debug, Clone, Copy, Default)]
pub struct MagicChain;

impl Target for MagicChain {
    fn spec(&self) -> TargetSpec {
        TargetSpec {
            name: "magic_chain",
            min_input_len: 8,
            edge_universe_size: 8,
        }
    }

    fn run(&self, input: &[u8]) -> Result<ExecutionResult> {
        let mut edges = EdgeSet::new();
        for (i, magic) in MAGIC_PREFIX.iter().enumerate() {
            if input.get(i) != Some(magic) {
                break;
            }
            edges.insert(EdgeId(i as u32));
        }
        Ok(ExecutionResult {
            edges,
            verdict: Verdict::Ok,
        })
    }
}

// ---------------------------------------------------------------------------
// External command harness. The template must contain `@@`, replaced by
// the path of a temp file holding the input. The target reports edges by
// writing `<input>.edges` with one decimal edge id per line. A signal
// exit maps to a crash marker.
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct ExternalTarget {
    pub cmd_template: String,
    pub workdir: PathBuf,
    pub timeout: Duration,
}

impl ExternalTarget {
    pub fn new(cmd_template: impl Into<String>, workdir: impl Into<PathBuf>) -> Result<Self> {
        let cmd_template = cmd_template.into();
        if !cmd_template.contains("@@") {
            return Err(Error::Config(
                "external command template must contain the `@@` placeholder".into(),
            ));
        }
        Ok(Self {
            cmd_template,
            workdir: workdir.into(),
            timeout: Duration::from_millis(1000),
        })
    }

    fn parse_sidecar(path: &Path) -> Result<EdgeSet> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::Execution(format!("missing edge sidecar {}: {e}", path.display()))
        })?;
        let mut edges = EdgeSet::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let id: u32 = line.parse().map_err(|_| Error::MalformedSidecar {
                path: path.to_path_buf(),
                line: i + 1,
                reason: format!("not a decimal edge id: {line:?}"),
            })?;
            edges.insert(EdgeId(id));
        }
        Ok(edges)
    }
}

impl Target for ExternalTarget {
    fn spec(&self) -> TargetSpec {
        TargetSpec {
            name: "external",
            min_input_len: 0,
            edge_universe_size: u32::MAX,
        }
    }

    fn run(&self, input: &[u8]) -> Result<ExecutionResult> {
        let mut file = tempfile_in(&self.workdir)?;
        file.write_all(input)
            .map_err(|e| Error::io("writing input file", e))?;
        let input_path = file.path.clone();
        let cmd = self.cmd_template.replace("@@", &input_path.to_string_lossy());

        let mut child = Command::new("sh")
            .arg("-c")
            .arg(&cmd)
            .current_dir(&self.workdir)
            .stdout(Stdio::null())
            .stderr(Stdio::null())
            .spawn()
            .map_err(|e| Error::Execution(format!("spawning `{cmd}`: {e}")))?;

        let started = Instant::now();
        let status = loop {
            match child
                .try_wait()
                .map_err(|e| Error::Execution(format!("waiting for `{cmd}`: {e}")))?
            {
                Some(status) => break status,
                None if started.elapsed() >= self.timeout => {
                    let _ = child.kill();
                    let _ = child.wait();
                    return Err(Error::Timeout(self.timeout.as_millis() as u64));
                }
                None => std::thread::sleep(Duration::from_millis(1)),
            }
        };

        let sidecar = {
            let mut p = input_path.clone().into_os_string();
            p.push(".edges");
            PathBuf::from(p)
        };
        let edges = Self::parse_sidecar(&sidecar)?;
        let _ = std::fs::remove_file(&sidecar);

        let crashed = {
            #[cfg(unix)]
            {
                use std::os::unix::process::ExitStatusExt;
                status.signal().is_some()
            }
            #[cfg(not(unix))]
            {
                !status.success()
            }
        };

        Ok(ExecutionResult {
            edges,
            verdict: if crashed {
                Verdict::CrashMarker
            } else {
                Verdict::Ok
            },
        })
    }
}

/// Temp file that is removed on drop.
struct TempInput {
    path: PathBuf,
    file: std::fs::File,
}

impl TempInput {
    fn write_all(&mut self, bytes: &[u8]) -> std::io::Result<()> {
        use std::io::Write as _;
        self.file.write_all(bytes)?;
        self.file.flush()
    }
}

impl Drop for TempInput {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.path);
    }
}

fn tempfile_in(dir: &Path) -> Result<TempInput> {
    use std::sync::atomic::{AtomicU64, Ordering};
    static COUNTER: AtomicU64 = AtomicU64::new(0);
    std::fs::create_dir_all(dir).map_err(|e| Error::io("creating workdir", e))?;
    let n = COUNTER.fetch_add(1, Ordering::Relaxed);
    let path = dir.join(format!("input_{}_{n}.bin", std::process::id()));
    let file = std::fs::File::create(&path).map_err(|e| Error::io("creating input file", e))?;
    Ok(TempInput { path, file })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn edges(r: &ExecutionResult) -> Vec<u32> {
        r.edges.iter().map(|e| e.0).collect()
    }

    #[test]
    fn coupled_all_zero_has_only_entry_edges() {
        let r = CoupledChecker.run(&[0u8; 16]).unwrap();
        assert_eq!(edges(&r), vec![0, 1]);
        assert_eq!(r.verdict, Verdict::Ok);
    }

    #[test]
    fn coupled_short_input_only_entry() {
        let r = CoupledChecker.run(&[0u8; 8]).unwrap();
        assert_eq!(edges(&r), vec![0]);
    }

    #[test]
    fn coupled_type_a_gates_cluster_a_only() {
        let mut input = [0u8; 16];
        input[4] = 0x01;
        let r = CoupledChecker.run(&input).unwrap();
        assert!(r.edges.contains(EdgeId(10)));
        assert!(r.edges.contains(EdgeId(11)));
        assert!(r.edges.contains(EdgeId(12)));
        assert!(!r.edges.contains(EdgeId(20)));
    }

    #[test]
    fn coupled_touch_edges_track_nonzero_sensitive_bytes() {
        let mut input = [0u8; 16];
        input[8] = 0x99;
        input[12] = 0x01;
        let r = CoupledChecker.run(&input).unwrap();
        assert!(r.edges.contains(EdgeId(48)));
        assert!(r.edges.contains(EdgeId(52)));
        assert!(!r.edges.contains(EdgeId(44)));
        assert!(!r.edges.contains(EdgeId(49)));
    }

    #[test]
    fn coupled_crash_input() {
        let mut input = [0u8; 16];
        input[4] = 0x02; // type B
        input[8] = 0x40;
        input[9] = 0x0C;
        input[12] = (0x02 ^ COUPLED_XOR_KEY) & 0x0F;
        input[15] = COUPLED_CRASH_BYTE;
        let r = CoupledChecker.run(&input).unwrap();
        assert!(r.edges.contains(COUPLED_DEEP_EDGE));
        assert!(r.edges.contains(EdgeId(31)));
        assert_eq!(r.verdict, Verdict::CrashMarker);
    }

    #[test]
    fn coupled_deep_edge_needs_multiple_bytes() {
        // Brute force over all single-byte variants of the all-zero seed.
        let base = [0u8; 16];
        for pos in 0..16 {
            for value in 1..=255u8 {
                let mut input = base;
                input[pos] = value;
                let r = CoupledChecker.run(&input).unwrap();
                assert!(
                    !r.edges.contains(COUPLED_DEEP_EDGE),
                    "deep edge reached by single byte {pos}={value:#x}"
                );
            }
        }
    }

    #[test]
    fn magic_chain_ladder() {
        let r = MagicChain.run(&[0u8; 8]).unwrap();
        assert!(r.edges.is_empty());

        let r = MagicChain.run(&MAGIC_PREFIX).unwrap();
        assert_eq!(r.edges.len(), 8);

        let mut partial = [0u8; 8];
        partial[..3].copy_from_slice(&MAGIC_PREFIX[..3]);
        let r = MagicChain.run(&partial).unwrap();
        assert_eq!(edges(&r), vec![0, 1, 2]);
    }

    #[test]
    fn external_echo_stub() {
        let dir = tempfile::tempdir().unwrap();
        let target = ExternalTarget::new("printf '1\\n2\\n' > @@.edges", dir.path()).unwrap();
        let r = target.run(b"hello").unwrap();
        assert_eq!(edges(&r), vec![1, 2]);
        assert_eq!(r.verdict, Verdict::Ok);
    }

    #[test]
    fn external_abort_is_crash() {
        let dir = tempfile::tempdir().unwrap();
        let target =
            ExternalTarget::new("printf '7\\n' > @@.edges; kill -ABRT $$", dir.path()).unwrap();
        let r = target.run(b"x").unwrap();
        assert_eq!(r.verdict, Verdict::CrashMarker);
    }

    #[test]
    fn external_malformed_sidecar_names_line() {
        let dir = tempfile::tempdir().unwrap();
        let target =
            ExternalTarget::new("printf '1\\nbogus\\n' > @@.edges", dir.path()).unwrap();
        match target.run(b"x") {
            Err(Error::MalformedSidecar { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected malformed sidecar error, got {other:?}"),
        }
    }

    #[test]
    fn external_missing_sidecar_is_error() {
        let dir = tempfile::tempdir().unwrap();
        let target = ExternalTarget::new("true # @@", dir.path()).unwrap();
        assert!(target.run(b"x").is_err());
    }

    #[test]
    fn in_process_targets_are_pure() {
        let inputs: Vec<Vec<u8>> = (0u8..32)
            .map(|i| (0..16).map(|j| i.wrapping_mul(17).wrapping_add(j)).collect())
            .collect();
        for input in &inputs {
            assert_eq!(
                CoupledChecker.run(input).unwrap(),
                CoupledChecker.run(input).unwrap()
            );
            assert_eq!(
                MagicChain.run(input).unwrap(),
                MagicChain.run(input).unwrap()
            );
        }
    }
}
