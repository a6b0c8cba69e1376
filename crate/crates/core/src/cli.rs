//! Command-line front end and the heartbeat CSV format.
//!
//! Heartbeat files have the header `time,I,II,III,aVR,aVL,aVF,V1,...,V6`,
//! time in seconds with nine decimals and values in millivolts. Files holding
//! several beats carry a leading `beat` column and restart time at zero for
//! each beat. The sampling rate is recovered from the time column.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::edm::RhythmParams;
use crate::error::Error;
use crate::fidelity::{sim_distance, CombinedLoss, LeadSignal, LossWeights};
use crate::integrator::{reference_trajectory, SamplingGrid};
use crate::leads::{check_lead_consistency, synthesize_heartbeat, Heartbeat, LeadId};
use crate::optimize::{distribution_from_fits, fit_params, refine_waveform, OptimConfig};
use crate::params::{default_param_set, read_param_file, write_param_file, ParamSet};
use crate::segmentation::{segment_record_windows, AbnormalityClass, Record};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_NOT_CONVERGED: i32 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "edm-ecg",
    version,
    about = "Synthesize, score and refine 12-lead heartbeats with the ECG dynamical model"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Sample parameters and integrate heartbeats.
    Synthesize {
        /// Parameter file; the built-in defaults when omitted.
        #[arg(long)]
        params: Option<PathBuf>,
        #[arg(long, default_value = "NORMAL")]
        class: AbnormalityClass,
        #[arg(long, default_value_t = 500.0)]
        fs: f64,
        #[arg(long, default_value_t = 1)]
        beats: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output CSV; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the Euler loss and per-lead simulator distances of each beat.
    Score {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        params: Option<PathBuf>,
        #[arg(long, default_value = "NORMAL")]
        class: AbnormalityClass,
        #[arg(long, default_value_t = 0.6)]
        delta: f64,
        #[arg(long, default_value_t = 8)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Descend the Euler loss over the samples of each beat.
    Refine {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        params: Option<PathBuf>,
        #[arg(long, default_value = "NORMAL")]
        class: AbnormalityClass,
        #[arg(long, default_value_t = 0.6)]
        delta: f64,
        #[arg(long, default_value_t = 500)]
        steps: usize,
        #[arg(long, default_value_t = 8)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit one lead's parameters to each beat and write the resulting distribution.
    Fit {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value = "II")]
        lead: LeadId,
        /// Parameter file providing the starting point, gain and rhythm.
        #[arg(long)]
        init: Option<PathBuf>,
        #[arg(long, default_value = "NORMAL")]
        class: AbnormalityClass,
        #[arg(long, default_value_t = 5000)]
        max_iter: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Cut a record into R-to-R cycles of fixed length.
    Segment {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 512)]
        length: usize,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Verify the limb-lead identities of each beat.
    Check {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 1e-9)]
        tol: f64,
    },
}

/// A failed command: exit code and a message for stderr.
#[derive(Debug)]
struct Failure {
    code: i32,
    msg: String,
}

impl Failure {
    fn input(msg: impl Into<String>) -> Self {
        Self {
            code: EXIT_INPUT,
            msg: msg.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::InvalidArgument(_) => EXIT_USAGE,
            Error::Diverged { .. } | Error::OptimDiverged(_) => EXIT_NOT_CONVERGED,
            _ => EXIT_INPUT,
        };
        Self {
            code,
            msg: e.to_string(),
        }
    }
}

type CmdResult = std::result::Result<i32, Failure>;

/// Runs the command line `args` (program name first) and returns the exit
/// code. Machine output goes to `stdout`, diagnostics to `stderr`.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(stdout, "{e}");
                    EXIT_OK
                }
                _ => {
                    let _ = write!(stderr, "{e}");
                    EXIT_USAGE
                }
            };
        }
    };
    match dispatch(cli.command, stdout, stderr) {
        Ok(code) => code,
        Err(f) => {
            let _ = writeln!(stderr, "error: {}", f.msg);
            f.code
        }
    }
}

fn dispatch(cmd: Command, stdout: &mut dyn Write, stderr: &mut dyn Write) -> CmdResult {
    match cmd {
        Command::Synthesize {
            params,
            class,
            fs,
            beats,
            seed,
            out,
        } => synthesize(
            params.as_deref(),
            &class,
            fs,
            beats,
            seed,
            out.as_deref(),
            stdout,
        ),
        Command::Score {
            input,
            params,
            class,
            delta,
            samples,
            seed,
        } => score(
            &input,
            params.as_deref(),
            &class,
            delta,
            samples,
            seed,
            stdout,
        ),
        Command::Refine {
            input,
            params,
            class,
            delta,
            steps,
            samples,
            seed,
            out,
        } => {
            let beats = load_beats(&input, &class)?;
            let set = load_params(params.as_deref())?;
            let weights = LossWeights::new(delta)?;
            let cfg = OptimConfig {
                max_iter: steps.max(1),
                ..Default::default()
            };
            let mut refined = Vec::with_capacity(beats.len());
            writeln!(stdout, "beat,initial_loss,final_loss,steps,converged").map_err(io_failure)?;
            for (b, beat) in beats.iter().enumerate() {
                let r = refine_waveform(beat, &set, weights, &cfg, samples, seed)?;
                writeln!(
                    stdout,
                    "{b},{},{},{},{}",
                    r.initial_loss(),
                    r.final_loss(),
                    r.losses.len() - 1,
                    r.converged
                )
                .map_err(io_failure)?;
                refined.push(r.beat);
            }
            write_file(&out, &format_beats(&refined))?;
            Ok(EXIT_OK)
        }
        Command::Fit {
            input,
            lead,
            init,
            class,
            max_iter,
            out,
        } => fit(
            &input,
            lead,
            init.as_deref(),
            &class,
            max_iter,
            &out,
            stdout,
            stderr,
        ),
        Command::Segment {
            input,
            length,
            out_dir,
        } => segment(&input, length, &out_dir, stdout),
        Command::Check { input, tol } => {
            if !(tol.is_finite() && tol >= 0.0) {
                return Err(Failure {
                    code: EXIT_USAGE,
                    msg: format!("--tol must be >= 0, got {tol}"),
                });
            }
            let beats = load_beats(&input, &AbnormalityClass::normal())?;
            writeln!(stdout, "beat,relation,max_deviation,pass").map_err(io_failure)?;
            let mut ok = true;
            for (b, beat) in beats.iter().enumerate() {
                let report = check_lead_consistency(beat, tol);
                for (rel, dev) in &report.deviations {
                    writeln!(stdout, "{b},{rel},{dev},{}", *dev <= tol).map_err(io_failure)?;
                }
                ok &= report.pass();
            }
            if ok {
                Ok(EXIT_OK)
            } else {
                writeln!(stderr, "limb-lead identities violated at tolerance {tol}")
                    .map_err(io_failure)?;
                Ok(EXIT_INPUT)
            }
        }
    }
}

fn synthesize(
    params: Option<&Path>,
    class: &AbnormalityClass,
    fs: f64,
    beats: usize,
    seed: u64,
    out: Option<&Path>,
    stdout: &mut dyn Write,
) -> CmdResult {
    if beats == 0 {
        return Err(Failure {
            code: EXIT_USAGE,
            msg: "--beats must be >= 1".into(),
        });
    }
    let set = load_params(params)?;
    let rhythm = set.rhythm(class)?;
    let grid = SamplingGrid::one_beat(fs, rhythm.f)?;
    let mut out_beats = Vec::with_capacity(beats);
    for b in 0..beats {
        let mut rng = beat_rng(seed, b);
        let lead_params = set.sample_free_leads(class, &mut rng)?;
        let mut beat = synthesize_heartbeat(&lead_params, &rhythm, grid)?;
        beat.label = Some(class.clone());
        out_beats.push(beat);
    }
    let text = format_beats(&out_beats);
    match out {
        Some(path) => write_file(path, &text)?,
        None => stdout.write_all(text.as_bytes()).map_err(io_failure)?,
    }
    Ok(EXIT_OK)
}

/// Independent random stream for beat `b` of a run seeded with `seed`.
fn beat_rng(seed: u64, b: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(b as u64);
    rng
}

fn score(
    input: &Path,
    params: Option<&Path>,
    class: &AbnormalityClass,
    delta: f64,
    samples: usize,
    seed: u64,
    stdout: &mut dyn Write,
) -> CmdResult {
    let beats = load_beats(input, class)?;
    let set = load_params(params)?;
    let weights = LossWeights::new(delta)?;
    let rhythm = set.rhythm(class)?;
    let mut header = String::from("beat,loss,single,inter");
    for id in LeadId::ALL {
        header.push_str(&format!(",{id}"));
    }
    writeln!(stdout, "{header}").map_err(io_failure)?;
    for (b, beat) in beats.iter().enumerate() {
        let parts =
            CombinedLoss::new(&set, class, beat.grid(), weights, samples, seed)?.parts(beat)?;
        let reference = reference_trajectory(&rhythm, beat.grid())?;
        let mut row = format!("{b},{},{},{}", parts.total, parts.single, parts.inter);
        for id in LeadId::ALL {
            let mean = set.require(class, id)?.mean_params();
            let h = LeadSignal::from_heartbeat(beat, id, mean.gain)?;
            row.push_str(&format!(
                ",{}",
                sim_distance(&h, &mean.eta, &rhythm, &reference)?
            ));
        }
        writeln!(stdout, "{row}").map_err(io_failure)?;
    }
    Ok(EXIT_OK)
}

#[allow(clippy::too_many_arguments)]
fn fit(
    input: &Path,
    lead: LeadId,
    init: Option<&Path>,
    class: &AbnormalityClass,
    max_iter: usize,
    out: &Path,
    stdout: &mut dyn Write,
    stderr: &mut dyn Write,
) -> CmdResult {
    let beats = load_beats(input, class)?;
    let mut set = load_params(init)?;
    let start = set.require(class, lead)?.clone();
    let cfg = OptimConfig {
        max_iter,
        ..Default::default()
    };
    writeln!(stdout, "beat,final_distance,iterations,converged").map_err(io_failure)?;
    let mut fits = Vec::new();
    let mut rhythm = start.rhythm;
    for (b, beat) in beats.iter().enumerate() {
        // one revolution of the limit cycle per beat
        let grid = beat.grid();
        rhythm = RhythmParams::new(
            grid.fs() / grid.len() as f64,
            start.rhythm.amplitude,
            start.rhythm.f2,
        )?;
        let reference = reference_trajectory(&rhythm, grid)?;
        let h = LeadSignal::from_heartbeat(beat, lead, start.gain_mean)?;
        let result = fit_params(&h, &start.mean_params().eta, &rhythm, &reference, &cfg)?;
        writeln!(
            stdout,
            "{b},{},{},{}",
            result.final_distance, result.iterations, result.converged
        )
        .map_err(io_failure)?;
        if result.converged {
            fits.push(result.eta);
        }
    }
    if fits.is_empty() {
        return Err(Failure {
            code: EXIT_NOT_CONVERGED,
            msg: "no fit converged".into(),
        });
    }
    let dist = distribution_from_fits(&fits, class, lead, start.gain_mean, &rhythm)?;
    set.insert(dist)?;
    write_file(out, &write_param_file(&set))?;
    if fits.len() < beats.len() {
        writeln!(
            stderr,
            "{} of {} fits did not converge",
            beats.len() - fits.len(),
            beats.len()
        )
        .map_err(io_failure)?;
        return Ok(EXIT_NOT_CONVERGED);
    }
    Ok(EXIT_OK)
}

fn segment(input: &Path, length: usize, out_dir: &Path, stdout: &mut dyn Write) -> CmdResult {
    let text = read_file(input)?;
    let table = parse_table(&text)?;
    let fs = infer_fs(&table.times[0])?;
    let mut channels = vec![Vec::new(); 12];
    for group in &table.values {
        for (c, row) in channels.iter_mut().zip(group) {
            c.extend_from_slice(row);
        }
    }
    let id = input
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let rec = Record::new(fs, channels, id)?;
    let cycles = segment_record_windows(&rec, length)?;
    fs::create_dir_all(out_dir)
        .map_err(|e| Failure::input(format!("{}: {e}", out_dir.display())))?;
    writeln!(stdout, "cycle,start,end,file").map_err(io_failure)?;
    for (k, c) in cycles.iter().enumerate() {
        let path = out_dir.join(format!("cycle_{k:04}.csv"));
        write_file(&path, &format_beats(std::slice::from_ref(&c.beat)))?;
        writeln!(stdout, "{k},{},{},{}", c.start, c.end, path.display()).map_err(io_failure)?;
    }
    Ok(EXIT_OK)
}

fn io_failure(e: std::io::Error) -> Failure {
    Failure::input(format!("i/o error: {e}"))
}

fn read_file(path: &Path) -> std::result::Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure::input(format!("{}: {e}", path.display())))
}

fn write_file(path: &Path, text: &str) -> std::result::Result<(), Failure> {
    fs::write(path, text).map_err(|e| Failure::input(format!("{}: {e}", path.display())))
}

fn load_params(path: Option<&Path>) -> std::result::Result<ParamSet, Failure> {
    match path {
        Some(p) => read_param_file(&read_file(p)?)
            .map_err(|e| Failure::input(format!("{}: {e}", p.display()))),
        None => Ok(default_param_set()),
    }
}

fn load_beats(
    path: &Path,
    class: &AbnormalityClass,
) -> std::result::Result<Vec<Heartbeat>, Failure> {
    let mut beats = parse_beats(&read_file(path)?)
        .map_err(|e| Failure::input(format!("{}: {e}", path.display())))?;
    for b in &mut beats {
        b.label = Some(class.clone());
    }
    Ok(beats)
}

/// Renders beats as CSV. A `beat` column is added when there is more than
/// one.
pub fn format_beats(beats: &[Heartbeat]) -> String {
    let multi = beats.len() > 1;
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    let mut header: Vec<String> = Vec::with_capacity(14);
    if multi {
        header.push("beat".into());
    }
    header.push("time".into());
    header.extend(LeadId::ALL.iter().map(|id| id.to_string()));
    w.write_record(&header).expect("in-memory write");
    for (b, beat) in beats.iter().enumerate() {
        let grid = beat.grid();
        for l in 0..grid.len() {
            let mut rec: Vec<String> = Vec::with_capacity(14);
            if multi {
                rec.push(b.to_string());
            }
            rec.push(format!("{:.9}", grid.time(l)));
            rec.extend(beat.rows().iter().map(|r| r[l].to_string()));
            w.write_record(&rec).expect("in-memory write");
        }
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("ascii output")
}

/// Rows of a heartbeat CSV grouped by beat: times and 12 lead rows per group.
struct Table {
    times: Vec<Vec<f64>>,
    values: Vec<Vec<Vec<f64>>>,
}

fn parse_table(text: &str) -> crate::error::Result<Table> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(text.as_bytes());
    let header = rdr
        .headers()
        .map_err(|e| Error::Parse {
            line: 1,
            msg: e.to_string(),
        })?
        .clone();
    let names: Vec<&str> = header.iter().map(str::trim).collect();
    let multi = names.first() == Some(&"beat");
    let offset = usize::from(multi);
    let mut expected = vec!["time".to_string()];
    expected.extend(LeadId::ALL.iter().map(|id| id.to_string()));
    if names[offset..] != expected.iter().map(String::as_str).collect::<Vec<_>>()[..] {
        return Err(Error::Parse {
            line: 1,
            msg: format!("expected header [beat,]{}", expected.join(",")),
        });
    }
    let mut table = Table {
        times: Vec::new(),
        values: Vec::new(),
    };
    let mut current: Option<u64> = None;
    for (k, rec) in rdr.records().enumerate() {
        let line = k + 2;
        let rec = rec.map_err(|e| Error::Parse {
            line,
            msg: e.to_string(),
        })?;
        let field = |i: usize| -> crate::error::Result<f64> {
            let s = rec.get(i).unwrap_or("").trim();
            let v: f64 = s.parse().map_err(|_| Error::Parse {
                line,
                msg: format!("not a number: {s:?}"),
            })?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(Error::Parse {
                    line,
                    msg: format!("non-finite value {s:?}"),
                })
            }
        };
        let beat = if multi {
            let s = rec.get(0).unwrap_or("").trim();
            Some(s.parse::<u64>().map_err(|_| Error::Parse {
                line,
                msg: format!("bad beat index {s:?}"),
            })?)
        } else {
            None
        };
        if table.times.is_empty() || beat != current {
            if beat.is_some() && current.is_some() && beat < current {
                return Err(Error::Parse {
                    line,
                    msg: "beat indices must not decrease".into(),
                });
            }
            current = beat;
            table.times.push(Vec::new());
            table.values.push(vec![Vec::new(); 12]);
        }
        let g = table.times.len() - 1;
        table.times[g].push(field(offset)?);
        for c in 0..12 {
            table.values[g][c].push(field(offset + 1 + c)?);
        }
    }
    if table.times.is_empty() {
        return Err(Error::Parse {
            line: 2,
            msg: "no data rows".into(),
        });
    }
    Ok(table)
}

/// Sampling rate implied by a uniformly spaced time column.
fn infer_fs(times: &[f64]) -> crate::error::Result<f64> {
    let n = times.len();
    if n < 2 {
        return Err(Error::InsufficientData(
            "need at least two samples to infer the sampling rate".into(),
        ));
    }
    let dt = (times[n - 1] - times[0]) / (n - 1) as f64;
    if !(dt > 0.0) {
        return Err(Error::Dimension("time column must increase".into()));
    }
    for (l, t) in times.iter().enumerate() {
        if (t - times[0] - l as f64 * dt).abs() > 2e-9 + 1e-12 * t.abs() {
            return Err(Error::Dimension(format!(
                "time column is not uniformly spaced at row {}",
                l + 2
            )));
        }
    }
    let fs = 1.0 / dt;
    // the printed times carry nine decimals, so integral rates come back slightly off
    Ok(if (fs - fs.round()).abs() <= 1e-6 * fs {
        fs.round()
    } else {
        fs
    })
}

/// Parses a heartbeat CSV written by [`format_beats`]. Beats are returned
/// unlabeled.
pub fn parse_beats(text: &str) -> crate::error::Result<Vec<Heartbeat>> {
    let table = parse_table(text)?;
    table
        .times
        .iter()
        .zip(table.values)
        .map(|(times, rows)| {
            let grid = SamplingGrid::new(infer_fs(times)?, times.len())?;
            Heartbeat::new(grid, rows, None)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_capture(args: &[&str]) -> (i32, String, String) {
        let mut out = Vec::new();
        let mut err = Vec::new();
        let code = run(
            std::iter::once("edm-ecg").chain(args.iter().copied()),
            &mut out,
            &mut err,
        );
        (
            code,
            String::from_utf8(out).unwrap(),
            String::from_utf8(err).unwrap(),
        )
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let set = default_param_set();
        let class = AbnormalityClass::normal();
        let rhythm = set.rhythm(&class).unwrap();
        let grid = SamplingGrid::one_beat(360.0, rhythm.f).unwrap();
        let beats: Vec<Heartbeat> = (0..2)
            .map(|b| {
                let p = set.sample_free_leads(&class, &mut beat_rng(3, b)).unwrap();
                synthesize_heartbeat(&p, &rhythm, grid).unwrap()
            })
            .collect();
        let text = format_beats(&beats);
        assert!(text.starts_with("beat,time,I,II,III,aVR,aVL,aVF,V1,V2,V3,V4,V5,V6\n"));
        assert!(!text.contains('\r'));
        let back = parse_beats(&text).unwrap();
        assert_eq!(back, beats);
        let single = format_beats(&beats[..1]);
        assert!(single.starts_with("time,I,"));
        assert_eq!(parse_beats(&single).unwrap(), beats[..1]);
    }

    #[test]
    fn rejects_bad_tables() {
        assert!(matches!(
            parse_beats("time,I\n0,1\n"),
            Err(Error::Parse { line: 1, .. })
        ));
        let mut text = format_beats(&[Heartbeat::new(
            SamplingGrid::new(100.0, 3).unwrap(),
            vec![vec![0.0; 3]; 12],
            None,
        )
        .unwrap()]);
        text.push_str("0.030000000,x,0,0,0,0,0,0,0,0,0,0,0\n");
        assert!(matches!(
            parse_beats(&text),
            Err(Error::Parse { line: 5, .. })
        ));
    }

    #[test]
    fn usage_errors_exit_one() {
        assert_eq!(run_capture(&["synthesize", "--bogus", "1"]).0, EXIT_USAGE);
        assert_eq!(run_capture(&["frobnicate"]).0, EXIT_USAGE);
        assert_eq!(run_capture(&["synthesize", "--fs", "-5"]).0, EXIT_USAGE);
        let (code, out, _) = run_capture(&["--help"]);
        assert_eq!(code, EXIT_OK);
        assert!(out.contains("synthesize"));
    }

    #[test]
    fn synthesize_to_stdout_is_seeded() {
        let a = run_capture(&["synthesize", "--seed", "5", "--fs", "250"]);
        let b = run_capture(&["synthesize", "--seed", "5", "--fs", "250"]);
        let c = run_capture(&["synthesize", "--seed", "6", "--fs", "250"]);
        assert_eq!(a.0, EXIT_OK);
        assert_eq!(a.1, b.1);
        assert_ne!(a.1, c.1);
        assert!(a.2.is_empty());
        assert_eq!(parse_beats(&a.1).unwrap()[0].len(), 250);
    }

    #[test]
    fn beat_streams_differ() {
        use rand::Rng;
        let a: u64 = beat_rng(1, 0).random();
        let b: u64 = beat_rng(1, 1).random();
        assert_ne!(a, b);
    }
}
