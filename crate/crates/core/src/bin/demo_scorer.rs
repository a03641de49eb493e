//! Reference child process for the external-scorer protocol.
//!
//! Reads `#longspan-scorer-v1` followed by `id\tsrc\tmt\tref` lines on stdin
//! and answers with `id\tscore` lines. Default score is the character-length
//! ratio min(|mt|, |ref|) / max(|mt|, |ref|), falling back to the source when
//! the reference is empty.

use std::collections::HashMap;
use std::io::{self, BufRead, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use longspan::scorers::{read_scores, PROTOCOL_HEADER};

#[derive(Parser)]
#[command(name = "longspan-demo-scorer")]
struct Args {
    /// Give every segment this score.
    #[arg(long)]
    constant: Option<f64>,
    /// Look scores up in an `id<TAB>score` file.
    #[arg(long)]
    from_file: Option<PathBuf>,
    /// Answer in reverse input order.
    #[arg(long)]
    reverse: bool,
    /// Answer in an id-hash order unrelated to the input order.
    #[arg(long)]
    shuffle: bool,
    /// Consume the input, then exit with status 3.
    #[arg(long)]
    fail: bool,
}

fn fnv1a(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3))
}

fn length_ratio(mt: &str, reference: &str) -> f64 {
    let (a, b) = (mt.chars().count(), reference.chars().count());
    if a.max(b) == 0 {
        1.0
    } else {
        a.min(b) as f64 / a.max(b) as f64
    }
}

fn run(args: &Args) -> Result<(), String> {
    let table: Option<HashMap<String, f64>> = match &args.from_file {
        Some(path) => {
            let file = std::fs::File::open(path).map_err(|e| format!("{}: {e}", path.display()))?;
            Some(read_scores(io::BufReader::new(file)).map_err(|e| e.to_string())?.into_iter().collect())
        }
        None => None,
    };
    let stdin = io::stdin().lock();
    let mut lines = stdin.lines();
    match lines.next() {
        Some(Ok(h)) if h == PROTOCOL_HEADER => {}
        other => return Err(format!("expected protocol header, got {other:?}")),
    }
    let mut out = Vec::new();
    for line in lines {
        let line = line.map_err(|e| e.to_string())?;
        let fields: Vec<&str> = line.split('\t').collect();
        let [id, src, mt, reference] = fields[..] else {
            return Err(format!("malformed request line `{line}`"));
        };
        let score = match (&table, args.constant) {
            (Some(t), _) => *t.get(id).ok_or_else(|| format!("no score for `{id}`"))?,
            (None, Some(c)) => c,
            (None, None) => length_ratio(mt, if reference.is_empty() { src } else { reference }),
        };
        out.push((id.to_string(), score));
    }
    if args.fail {
        return Err("failing on request".into());
    }
    if args.reverse {
        out.reverse();
    }
    if args.shuffle {
        out.sort_by_key(|(id, _)| fnv1a(id));
    }
    let mut w = BufWriter::new(io::stdout().lock());
    for (id, score) in out {
        writeln!(w, "{id}\t{score}").map_err(|e| e.to_string())?;
    }
    w.flush().map_err(|e| e.to_string())
}

fn main() -> ExitCode {
    match run(&Args::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("longspan-demo-scorer: {e}");
            ExitCode::from(3)
        }
    }
}
