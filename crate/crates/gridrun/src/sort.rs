//! External sort for the shuffle: buffered runs spilled to disk, then a
//! streaming k-way merge.

use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::EngineError;

/// One `key<TAB>value` pair from a shuffle file.
pub(crate) type Pair = (String, String);

pub(crate) fn parse_pair(line: &str, path: &Path) -> Result<Pair, EngineError> {
    match line.split_once('\t') {
        Some((k, v)) => Ok((k.to_string(), v.to_string())),
        None => Err(EngineError::MalformedShuffle {
            path: path.to_path_buf(),
        }),
    }
}

/// Sorts all pairs found in `inputs` by (key, value), spilling sorted runs
/// once `buffer_pairs` is exceeded, and streams the merged result to `f`.
///
/// `f` receives pairs in ascending (key, value) order. Missing input files
/// are skipped: a map task that emitted nothing for a partition writes no
/// file.
pub(crate) fn sort_pairs<F>(
    inputs: &[PathBuf],
    run_prefix: &Path,
    buffer_pairs: usize,
    mut f: F,
) -> Result<(), EngineError>
where
    F: FnMut(Pair) -> Result<(), EngineError>,
{
    let mut buffer: Vec<Pair> = Vec::new();
    let mut runs: Vec<PathBuf> = Vec::new();

    for input in inputs {
        if !input.exists() {
            continue;
        }
        let file = File::open(input).map_err(EngineError::io(input))?;
        let mut reader = BufReader::with_capacity(1 << 16, file);
        let mut line = String::new();
        loop {
            line.clear();
            let read = reader.read_line(&mut line).map_err(EngineError::io(input))?;
            if read == 0 {
                break;
            }
            while line.ends_with('\n') || line.ends_with('\r') {
                line.pop();
            }
            buffer.push(parse_pair(&line, input)?);
            if buffer.len() >= buffer_pairs {
                runs.push(spill_run(&mut buffer, run_prefix, runs.len())?);
            }
        }
    }

    if runs.is_empty() {
        // Everything fit in memory; no merge needed.
        buffer.sort_unstable();
        for pair in buffer.drain(..) {
            f(pair)?;
        }
        return Ok(());
    }

    if !buffer.is_empty() {
        runs.push(spill_run(&mut buffer, run_prefix, runs.len())?);
    }
    merge_runs(&runs, &mut f)?;
    for run in &runs {
        let _ = std::fs::remove_file(run);
    }
    Ok(())
}

fn spill_run(buffer: &mut Vec<Pair>, prefix: &Path, index: usize) -> Result<PathBuf, EngineError> {
    buffer.sort_unstable();
    let path = prefix.with_extension(format!("run{index:05}"));
    let file = File::create(&path).map_err(EngineError::io(&path))?;
    let mut w = BufWriter::new(file);
    for (k, v) in buffer.drain(..) {
        writeln!(w, "{k}\t{v}").map_err(EngineError::io(&path))?;
    }
    w.flush().map_err(EngineError::io(&path))?;
    Ok(path)
}

struct RunReader {
    reader: BufReader<File>,
    path: PathBuf,
}

impl RunReader {
    fn next_pair(&mut self) -> Result<Option<Pair>, EngineError> {
        let mut line = String::new();
        let n = self
            .reader
            .read_line(&mut line)
            .map_err(EngineError::io(&self.path))?;
        if n == 0 {
            return Ok(None);
        }
        while line.ends_with('\n') || line.ends_with('\r') {
            line.pop();
        }
        parse_pair(&line, &self.path).map(Some)
    }
}

fn merge_runs<F>(runs: &[PathBuf], f: &mut F) -> Result<(), EngineError>
where
    F: FnMut(Pair) -> Result<(), EngineError>,
{
    let mut readers = Vec::with_capacity(runs.len());
    for run in runs {
        let file = File::open(run).map_err(EngineError::io(run))?;
        readers.push(RunReader {
            reader: BufReader::new(file),
            path: run.clone(),
        });
    }

    // Min-heap on (key, value); run index breaks ties so ordering is total.
    let mut heap: BinaryHeap<Reverse<(Pair, usize)>> = BinaryHeap::new();
    for (i, reader) in readers.iter_mut().enumerate() {
        if let Some(pair) = reader.next_pair()? {
            heap.push(Reverse((pair, i)));
        }
    }
    while let Some(Reverse((pair, i))) = heap.pop() {
        if let Some(next) = readers[i].next_pair()? {
            heap.push(Reverse((next, i)));
        }
        f(pair)?;
    }
    Ok(())
}
